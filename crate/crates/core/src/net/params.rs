use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer. `weights` is `in x out`, so a layer computes `x . W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.name.clone(), self.fan_in(), self.fan_out())
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }

    fn weights_slice(&self) -> &[f64] {
        self.weights
            .as_slice()
            .expect("layer arrays are kept in standard layout")
    }

    fn bias_slice(&self) -> &[f64] {
        self.bias.as_slice().expect("contiguous bias")
    }
}

/// A named, contiguous block of parameters: one weight matrix or one bias
/// vector. Gradient projection works unit by unit.
#[derive(Debug, Clone, Copy)]
pub struct Unit<'a> {
    pub layer: &'a str,
    pub is_bias: bool,
    pub values: &'a [f64],
}

impl Unit<'_> {
    pub fn name(&self) -> String {
        format!(
            "{}.{}",
            self.layer,
            if self.is_bias { "bias" } else { "weight" }
        )
    }
}

fn units_of(layers: &[Layer]) -> Vec<Unit<'_>> {
    layers
        .iter()
        .flat_map(|l| {
            [
                Unit {
                    layer: &l.name,
                    is_bias: false,
                    values: l.weights_slice(),
                },
                Unit {
                    layer: &l.name,
                    is_bias: true,
                    values: l.bias_slice(),
                },
            ]
        })
        .collect()
}

fn units_mut_of(layers: &mut [Layer]) -> Vec<&mut [f64]> {
    layers
        .iter_mut()
        .flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("contiguous bias"),
            ]
        })
        .collect()
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    units_of(layers)
        .iter()
        .flat_map(|u| u.values.iter().copied())
        .collect()
}

fn fill_from_flat(layers: &mut [Layer], flat: &[f64]) -> Result<()> {
    let total: usize = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    if flat.len() != total {
        return Err(Error::ShapeMismatch(format!(
            "flat vector has {} entries, structure needs {total}",
            flat.len()
        )));
    }
    let mut offset = 0;
    for unit in units_mut_of(layers) {
        let n = unit.len();
        unit.copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

fn check_finite(layers: &[Layer]) -> Result<()> {
    let mut index = 0;
    for unit in units_of(layers) {
        for &value in unit.values {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            index += 1;
        }
    }
    Ok(())
}

/// Latent full-precision weights of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    layers: Vec<Layer>,
}

impl ParameterSet {
    /// Layers must chain: the output width of each layer is the input width of the next.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch(
                "network needs at least one layer".into(),
            ));
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}: bias has {} entries for {} outputs",
                    l.name,
                    l.bias.len(),
                    l.fan_out()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} outputs {} but layer {} takes {}",
                    pair[0].name,
                    pair[0].fan_out(),
                    pair[1].name,
                    pair[1].fan_in()
                )));
            }
        }
        // Normalize to standard layout so unit slices are always available.
        let layers = layers
            .into_iter()
            .map(|l| Layer {
                weights: l.weights.as_standard_layout().into_owned(),
                bias: l.bias.as_standard_layout().into_owned(),
                name: l.name,
            })
            .collect::<Vec<_>>();
        check_finite(&layers)?;
        Ok(Self { layers })
    }

    /// Glorot-uniform weights in `(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "need at least input and output widths".into(),
            ));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(format!("fc{i}"), fan_in, fan_out);
                layer.weights.mapv_inplace(|_| rng.gen_range(-a..a));
                layer
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn units(&self) -> Vec<Unit<'_>> {
        units_of(&self.layers)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Layer::fan_out));
        w
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        fill_from_flat(&mut self.layers, flat)
    }

    /// `theta <- theta - step * grads`.
    pub fn descend(&mut self, grads: &GradientSet, step: f64) -> Result<()> {
        self.ensure_congruent(grads)?;
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weights.scaled_add(-step, &g.weights);
            p.bias.scaled_add(-step, &g.bias);
        }
        Ok(())
    }

    pub fn ensure_congruent(&self, grads: &GradientSet) -> Result<()> {
        let ok = self.layers.len() == grads.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(a, b)| a.same_shape(b));
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "gradient does not match parameter layout".into(),
            ))
        }
    }

    pub fn is_finite(&self) -> bool {
        check_finite(&self.layers).is_ok()
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Per-layer gradient arrays, structured exactly like a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// Builds a gradient with the layout of `template` from a flat vector.
    pub fn from_flat(template: &GradientSet, flat: &[f64]) -> Result<Self> {
        let mut out = template.clone();
        fill_from_flat(&mut out.layers, flat)?;
        Ok(out)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let params = ParameterSet::new(layers)?;
        Ok(Self {
            layers: params.layers,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn units(&self) -> Vec<Unit<'_>> {
        units_of(&self.layers)
    }

    pub fn units_mut(&mut self) -> Vec<&mut [f64]> {
        units_mut_of(&mut self.layers)
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn congruent(&self, other: &GradientSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
    }

    pub fn dot(&self, other: &GradientSet) -> f64 {
        self.units()
            .iter()
            .zip(other.units())
            .map(|(a, b)| dot(a.values, b.values))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &GradientSet, factor: f64) -> GradientSet {
        let mut out = self.clone();
        for (a, b) in out.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(factor, &b.weights);
            a.bias.scaled_add(factor, &b.bias);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> GradientSet {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        check_finite(&self.layers).is_ok()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
