//! A small multilayer perceptron with optional fake-quantized weights and
//! activations, plus hand-written reverse-mode gradients.
//!
//! Layer `l` computes `z_l = q(a_l) . q(W_l) + b_l`, with ReLU between
//! layers and raw logits at the end. Weight quantization applies to every
//! weight matrix. Activation quantization applies to the input of every
//! layer after the first; the raw features are left at full precision.
//! Biases are never quantized.

mod checkpoint;
pub(crate) mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{GradientSet, Layer, ParameterSet, Unit};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{logits_loss, LossKind};
use crate::quant::{QuantSpec, SteMask};

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Accepts non-negative entries summing to one within `1e-9`.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::ShapeMismatch(
                "a distribution needs at least 2 classes".into(),
            ));
        }
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::NonFinite { index, value });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!("probabilities sum to {sum}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lowest index among the maxima.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbDist> {
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ProbDist::new(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Which tensor classes are fake-quantized, and at what bit width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuantPolicy {
    pub weight_bits: Option<u32>,
    pub activation_bits: Option<u32>,
}

impl QuantPolicy {
    pub fn full_precision() -> Self {
        Self::default()
    }

    /// Same bit width for weights and activations.
    pub fn uniform(bits: u32) -> Self {
        Self {
            weight_bits: Some(bits),
            activation_bits: Some(bits),
        }
    }

    /// Quantized weights, full-precision activations.
    pub fn weights_only(bits: u32) -> Self {
        Self {
            weight_bits: Some(bits),
            activation_bits: None,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.weight_bits.is_some() || self.activation_bits.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// `[input, hidden..., classes]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub quant: QuantPolicy,
}

impl NetConfig {
    pub fn new(widths: Vec<usize>, quant: QuantPolicy) -> Result<Self> {
        let cfg = Self {
            widths,
            activation: Activation::Relu,
            quant,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(
                "net.widths needs input and output widths".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("net.widths entries must be positive".into()));
        }
        if self.classes() < 2 {
            return Err(Error::Config(
                "the output layer needs at least 2 classes".into(),
            ));
        }
        for bits in [self.quant.weight_bits, self.quant.activation_bits]
            .into_iter()
            .flatten()
        {
            QuantSpec::new(bits, 1.0)?;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Fixed per-tensor quantization grids.
///
/// `activations[l]` is the grid for the input of layer `l + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub weights: Vec<QuantSpec>,
    pub activations: Vec<QuantSpec>,
}

/// Network configuration, latent parameters and (when quantized) the frozen grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    pub params: ParameterSet,
    pub calibration: Option<Calibration>,
}

/// What the backward pass needs from one layer's forward evaluation.
struct LayerTape {
    input: Array2<f64>,
    input_mask: Option<SteMask>,
    weights: Array2<f64>,
    weight_mask: Option<SteMask>,
    pre_activation: Array2<f64>,
}

impl Model {
    pub fn new(config: NetConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        if params.widths() != config.widths {
            return Err(Error::ShapeMismatch(format!(
                "parameters have widths {:?}, config says {:?}",
                params.widths(),
                config.widths
            )));
        }
        Ok(Self {
            config,
            params,
            calibration: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ParameterSet::glorot(&config.widths, rng)?;
        Self::new(config, params)
    }

    /// Min-max calibration of every weight grid from the current latent
    /// weights and of every activation grid from one forward pass over
    /// `batch`. No-op when quantization is off.
    pub fn calibrate(&mut self, batch: ArrayView2<f64>) -> Result<()> {
        let policy = self.config.quant;
        if !policy.is_enabled() {
            self.calibration = None;
            return Ok(());
        }
        self.check_input(batch)?;
        // Unused grids stay at a nominal spec so the layout is uniform.
        let nominal = QuantSpec::new(8, 1.0)?;
        let weights = self
            .params
            .layers()
            .iter()
            .map(|l| match policy.weight_bits {
                Some(bits) => QuantSpec::calibrate(bits, l.weights.iter().copied()),
                None => Ok(nominal),
            })
            .collect::<Result<Vec<_>>>()?;
        self.calibration = Some(Calibration {
            weights,
            activations: vec![nominal; self.config.num_layers() - 1],
        });
        if let Some(bits) = policy.activation_bits {
            // Each activation grid is fit to the activations produced by the
            // already-quantized layers below it.
            for l in 1..self.config.num_layers() {
                let tapes = self.run_forward(batch, Some(l))?.1;
                let produced = relu(&tapes[l - 1].pre_activation);
                let spec = QuantSpec::calibrate(bits, produced.iter().copied())?;
                self.calibration.as_mut().expect("set above").activations[l - 1] = spec;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.config.inputs()
            )));
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(())
    }

    /// Logits `[batch x K]`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.run_forward(x, None)?.0)
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<ProbDist>> {
        let logits = self.forward(x)?;
        logits
            .outer_iter()
            .map(|row| softmax(row.as_slice().expect("standard layout")))
            .collect()
    }

    /// Weight matrices as the forward pass uses them (grid values when quantized).
    pub fn effective_weights(&self) -> Result<Vec<Array2<f64>>> {
        (0..self.config.num_layers())
            .map(|l| self.layer_weights(l).map(|(w, _)| w))
            .collect()
    }

    fn layer_weights(&self, l: usize) -> Result<(Array2<f64>, Option<SteMask>)> {
        let latent = &self.params.layers()[l].weights;
        match self.config.quant.weight_bits {
            None => Ok((latent.clone(), None)),
            Some(_) => {
                let spec = self.grids()?.weights[l];
                let (q, mask) = quantize_array(latent, &spec)?;
                Ok((q, Some(mask)))
            }
        }
    }

    fn grids(&self) -> Result<&Calibration> {
        self.calibration
            .as_ref()
            .ok_or_else(|| Error::Config("quantized model used before calibration".into()))
    }

    /// Forward pass keeping what backward needs. With `stop_at = Some(l)`
    /// only layers `0..l` are evaluated (used during calibration).
    fn run_forward(
        &self,
        x: ArrayView2<f64>,
        stop_at: Option<usize>,
    ) -> Result<(Array2<f64>, Vec<LayerTape>)> {
        let n_layers = stop_at.unwrap_or(self.config.num_layers());
        let mut tapes = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for l in 0..n_layers {
            let (input, input_mask) = match (l, self.config.quant.activation_bits) {
                (0, _) | (_, None) => (a, None),
                (_, Some(_)) => {
                    let spec = self.grids()?.activations[l - 1];
                    let (q, mask) = quantize_array(&a, &spec)?;
                    (q, Some(mask))
                }
            };
            let (weights, weight_mask) = self.layer_weights(l)?;
            let z = input.dot(&weights) + &self.params.layers()[l].bias;
            a = if l + 1 < self.config.num_layers() {
                relu(&z)
            } else {
                z.clone()
            };
            tapes.push(LayerTape {
                input,
                input_mask,
                weights,
                weight_mask,
                pre_activation: z,
            });
        }
        Ok((a, tapes))
    }

    /// Loss and gradient with respect to the latent parameters. Gradients
    /// flow through every quantizer with straight-through semantics.
    pub fn grad(
        &self,
        x: ArrayView2<f64>,
        labels: Option<&[usize]>,
        kind: LossKind,
    ) -> Result<(f64, GradientSet)> {
        if x.nrows() == 0 {
            return Err(Error::Empty("gradient batch"));
        }
        self.check_input(x)?;
        let (logits, tapes) = self.run_forward(x, None)?;
        let (loss, dlogits) = logits_loss(kind, logits.view(), labels)?;

        let mut grads = GradientSet::zeros_like(&self.params);
        let mut dz = dlogits;
        for l in (0..tapes.len()).rev() {
            let tape = &tapes[l];
            let layer = &mut grads.layers_mut()[l];
            let mut dw = tape.input.t().dot(&dz);
            if let Some(mask) = &tape.weight_mask {
                mask.apply_in_place(dw.as_slice_mut().expect("standard layout"));
            }
            layer.weights = dw;
            layer.bias = dz.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let mut da = dz.dot(&tape.weights.t());
            if let Some(mask) = &tape.input_mask {
                let da_std = da.as_standard_layout().into_owned();
                da = da_std;
                mask.apply_in_place(da.as_slice_mut().expect("standard layout"));
            }
            let below = &tapes[l - 1].pre_activation;
            da.zip_mut_with(below, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            dz = da;
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                index: 0,
                value: f64::NAN,
            });
        }
        Ok((loss, grads))
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

fn quantize_array(x: &Array2<f64>, spec: &QuantSpec) -> Result<(Array2<f64>, SteMask)> {
    let standard = x.as_standard_layout();
    let (q, mask) = crate::quant::quantize(standard.as_slice().expect("standard layout"), spec)?;
    let q = Array2::from_shape_vec(x.dim(), q).expect("same element count");
    Ok((q, mask))
}

/// Row vector helper for single-sample evaluation.
pub fn row(x: &[f64]) -> Array2<f64> {
    Array1::from(x.to_vec()).insert_axis(Axis(0))
}
