//! Model checkpoint container.
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`:
//!
//! ```text
//! magic            8 bytes  "UNLQCKPT"
//! version          u32      1
//! width_count      u32      L + 1
//! widths           u32 x (L + 1)
//! weight_bits      u32      0 = weights not quantized
//! activation_bits  u32      0 = activations not quantized
//! calibrated       u8       0 or 1
//! [if calibrated]  f64 x L weight scales, then f64 x (L - 1) activation scales
//! per layer l:     name_len u32, name (UTF-8), weights f64 x (in * out) row-major,
//!                  bias f64 x out
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Calibration, Layer, Model, NetConfig, ParameterSet, QuantPolicy};
use crate::error::{Error, Result};
use crate::quant::QuantSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UNLQCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const NOMINAL_BITS: u32 = 8;

pub fn write_checkpoint<W: Write>(model: &Model, mut out: W) -> Result<()> {
    let cfg = &model.config;
    out.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut out, CHECKPOINT_VERSION)?;
    put_u32(&mut out, cfg.widths.len() as u32)?;
    for &w in &cfg.widths {
        put_u32(&mut out, w as u32)?;
    }
    put_u32(&mut out, cfg.quant.weight_bits.unwrap_or(0))?;
    put_u32(&mut out, cfg.quant.activation_bits.unwrap_or(0))?;
    match &model.calibration {
        None => out.write_all(&[0])?,
        Some(cal) => {
            out.write_all(&[1])?;
            for spec in cal.weights.iter().chain(&cal.activations) {
                put_f64(&mut out, spec.scale())?;
            }
        }
    }
    for layer in model.params.layers() {
        let name = layer.name.as_bytes();
        put_u32(&mut out, name.len() as u32)?;
        out.write_all(name)?;
        for &v in layer.weights.iter() {
            put_f64(&mut out, v)?;
        }
        for &v in layer.bias.iter() {
            put_f64(&mut out, v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = get_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = get_u32(&mut input)? as usize;
    if !(2..=1024).contains(&count) {
        return Err(Error::Format(format!("implausible width count {count}")));
    }
    let widths = (0..count)
        .map(|_| get_u32(&mut input).map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let bits = |b: u32| if b == 0 { None } else { Some(b) };
    let quant = QuantPolicy {
        weight_bits: bits(get_u32(&mut input)?),
        activation_bits: bits(get_u32(&mut input)?),
    };
    let config = NetConfig::new(widths.clone(), quant)?;
    let layers_n = config.num_layers();

    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    let calibration = match flag[0] {
        0 => None,
        1 => {
            let spec =
                |bits: Option<u32>, scale: f64| QuantSpec::new(bits.unwrap_or(NOMINAL_BITS), scale);
            let weights = (0..layers_n)
                .map(|_| spec(quant.weight_bits, get_f64(&mut input)?))
                .collect::<Result<Vec<_>>>()?;
            let activations = (0..layers_n - 1)
                .map(|_| spec(quant.activation_bits, get_f64(&mut input)?))
                .collect::<Result<Vec<_>>>()?;
            Some(Calibration {
                weights,
                activations,
            })
        }
        other => return Err(Error::Format(format!("bad calibration flag {other}"))),
    };

    let mut layers = Vec::with_capacity(layers_n);
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let name_len = get_u32(&mut input)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!("layer name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("layer name is not UTF-8".into()))?;
        let w = (0..fan_in * fan_out)
            .map(|_| get_f64(&mut input))
            .collect::<Result<Vec<_>>>()?;
        let b = (0..fan_out)
            .map(|_| get_f64(&mut input))
            .collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            name,
            weights: Array2::from_shape_vec((fan_in, fan_out), w).expect("sized above"),
            bias: Array1::from(b),
        });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last layer".into()));
    }
    let mut model = Model::new(config, ParameterSet::new(layers)?)?;
    model.calibration = calibration;
    Ok(model)
}

impl Model {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        write_checkpoint(self, &mut buf)?;
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        read_checkpoint(bytes.as_slice())
    }
}

fn put_u32<W: Write>(out: &mut W, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(out: &mut W, v: f64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
