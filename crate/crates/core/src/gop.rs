//! Gradient orthogonal projection.
//!
//! The forgetting gradient `g_f` is stripped of its component along the
//! retain gradient `g_r`, either over the whole flattened parameter vector
//! ([`project_global`]) or independently per projection unit after
//! normalizing both gradients ([`project_layerwise`]). Every weight matrix
//! and every bias vector is its own unit.
//!
//! `alpha` interpolates between no projection (`0`) and full
//! orthogonalization (`1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::params::dot;
use crate::net::GradientSet;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    Global,
    #[default]
    Layerwise,
}

impl std::str::FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "layerwise" => Ok(Self::Layerwise),
            other => Err(Error::Config(format!(
                "unknown projection mode {other:?} (expected global or layerwise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub mode: ProjectionMode,
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            mode: ProjectionMode::Layerwise,
            alpha: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A projected forgetting gradient plus the units where `g_r` was too small
/// to project against (those pass through unchanged).
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub grads: GradientSet,
    pub degenerate_units: Vec<String>,
}

impl Projected {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_units.is_empty()
    }
}

fn ensure_congruent(g_f: &GradientSet, g_r: &GradientSet) -> Result<()> {
    if g_f.congruent(g_r) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(
            "forget and retain gradients differ in layout".into(),
        ))
    }
}

/// `g_f - alpha * <g_f, g_r> / |g_r|^2 * g_r` over the flattened vectors.
pub fn project_global(
    g_f: &GradientSet,
    g_r: &GradientSet,
    alpha: f64,
    epsilon: f64,
) -> Result<Projected> {
    ensure_congruent(g_f, g_r)?;
    let nr2 = g_r.dot(g_r);
    if nr2.sqrt() <= epsilon {
        return Ok(Projected {
            grads: g_f.clone(),
            degenerate_units: vec!["*".into()],
        });
    }
    let coeff = g_f.dot(g_r) / nr2;
    Ok(Projected {
        grads: g_f.add_scaled(g_r, -alpha * coeff),
        degenerate_units: Vec::new(),
    })
}

/// Per unit: normalize both gradients by `norm + epsilon`, remove
/// `alpha` times the component along the normalized retain gradient, and
/// rescale by the original forgetting-gradient norm.
pub fn project_layerwise(
    g_f: &GradientSet,
    g_r: &GradientSet,
    cfg: &ProjectionConfig,
) -> Result<Projected> {
    ensure_congruent(g_f, g_r)?;
    cfg.validate()?;
    let eps = cfg.epsilon;
    let mut out = g_f.clone();
    let mut degenerate_units = Vec::new();
    let names: Vec<String> = g_f.units().iter().map(|u| u.name()).collect();
    for ((dst, r), name) in out.units_mut().into_iter().zip(g_r.units()).zip(names) {
        let r = r.values;
        let nr = dot(r, r).sqrt();
        if nr <= eps {
            degenerate_units.push(name);
            continue;
        }
        let nf = dot(dst, dst).sqrt();
        let (sf, sr) = (1.0 / (nf + eps), 1.0 / (nr + eps));
        // <g~_f, g~_r> / |g~_r|^2. The divisor differs from 1 only by O(eps)
        // but keeps alpha = 1 exactly orthogonal for small |g_r|.
        let c = dot(dst, r) * sf * sr / (nr * sr).powi(2);
        for (d, &rv) in dst.iter_mut().zip(r) {
            *d = (*d * sf - cfg.alpha * c * rv * sr) * nf;
        }
    }
    Ok(Projected {
        grads: out,
        degenerate_units,
    })
}

/// Dispatches on `cfg.mode`.
pub fn project(g_f: &GradientSet, g_r: &GradientSet, cfg: &ProjectionConfig) -> Result<Projected> {
    cfg.validate()?;
    match cfg.mode {
        ProjectionMode::Global => project_global(g_f, g_r, cfg.alpha, cfg.epsilon),
        ProjectionMode::Layerwise => project_layerwise(g_f, g_r, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitConflict {
    pub name: String,
    pub dot: f64,
    pub norm_forget: f64,
    pub norm_retain: f64,
    pub cosine: f64,
    pub degenerate: bool,
}

/// Geometry of a forget/retain gradient pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictDiagnostics {
    pub units: Vec<UnitConflict>,
    pub dot: f64,
    pub norm_forget: f64,
    pub norm_retain: f64,
    pub cosine: f64,
    /// Angle between the flattened gradients, radians.
    pub angle: f64,
    /// `<g_f, g_f_perp>` with the full global projection.
    pub forget_dot_projected: f64,
    /// `|g_f|^2 sin^2(angle)`.
    pub sin2_closed_form: f64,
    pub degenerate: bool,
}

impl ConflictDiagnostics {
    pub fn conflicted(&self) -> bool {
        self.dot < 0.0
    }

    pub fn conflicted_units(&self) -> usize {
        self.units.iter().filter(|u| u.dot < 0.0).count()
    }
}

fn cosine(dot: f64, a: f64, b: f64) -> (f64, bool) {
    if a == 0.0 || b == 0.0 {
        (0.0, true)
    } else {
        ((dot / (a * b)).clamp(-1.0, 1.0), false)
    }
}

pub fn diagnostics(g_f: &GradientSet, g_r: &GradientSet) -> Result<ConflictDiagnostics> {
    ensure_congruent(g_f, g_r)?;
    let units = g_f
        .units()
        .iter()
        .zip(g_r.units())
        .map(|(f, r)| {
            let d = dot(f.values, r.values);
            let nf = dot(f.values, f.values).sqrt();
            let nr = dot(r.values, r.values).sqrt();
            let (cosine, degenerate) = cosine(d, nf, nr);
            UnitConflict {
                name: f.name(),
                dot: d,
                norm_forget: nf,
                norm_retain: nr,
                cosine,
                degenerate,
            }
        })
        .collect();
    let d = g_f.dot(g_r);
    let nf2 = g_f.dot(g_f);
    let nr2 = g_r.dot(g_r);
    let (nf, nr) = (nf2.sqrt(), nr2.sqrt());
    let (cos, degenerate) = cosine(d, nf, nr);
    let forget_dot_projected = if nr2 > 0.0 {
        let perp = g_f.add_scaled(g_r, -d / nr2);
        g_f.dot(&perp)
    } else {
        nf2
    };
    Ok(ConflictDiagnostics {
        units,
        dot: d,
        norm_forget: nf,
        norm_retain: nr,
        cosine: cos,
        angle: cos.acos(),
        forget_dot_projected,
        sin2_closed_form: nf2 * (1.0 - cos * cos),
        degenerate,
    })
}
