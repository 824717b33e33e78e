//! Classification and delta-token losses, recorded on a [`Tape`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Var};
use crate::promptcore::DeltaMetaToken;

/// Probabilities below this are clamped before the log in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConstraintMode {
    /// Single anchor: `T(1B, 2B, 1A)`.
    #[serde(rename = "c2")]
    Constraints2,
    /// Two anchors: `T(1A, 2A, 1B) + T(2B, 1B, 2A)`.
    #[default]
    #[serde(rename = "c4")]
    Constraints4,
}

impl ConstraintMode {
    pub fn label(self) -> &'static str {
        match self {
            ConstraintMode::Constraints2 => "c2",
            ConstraintMode::Constraints4 => "c4",
        }
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2" | "constraints2" => Ok(ConstraintMode::Constraints2),
            "c4" | "constraints4" => Ok(ConstraintMode::Constraints4),
            other => Err(Error::Config(format!("unknown constraint mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
    pub constraint_mode: ConstraintMode,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            constraint_mode: ConstraintMode::Constraints4,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be finite and >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        Ok(())
    }
}

/// Delta tokens of two classes (1, 2) under two augmentations (A, B).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaGrid<T> {
    pub d1a: T,
    pub d1b: T,
    pub d2a: T,
    pub d2b: T,
}

impl DeltaGrid<Vec<f64>> {
    /// Arranges four labelled tokens into a grid, checking that they cover
    /// exactly two classes and two augmentations.
    pub fn from_tokens(tokens: &[DeltaMetaToken]) -> Result<Self> {
        let incomplete = || Error::InvalidArgument("delta tokens do not form a 2x2 class/augmentation grid".into());
        let [first, ..] = tokens else {
            return Err(incomplete());
        };
        if tokens.len() != 4 {
            return Err(incomplete());
        }
        let c1 = first.class_id;
        let a = first.augmentation;
        let c2 = tokens.iter().map(|t| t.class_id).find(|&c| c != c1).ok_or_else(incomplete)?;
        let b = tokens.iter().map(|t| t.augmentation).find(|&x| x != a).ok_or_else(incomplete)?;
        let pick = |c, aug| {
            let mut hits = tokens.iter().filter(|t| t.class_id == c && t.augmentation == aug);
            match (hits.next(), hits.next()) {
                (Some(t), None) => Ok(t.delta.clone()),
                _ => Err(incomplete()),
            }
        };
        Ok(Self {
            d1a: pick(c1, a)?,
            d1b: pick(c1, b)?,
            d2a: pick(c2, a)?,
            d2b: pick(c2, b)?,
        })
    }

    pub fn to_tape(&self, tape: &mut Tape) -> Result<DeltaGrid<Var>> {
        Ok(DeltaGrid {
            d1a: tape.constant_vector(&self.d1a)?,
            d1b: tape.constant_vector(&self.d1b)?,
            d2a: tape.constant_vector(&self.d2a)?,
            d2b: tape.constant_vector(&self.d2b)?,
        })
    }
}

/// `-ln(probs[label])`, with the probability clamped at [`PROB_FLOOR`]. The
/// tape counts clamp events.
pub fn cross_entropy(tape: &mut Tape, probs: Var, label: usize) -> Result<Var> {
    let n = tape.shape(probs).first().copied().unwrap_or(0);
    if tape.shape(probs).len() != 1 || label >= n {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for distribution of shape {:?}",
            tape.shape(probs)
        )));
    }
    let p = tape.slice(probs, label, label + 1)?;
    let p = tape.sum(p)?;
    let logp = tape.log_clamped(p, PROB_FLOOR)?;
    tape.scale(logp, -1.0)
}

/// `max(0, |a - p| - |a - n| + margin)`.
pub fn triplet(tape: &mut Tape, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
    let dp = tape.euclidean_distance(anchor, positive)?;
    let dn = tape.euclidean_distance(anchor, negative)?;
    let gap = tape.sub(dp, dn)?;
    let gap = tape.add_scalar(gap, margin)?;
    tape.relu(gap)
}

/// Positives share the augmentation, negatives share the class.
pub fn adtriplet(tape: &mut Tape, grid: &DeltaGrid<Var>, cfg: &TripletConfig) -> Result<Var> {
    cfg.validate()?;
    let m = cfg.margin;
    match cfg.constraint_mode {
        ConstraintMode::Constraints2 => triplet(tape, grid.d1b, grid.d2b, grid.d1a, m),
        ConstraintMode::Constraints4 => {
            let first = triplet(tape, grid.d1a, grid.d2a, grid.d1b, m)?;
            let second = triplet(tape, grid.d2b, grid.d1b, grid.d2a, m)?;
            tape.add(first, second)
        }
    }
}

/// `alpha * adtriplet + beta * ce`. With `alpha = 0` the AdTriplet term is
/// left out of the graph entirely.
pub fn total_loss(tape: &mut Tape, ce: Var, adtriplet: Var, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    if !tape.item(ce).is_finite() || !tape.item(adtriplet).is_finite() {
        return Err(Error::NonFinite { op: "total_loss" });
    }
    let ce_term = tape.scale(ce, weights.beta)?;
    if weights.alpha == 0.0 {
        return Ok(ce_term);
    }
    let adt_term = tape.scale(adtriplet, weights.alpha)?;
    tape.add(adt_term, ce_term)
}

/// Value-only form of [`triplet`].
pub fn triplet_value(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant_vector(anchor)?;
    let p = tape.constant_vector(positive)?;
    let n = tape.constant_vector(negative)?;
    let t = triplet(&mut tape, a, p, n, margin)?;
    Ok(tape.item(t))
}

/// Value-only form of [`adtriplet`].
pub fn adtriplet_value(grid: &DeltaGrid<Vec<f64>>, cfg: &TripletConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let g = grid.to_tape(&mut tape)?;
    let t = adtriplet(&mut tape, &g, cfg)?;
    Ok(tape.item(t))
}
