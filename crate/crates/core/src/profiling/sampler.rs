use rand::Rng;

use super::silhouette::SilhouetteReport;
use crate::error::{Error, Result};
use crate::toyworld::{AugmentationType, NUM_AUGMENTATIONS};

/// Sampling distribution over the fourteen augmentation types.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerWeights {
    probs: [f64; NUM_AUGMENTATIONS],
    pub temperature: f64,
    pub epoch_index: usize,
    /// Types absent from the report, given the overall mean score.
    pub imputed: Vec<AugmentationType>,
}

impl Default for SamplerWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl SamplerWeights {
    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / NUM_AUGMENTATIONS as f64; NUM_AUGMENTATIONS],
            temperature: 1.0,
            epoch_index: 0,
            imputed: Vec::new(),
        }
    }

    /// Arbitrary non-negative distribution. Zero entries are allowed here so
    /// that degenerate samplers can be represented and rejected at draw time.
    pub fn from_probs(probs: [f64; NUM_AUGMENTATIONS], temperature: f64, epoch_index: usize) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("sampler weights must be finite and >= 0".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("sampler weights sum to {total}, not 1")));
        }
        Ok(Self {
            probs,
            temperature,
            epoch_index,
            imputed: Vec::new(),
        })
    }

    pub fn probs(&self) -> &[f64; NUM_AUGMENTATIONS] {
        &self.probs
    }

    pub fn prob(&self, aug: AugmentationType) -> f64 {
        self.probs[aug.index()]
    }

    /// Zeroes every type outside `allowed` and renormalises. An empty
    /// `allowed` keeps all types.
    pub fn restricted(mut self, allowed: &[AugmentationType]) -> Result<Self> {
        if allowed.is_empty() {
            return Ok(self);
        }
        for (i, p) in self.probs.iter_mut().enumerate() {
            if !allowed.contains(&AugmentationType::ALL[i]) {
                *p = 0.0;
            }
        }
        let total: f64 = self.probs.iter().sum();
        if self.probs.iter().filter(|&&p| p > 0.0).count() < 2 || total <= 0.0 {
            return Err(Error::InvalidArgument("restricted sampler needs at least 2 types".into()));
        }
        self.probs.iter_mut().for_each(|p| *p /= total);
        Ok(self)
    }

    pub fn with_epoch(mut self, epoch: usize) -> Self {
        self.epoch_index = epoch;
        self
    }
}

/// `w_t = softmax(-score_t / temperature)`: poorly separated augmentation
/// types are drawn more often.
pub fn wrs_weights(report: &SilhouetteReport, temperature: f64) -> Result<SamplerWeights> {
    weights_from_report(report, temperature, false)
}

/// As [`wrs_weights`], but scores are standardised (zero mean, unit
/// variance across types) before inversion.
pub fn wrs_weights_standardized(report: &SilhouetteReport, temperature: f64) -> Result<SamplerWeights> {
    weights_from_report(report, temperature, true)
}

fn weights_from_report(report: &SilhouetteReport, temperature: f64, standardize: bool) -> Result<SamplerWeights> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    if !report.overall.is_finite() || report.per_type.values().any(|c| !c.mean.is_finite()) {
        return Err(Error::NonFinite { op: "wrs_weights" });
    }
    let mut imputed = Vec::new();
    let mut scores: Vec<f64> = AugmentationType::ALL
        .iter()
        .map(|&a| {
            report.score(a).unwrap_or_else(|| {
                imputed.push(a);
                report.overall
            })
        })
        .collect();
    if standardize {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        scores.iter_mut().for_each(|s| *s = if sd > 0.0 { (*s - mean) / sd } else { 0.0 });
    }
    let logits: Vec<f64> = scores.iter().map(|s| -s / temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut probs = [0.0; NUM_AUGMENTATIONS];
    probs.iter_mut().zip(&exps).for_each(|(p, e)| *p = e / z);
    Ok(SamplerWeights {
        probs,
        temperature,
        epoch_index: 0,
        imputed,
    })
}

fn draw<R: Rng + ?Sized>(probs: &[f64], exclude: Option<usize>, rng: &mut R) -> usize {
    let total: f64 = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, p)| p)
        .sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if Some(i) == exclude || p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if target < acc {
            return i;
        }
    }
    last.expect("at least one eligible type")
}

/// Draws two distinct augmentation types. The second is drawn from the
/// weights renormalised over the remaining types.
pub fn wrs_sample<R: Rng + ?Sized>(
    weights: &SamplerWeights,
    rng: &mut R,
) -> Result<(AugmentationType, AugmentationType)> {
    if weights.probs.iter().filter(|&&p| p > 0.0).count() < 2 {
        return Err(Error::InvalidArgument(
            "cannot draw two distinct augmentation types: fewer than 2 have positive weight".into(),
        ));
    }
    let first = draw(&weights.probs, None, rng);
    let second = draw(&weights.probs, Some(first), rng);
    Ok((
        AugmentationType::ALL[first],
        AugmentationType::ALL[second],
    ))
}

/// Closed-form probability that each type appears in a drawn pair.
pub fn pair_inclusion_probabilities(weights: &SamplerWeights) -> [f64; NUM_AUGMENTATIONS] {
    let p = &weights.probs;
    std::array::from_fn(|t| {
        let as_second: f64 = (0..NUM_AUGMENTATIONS)
            .filter(|&s| s != t && p[s] < 1.0)
            .map(|s| p[s] * p[t] / (1.0 - p[s]))
            .sum();
        p[t] + as_second
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiling::silhouette::ClusterScore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn report(scores: &[f64]) -> SilhouetteReport {
        let per_type: BTreeMap<_, _> = AugmentationType::ALL
            .iter()
            .zip(scores)
            .map(|(&a, &s)| (a, ClusterScore { mean: s, count: 10 }))
            .collect();
        let overall = scores.iter().sum::<f64>() / scores.len() as f64;
        SilhouetteReport { per_type, overall }
    }

    #[test]
    fn equal_scores_uniform() {
        let w = wrs_weights(&report(&[0.3; 14]), 1.0).unwrap();
        for &p in w.probs() {
            assert!((p - 1.0 / 14.0).abs() < 1e-15);
        }
    }

    #[test]
    fn best_separated_type_gets_unique_minimum() {
        let mut scores = [0.1; 14];
        scores[5] = 0.9;
        let w = wrs_weights(&report(&scores), 1.0).unwrap();
        let min = w.probs().iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(w.probs()[5], min);
        assert_eq!(w.probs().iter().filter(|&&p| p == min).count(), 1);
    }

    #[test]
    fn ratio_matches_closed_form() {
        let scores: Vec<f64> = (0..14).map(|i| -0.4 + 0.07 * i as f64).collect();
        for t in [0.5, 1.0, 3.0] {
            let w = wrs_weights(&report(&scores), t).unwrap();
            let ratio = w.probs()[2] / w.probs()[9];
            let expected = ((scores[9] - scores[2]) / t).exp();
            assert!((ratio - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn missing_types_imputed_with_overall() {
        let mut r = report(&[0.2; 14]);
        r.per_type.remove(&AugmentationType::Hue);
        r.overall = 0.2;
        let w = wrs_weights(&r, 1.0).unwrap();
        assert_eq!(w.imputed, vec![AugmentationType::Hue]);
        assert!((w.prob(AugmentationType::Hue) - 1.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_scores_rejected() {
        let mut r = report(&[0.2; 14]);
        r.per_type.get_mut(&AugmentationType::Hue).unwrap().mean = f64::NAN;
        assert!(wrs_weights(&r, 1.0).is_err());
    }

    #[test]
    fn standardized_weights_are_scale_free() {
        let scores: Vec<f64> = (0..14).map(|i| 0.01 * i as f64).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| s * 10.0 + 3.0).collect();
        let a = wrs_weights_standardized(&report(&scores), 1.0).unwrap();
        let b = wrs_weights_standardized(&report(&scaled), 1.0).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_pair() {
        let w = SamplerWeights::uniform();
        let a = wrs_sample(&w, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = wrs_sample(&w, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn concentrated_type_appears_in_almost_every_pair() {
        let mut probs = [0.01 / 13.0; 14];
        probs[4] = 0.99;
        let w = SamplerWeights::from_probs(probs, 1.0, 0).unwrap();
        // closed form: P(type in pair) = 0.99 + sum_s p_s * 0.99 / (1 - p_s)
        let inclusion = pair_inclusion_probabilities(&w)[4];
        assert!(inclusion > 0.98);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let (a, b) = wrs_sample(&w, &mut rng).unwrap();
                a.index() == 4 || b.index() == 4
            })
            .count();
        assert!(hits as f64 / n as f64 > 0.98);
    }

    #[test]
    fn uniform_marginals_within_three_sigma() {
        let w = SamplerWeights::uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut counts = [0usize; 14];
        for _ in 0..n {
            let (a, b) = wrs_sample(&w, &mut rng).unwrap();
            assert_ne!(a, b);
            counts[a.index()] += 1;
        }
        let p = 1.0 / 14.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn restriction_renormalises_and_never_draws_excluded() {
        use AugmentationType::*;
        let w = SamplerWeights::uniform().restricted(&[HFlip, Hue, Cutout]).unwrap();
        assert!((w.prob(Hue) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.prob(VFlip), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (a, b) = wrs_sample(&w, &mut rng).unwrap();
            assert!([HFlip, Hue, Cutout].contains(&a) && [HFlip, Hue, Cutout].contains(&b));
        }
        assert_eq!(SamplerWeights::uniform().restricted(&[]).unwrap(), SamplerWeights::uniform());
        assert!(SamplerWeights::uniform().restricted(&[Hue]).is_err());
    }
}
