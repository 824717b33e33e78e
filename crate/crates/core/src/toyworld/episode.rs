use rand::Rng;

use super::augment::AugmentationType;
use super::dataset::{Partition, Split, ToyDataset};
use crate::error::{Error, Result};
use crate::profiling::{wrs_sample, SamplerWeights};

/// A training image addressed by class and train-partition index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageRef {
    pub class_id: usize,
    pub index: usize,
}

/// Two base-class images from distinct classes and two distinct
/// augmentation types, plus one seed per augmented view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub first: ImageRef,
    pub second: ImageRef,
    pub aug_a: AugmentationType,
    pub aug_b: AugmentationType,
    /// Seeds for `A(x1)`, `B(x1)`, `A(x2)`, `B(x2)`.
    pub view_seeds: [u64; 4],
}

fn check_base(ds: &ToyDataset) -> Result<()> {
    if ds.classes_of(Split::Base).len() < 2 {
        return Err(Error::InvalidArgument("episodes need at least two base classes".into()));
    }
    for k in ds.classes_of(Split::Base) {
        if ds.images(k, Partition::Train).is_empty() {
            return Err(Error::InvalidArgument(format!("class {k} has an empty train partition")));
        }
    }
    Ok(())
}

/// Draws an episode whose first image is `anchor`.
pub fn sample_episode_with_anchor<R: Rng + ?Sized>(
    ds: &ToyDataset,
    anchor: ImageRef,
    weights: &SamplerWeights,
    rng: &mut R,
) -> Result<Episode> {
    check_base(ds)?;
    let base = ds.classes_of(Split::Base);
    if !base.contains(&anchor.class_id) || anchor.index >= ds.images(anchor.class_id, Partition::Train).len() {
        return Err(Error::InvalidArgument(format!("anchor {anchor:?} is not a base training image")));
    }
    let mut other = base.start + rng.random_range(0..base.len() - 1);
    if other >= anchor.class_id {
        other += 1;
    }
    let second = ImageRef {
        class_id: other,
        index: rng.random_range(0..ds.images(other, Partition::Train).len()),
    };
    let (aug_a, aug_b) = wrs_sample(weights, rng)?;
    let view_seeds = std::array::from_fn(|_| rng.random());
    Ok(Episode {
        first: anchor,
        second,
        aug_a,
        aug_b,
        view_seeds,
    })
}

pub fn sample_episode<R: Rng + ?Sized>(ds: &ToyDataset, weights: &SamplerWeights, rng: &mut R) -> Result<Episode> {
    check_base(ds)?;
    let base = ds.classes_of(Split::Base);
    let class_id = base.start + rng.random_range(0..base.len());
    let anchor = ImageRef {
        class_id,
        index: rng.random_range(0..ds.images(class_id, Partition::Train).len()),
    };
    sample_episode_with_anchor(ds, anchor, weights, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::dataset::{generate_dataset, DatasetConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(k: usize) -> ToyDataset {
        generate_dataset(&DatasetConfig {
            num_classes: k,
            per_class_count: 24,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn four_classes_pair_is_zero_one() {
        let ds = dataset(4);
        let w = SamplerWeights::uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let e = sample_episode(&ds, &w, &mut rng).unwrap();
            let mut pair = [e.first.class_id, e.second.class_id];
            pair.sort();
            assert_eq!(pair, [0, 1]);
            assert_ne!(e.aug_a, e.aug_b);
        }
    }

    #[test]
    fn never_duplicates_and_stays_in_base() {
        let ds = dataset(8);
        let w = SamplerWeights::uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let e = sample_episode(&ds, &w, &mut rng).unwrap();
            assert_ne!(e.first.class_id, e.second.class_id);
            assert_ne!(e.aug_a, e.aug_b);
            assert!(e.first.class_id < 4 && e.second.class_id < 4);
            assert!(e.second.index < 16);
        }
    }

    #[test]
    fn degenerate_sampler_rejected() {
        let ds = dataset(4);
        let mut probs = [0.0; 14];
        probs[3] = 1.0;
        let w = SamplerWeights::from_probs(probs, 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_episode(&ds, &w, &mut rng).is_err());
    }

    #[test]
    fn new_class_anchor_rejected() {
        let ds = dataset(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let anchor = ImageRef { class_id: 5, index: 0 };
        assert!(sample_episode_with_anchor(&ds, anchor, &SamplerWeights::uniform(), &mut rng).is_err());
    }

    #[test]
    fn seeded_sampling_repeats() {
        let ds = dataset(8);
        let w = SamplerWeights::uniform();
        let a = sample_episode(&ds, &w, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_episode(&ds, &w, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
