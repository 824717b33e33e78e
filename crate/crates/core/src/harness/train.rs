use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::ExperimentConfig;
use super::metrics::{harmonic_mean, EpochMetrics, RunMetrics};
use crate::error::{Error, Result};
use crate::losses::{adtriplet, cross_entropy, total_loss, DeltaGrid};
use crate::numcore::{Sgd, Tape, Var};
use crate::profiling::{
    wrs_weights, wrs_weights_standardized, EmbeddingRecord, SamplerWeights, SilhouetteReport,
};
use crate::promptcore::{DeltaVariant, ModelVars, PromptModel};
use crate::seed::{self, Stream};
use crate::toyworld::{
    apply_augmentation, generate_dataset, sample_episode_with_anchor, AugmentationType, Episode, FrozenEncoders,
    ImageRef, Partition, Split, ToyDataset, ToyImage,
};

/// Dataset, frozen encoders and cached features for one configuration.
/// Everything here is immutable once built.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    dataset: Arc<ToyDataset>,
    encoders: Arc<FrozenEncoders>,
    /// `train_features[class][index]` for base classes only.
    train_features: Vec<Vec<Vec<f64>>>,
    profile_set: ProfileSet,
}

/// Fixed validation views used to profile delta tokens every epoch.
#[derive(Debug, Clone)]
struct ProfileSet {
    /// Class and un-augmented feature per profiled image.
    originals: Vec<(usize, Vec<f64>)>,
    /// `augmented[t][i]`: feature of image `i` under augmentation type `t`.
    augmented: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ce: f64,
    pub adtriplet: f64,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let master = config.seed();
        let dataset = Arc::new(generate_dataset(&config.dataset_config())?);
        let encoders = Arc::new(FrozenEncoders::new(
            config.encoder_config(),
            seed::derive(master, Stream::Encoders, 0),
        )?);
        let train_features = dataset
            .classes_of(Split::Base)
            .map(|k| {
                dataset
                    .images(k, Partition::Train)
                    .iter()
                    .map(|img| encoders.encode_image(img))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let profile_set = ProfileSet::build(&dataset, &encoders, config.profiling.samples, master)?;
        Ok(Self {
            config: config.clone(),
            dataset,
            encoders,
            train_features,
            profile_set,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dataset(&self) -> &ToyDataset {
        &self.dataset
    }

    pub fn encoders(&self) -> &Arc<FrozenEncoders> {
        &self.encoders
    }

    pub fn init_model(&self) -> Result<PromptModel> {
        let mut rng = seed::rng(self.config.seed(), Stream::Init, 0);
        PromptModel::new(
            self.encoders.clone(),
            self.config.bottleneck_ratio(),
            self.config.model.metanet_up_scale,
            &mut rng,
        )
    }

    fn reference_token(&self, tape: &mut Tape, model: &PromptModel, vars: &ModelVars, img: ImageRef) -> Result<Var> {
        let class = &self.train_features[img.class_id];
        match self.config.training.delta_variant {
            DeltaVariant::SameImage => model.meta_token_var(tape, vars, &class[img.index]),
            DeltaVariant::ClassMean => model.mean_meta_token_var(tape, vars, class),
        }
    }

    fn train_image(&self, r: ImageRef) -> &ToyImage {
        &self.dataset.images(r.class_id, Partition::Train)[r.index]
    }

    /// Features of the four augmented views `Aug_A(x1), Aug_B(x1),
    /// Aug_A(x2), Aug_B(x2)`.
    pub fn episode_features(&self, ep: &Episode) -> Result<Vec<Vec<f64>>> {
        let views = [
            (ep.first, ep.aug_a),
            (ep.first, ep.aug_b),
            (ep.second, ep.aug_a),
            (ep.second, ep.aug_b),
        ];
        views
            .iter()
            .zip(ep.view_seeds)
            .map(|(&(r, aug), s)| self.encoders.encode_image(&apply_augmentation(self.train_image(r), aug, s)))
            .collect()
    }

    /// Records the episode loss on `tape`: four delta tokens, AdTriplet,
    /// and cross-entropy on the `Aug_A(x1)` view conditioned on its own
    /// meta token with base classes as candidates. Returns
    /// `(total, ce, adtriplet)`.
    pub fn episode_loss(
        &self,
        tape: &mut Tape,
        model: &PromptModel,
        vars: &ModelVars,
        ep: &Episode,
        features: &[Vec<f64>],
    ) -> Result<(Var, Var, Var)> {
        if features.len() != 4 {
            return Err(Error::InvalidArgument(format!("episode needs 4 view features, got {}", features.len())));
        }
        let ref1 = self.reference_token(tape, model, vars, ep.first)?;
        let ref2 = self.reference_token(tape, model, vars, ep.second)?;
        let mut tokens = Vec::with_capacity(4);
        let mut deltas = Vec::with_capacity(4);
        for (i, f) in features.iter().enumerate() {
            let pi = model.meta_token_var(tape, vars, f)?;
            let reference = if i < 2 { ref1 } else { ref2 };
            tokens.push(pi);
            deltas.push(tape.sub(pi, reference)?);
        }
        let grid = DeltaGrid {
            d1a: deltas[0],
            d1b: deltas[1],
            d2a: deltas[2],
            d2b: deltas[3],
        };
        let adt = adtriplet(tape, &grid, &self.config.triplet_config())?;

        let base = self.dataset.classes_of(Split::Base);
        let candidates: Vec<usize> = base.clone().collect();
        let logits = model.logits_var(tape, vars, &features[0], tokens[0], &candidates)?;
        let probs = tape.softmax(logits)?;
        let ce = cross_entropy(tape, probs, ep.first.class_id - base.start)?;
        let total = total_loss(tape, ce, adt, &self.config.loss_weights())?;
        Ok((total, ce, adt))
    }

    /// One optimizer step on the episode loss. Also returns the number of
    /// probabilities clamped inside the cross-entropy log.
    pub fn train_episode(&self, model: &mut PromptModel, sgd: &mut Sgd, ep: &Episode) -> Result<(StepLosses, usize)> {
        let features = self.episode_features(ep)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let (total, ce, adt) = self.episode_loss(&mut tape, model, &vars, ep, &features)?;
        let losses = StepLosses {
            total: tape.item(total),
            ce: tape.item(ce),
            adtriplet: tape.item(adt),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }
        tape.backward(total)?;
        model.collect_grads(&tape, &vars)?;
        sgd.step(&mut model.parameters_mut())?;
        Ok((losses, tape.clamp_events()))
    }

    /// Delta tokens of the fixed profiling views under the current model.
    pub fn profile_deltas(&self, model: &PromptModel, epoch: usize) -> Result<Vec<EmbeddingRecord>> {
        let ps = &self.profile_set;
        let originals = ps
            .originals
            .iter()
            .map(|(_, f)| model.meta_token_for_feature(f).map(|t| t.0))
            .collect::<Result<Vec<_>>>()?;
        let references: Vec<Vec<f64>> = match self.config.training.delta_variant {
            DeltaVariant::SameImage => originals,
            DeltaVariant::ClassMean => {
                // class means over the profiled originals of each class
                let k = self.dataset.num_classes();
                let d = model.feature_dim();
                let mut sums = vec![vec![0.0; d]; k];
                let mut counts = vec![0usize; k];
                for ((c, _), t) in ps.originals.iter().zip(&originals) {
                    sums[*c].iter_mut().zip(t).for_each(|(s, v)| *s += v);
                    counts[*c] += 1;
                }
                ps.originals
                    .iter()
                    .map(|(c, _)| sums[*c].iter().map(|s| s / counts[*c] as f64).collect())
                    .collect()
            }
        };
        let mut records = Vec::with_capacity(ps.augmented.len() * ps.originals.len());
        for (aug, feats) in AugmentationType::ALL.iter().zip(&ps.augmented) {
            for ((f, (class_id, _)), reference) in feats.iter().zip(&ps.originals).zip(&references) {
                let pi = model.meta_token_for_feature(f)?;
                records.push(EmbeddingRecord {
                    class_id: *class_id,
                    augmentation: *aug,
                    epoch,
                    values: pi.0.iter().zip(reference).map(|(a, r)| a - r).collect(),
                });
            }
        }
        Ok(records)
    }

    /// Silhouette of the profiling deltas, clustered by augmentation type.
    pub fn profile(&self, model: &PromptModel, epoch: usize) -> Result<(SilhouetteReport, Vec<EmbeddingRecord>)> {
        let records = self.profile_deltas(model, epoch)?;
        let points: Vec<&[f64]> = records.iter().map(|r| r.values.as_slice()).collect();
        let augs: Vec<AugmentationType> = records.iter().map(|r| r.augmentation).collect();
        Ok((SilhouetteReport::from_points(&points, &augs)?, records))
    }

    fn sampler_after(&self, report: &SilhouetteReport, epoch: usize) -> Result<SamplerWeights> {
        let p = &self.config.profiling;
        let w = if p.standardize {
            wrs_weights_standardized(report, p.temperature)?
        } else {
            wrs_weights(report, p.temperature)?
        };
        Ok(w.with_epoch(epoch))
    }

    fn epoch_row(
        &self,
        model: &PromptModel,
        epoch: usize,
        losses: Option<StepLosses>,
        sampler: &SamplerWeights,
    ) -> Result<(EpochMetrics, SilhouetteReport)> {
        let (report, _) = self.profile(model, epoch)?;
        let base = 100.0 * evaluate(model, &self.dataset, Split::Base)?;
        let new = 100.0 * evaluate(model, &self.dataset, Split::New)?;
        let row = EpochMetrics {
            epoch,
            total_loss: losses.map(|l| l.total),
            ce_loss: losses.map(|l| l.ce),
            adtriplet_loss: losses.map(|l| l.adtriplet),
            base_accuracy: base,
            new_accuracy: new,
            harmonic_mean: harmonic_mean(base, new)?.value,
            silhouette: report.clone(),
            sampler: *sampler.probs(),
        };
        Ok((row, report))
    }

    /// Runs the configured number of epochs from a fresh model. Each epoch
    /// visits every base training image once as the episode anchor, in a
    /// per-epoch shuffled order. The model after the last epoch is returned.
    pub fn train(&self) -> Result<(PromptModel, RunMetrics)> {
        let start = Instant::now();
        let master = self.config.seed();
        let t = &self.config.training;
        let mut model = self.init_model()?;
        let anchors: Vec<ImageRef> = self
            .dataset
            .classes_of(Split::Base)
            .flat_map(|k| {
                (0..self.dataset.images(k, Partition::Train).len()).map(move |index| ImageRef { class_id: k, index })
            })
            .collect();
        let mut sgd = Sgd::new(t.lr, t.momentum, t.schedule, t.epochs * anchors.len())?;

        let mut sampler = SamplerWeights::uniform().restricted(&t.augmentations)?;
        let (initial, _) = self.epoch_row(&model, 0, None, &sampler)?;
        let mut rows = Vec::with_capacity(t.epochs);
        let mut new_class_accesses = 0;
        let mut clamp_events = 0;

        for epoch in 0..t.epochs {
            let mut rng = seed::rng(master, Stream::Episodes, epoch as u64);
            let mut order = anchors.clone();
            order.shuffle(&mut rng);
            let mut sums = StepLosses {
                total: 0.0,
                ce: 0.0,
                adtriplet: 0.0,
            };
            for (episode, &anchor) in order.iter().enumerate() {
                let step = sample_episode_with_anchor(&self.dataset, anchor, &sampler, &mut rng)
                    .and_then(|ep| {
                        for r in [ep.first, ep.second] {
                            if self.dataset.split_of(r.class_id) == Split::New {
                                new_class_accesses += 1;
                            }
                        }
                        self.train_episode(&mut model, &mut sgd, &ep)
                    });
                let (losses, clamps) = step.map_err(|e| {
                    if e.is_numeric() {
                        Error::Divergence {
                            epoch,
                            episode,
                            source: Box::new(e),
                        }
                    } else {
                        e
                    }
                })?;
                clamp_events += clamps;
                sums.total += losses.total;
                sums.ce += losses.ce;
                sums.adtriplet += losses.adtriplet;
            }
            let n = order.len() as f64;
            let means = StepLosses {
                total: sums.total / n,
                ce: sums.ce / n,
                adtriplet: sums.adtriplet / n,
            };
            let (row, report) = self.epoch_row(&model, epoch, Some(means), &sampler)?;
            rows.push(row);
            if t.wrs_enabled {
                sampler = self.sampler_after(&report, epoch)?.restricted(&t.augmentations)?;
            }
        }

        let metrics = RunMetrics {
            seed: master,
            initial,
            epochs: rows,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            new_class_accesses,
            clamp_events,
            trainable_parameters: model.parameter_count(),
        };
        Ok((model, metrics))
    }
}

impl ProfileSet {
    /// Takes `samples` validation images round-robin over the base classes
    /// (new classes stay unseen, since profiling steers the sampler) and
    /// renders each under every augmentation type with a fixed seed.
    fn build(ds: &ToyDataset, enc: &FrozenEncoders, samples: usize, master: u64) -> Result<Self> {
        let k = ds.num_base();
        let images: Vec<&ToyImage> = (0..samples)
            .map(|i| {
                let val = ds.images(i % k, Partition::Val);
                &val[(i / k) % val.len()]
            })
            .collect();
        let originals = images
            .iter()
            .map(|img| Ok((img.class_id, enc.encode_image(img)?)))
            .collect::<Result<Vec<_>>>()?;
        let augmented = AugmentationType::ALL
            .iter()
            .map(|&aug| {
                images
                    .iter()
                    .enumerate()
                    .map(|(i, img)| {
                        let s = seed::derive(master, Stream::Profile, (aug.index() * samples + i) as u64);
                        enc.encode_image(&apply_augmentation(img, aug, s))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { originals, augmented })
    }
}

/// Trains a fresh model under `config`.
pub fn train(config: &ExperimentConfig) -> Result<(PromptModel, RunMetrics)> {
    Experiment::build(config)?.train()
}

/// Fraction of `partition` images of `split` classes for which `predict`
/// returns the true class, with candidates limited to the split's classes.
pub fn evaluate_with<F>(ds: &ToyDataset, split: Split, partition: Partition, mut predict: F) -> Result<f64>
where
    F: FnMut(&ToyImage, &[usize]) -> Result<usize>,
{
    let candidates: Vec<usize> = ds.classes_of(split).collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for &k in &candidates {
        for img in ds.images(k, partition) {
            if predict(img, &candidates)? == k {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument(format!("{split:?} split has no {partition:?} images")));
    }
    Ok(correct as f64 / total as f64)
}

/// Test-partition accuracy, conditioning each prompt on the meta token of
/// the un-augmented image.
pub fn evaluate(model: &PromptModel, ds: &ToyDataset, split: Split) -> Result<f64> {
    evaluate_with(ds, split, Partition::Test, |img, c| model.predict(img, c))
}
