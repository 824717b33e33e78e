//! Frozen stand-ins for the image and text towers of a contrastive model.
//!
//! - image featurizer `f(x) = tanh(W x + D z(x) + b)` over flattened pixels
//!   `x` and standardised global descriptors `z(x)` (colour, contrast,
//!   texture, shape moments, lighting direction);
//! - text encoder `g(t) = W2 tanh(W1 meanpool(t))` over an `(M+1) x d`
//!   token sequence;
//! - one unit class embedding `c_i` per class.
//!
//! `W`, `W1` and `c_i` are random. To stand in for contrastive pretraining,
//! construction calibrates the remaining pieces once, over fresh renders of
//! every class: `b` centres the pixel distribution, `z` is standardised over
//! the renders and all their augmentations, `W` and `D` are rescaled so the
//! descriptor block carries `DESCRIPTOR_SHARE` of the pre-activation power,
//! `W1` is rescaled to unit pre-activation RMS, and `W2` is the ridge solution that maps each
//! bare class prompt `[0, .., 0, c_i]` onto the mean image feature of class
//! `i`. Nothing changes after construction.
//!
//! The text encoder mean-pools its input, so it is invariant to token order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::augment::{apply_augmentation, AugmentationType};
use super::descriptors::{image_descriptors, NUM_DESCRIPTORS};
use super::image::{render_sample, ToyImage};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::seed::{self, Stream};

const CALIBRATION_SAMPLES: usize = 16;
const RIDGE: f64 = 1e-8;
/// Share of pre-activation variance carried by the descriptor block.
const DESCRIPTOR_SHARE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Feature dimension `d`.
    pub feature_dim: usize,
    /// Context length `M`.
    pub context_len: usize,
    pub text_hidden: usize,
    /// Softmax temperature `tau`.
    pub temperature: f64,
    pub image_size: usize,
    pub num_classes: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            context_len: 4,
            text_hidden: 64,
            temperature: 0.07,
            image_size: 16,
            num_classes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoders {
    config: EncoderConfig,
    image_weight: Tensor,
    image_bias: Vec<f64>,
    descriptor_weight: Tensor,
    descriptor_mean: Vec<f64>,
    descriptor_scale: Vec<f64>,
    text_in: Tensor,
    text_out: Tensor,
    class_embeddings: Vec<Vec<f64>>,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    w.data()
        .chunks(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn rescale(w: &mut Tensor, factor: f64) {
    w.data_mut().iter_mut().for_each(|v| *v *= factor);
}

impl FrozenEncoders {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        let EncoderConfig {
            feature_dim: d,
            context_len: m,
            text_hidden: hid,
            temperature,
            image_size,
            num_classes: k,
        } = config;
        if d == 0 || m == 0 || hid == 0 || k == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
        }
        let n_pixels = image_size * image_size * 3;
        let mut rng = seed::rng(seed, Stream::Encoders, 0);
        let mut image_weight = Tensor::randn(vec![d, n_pixels], 1.0, &mut rng);
        let mut text_in = Tensor::randn(vec![hid, d], 1.0, &mut rng);
        let mut descriptor_weight = Tensor::randn(vec![d, NUM_DESCRIPTORS], 1.0, &mut rng);
        let class_embeddings: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let v = Tensor::randn(vec![d], 1.0, &mut rng);
                let n = rms(v.data()) * (d as f64).sqrt();
                v.data().iter().map(|x| x / n).collect()
            })
            .collect();

        let mut calibration: Vec<Vec<ToyImage>> = Vec::with_capacity(k);
        for class in 0..k {
            let mut crng = seed::rng(seed, Stream::Calibration, class as u64);
            calibration.push(
                (0..CALIBRATION_SAMPLES)
                    .map(|_| render_sample(class, image_size, &mut crng))
                    .collect::<Result<_>>()?,
            );
        }
        let total = (k * CALIBRATION_SAMPLES) as f64;
        let mut mean_pixel = vec![0.0; n_pixels];
        for img in calibration.iter().flatten() {
            mean_pixel.iter_mut().zip(img.pixels()).for_each(|(m, p)| *m += p / total);
        }
        let centred = |img: &ToyImage| -> Vec<f64> {
            img.pixels().iter().zip(&mean_pixel).map(|(p, m)| p - m).collect()
        };
        let pre: Vec<f64> = calibration
            .iter()
            .flatten()
            .flat_map(|img| matvec(&image_weight, &centred(img)))
            .collect();
        rescale(&mut image_weight, (1.0 - DESCRIPTOR_SHARE).sqrt() / rms(&pre));
        let mut image_bias = matvec(&image_weight, &mean_pixel);
        image_bias.iter_mut().for_each(|b| *b = -*b);

        // Descriptor statistics cover clean renders and every augmentation.
        let mut stats: Vec<[f64; NUM_DESCRIPTORS]> = Vec::new();
        for (i, img) in calibration.iter().flatten().enumerate() {
            stats.push(image_descriptors(img));
            for aug in AugmentationType::ALL {
                let s = seed::derive(seed, Stream::Calibration, (i * AugmentationType::ALL.len() + aug.index()) as u64);
                stats.push(image_descriptors(&apply_augmentation(img, aug, s)));
            }
        }
        let count = stats.len() as f64;
        let descriptor_mean: Vec<f64> = (0..NUM_DESCRIPTORS)
            .map(|j| stats.iter().map(|s| s[j]).sum::<f64>() / count)
            .collect();
        let descriptor_scale: Vec<f64> = (0..NUM_DESCRIPTORS)
            .map(|j| {
                let var = stats.iter().map(|s| (s[j] - descriptor_mean[j]).powi(2)).sum::<f64>() / count;
                if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 }
            })
            .collect();
        let standardized = |v: &[f64; NUM_DESCRIPTORS]| -> Vec<f64> {
            (0..NUM_DESCRIPTORS).map(|j| (v[j] - descriptor_mean[j]) * descriptor_scale[j]).collect()
        };
        let pre: Vec<f64> = stats.iter().flat_map(|s| matvec(&descriptor_weight, &standardized(s))).collect();
        rescale(&mut descriptor_weight, DESCRIPTOR_SHARE.sqrt() / rms(&pre));

        let pooled: Vec<Vec<f64>> = class_embeddings
            .iter()
            .map(|c| c.iter().map(|v| v / (m + 1) as f64).collect())
            .collect();
        let pre: Vec<f64> = pooled.iter().flat_map(|u| matvec(&text_in, u)).collect();
        rescale(&mut text_in, 1.0 / rms(&pre));

        let mut encoders = Self {
            config,
            image_weight,
            image_bias,
            descriptor_weight,
            descriptor_mean,
            descriptor_scale,
            text_in,
            text_out: Tensor::zeros(vec![d, hid]),
            class_embeddings,
        };

        // Ridge fit of the text output layer onto normalised class centroids.
        let hidden = DMatrix::from_fn(k, hid, |i, j| matvec(&encoders.text_in, &pooled[i])[j].tanh());
        let mut targets = DMatrix::zeros(k, d);
        for (class, imgs) in calibration.iter().enumerate() {
            let mut centroid = DVector::zeros(d);
            for img in imgs {
                centroid += DVector::from_vec(encoders.encode_image(img)?);
            }
            let centroid = centroid.normalize();
            targets.set_row(class, &centroid.transpose());
        }
        let mut gram = &hidden * hidden.transpose();
        let lambda = RIDGE * gram.trace() / k as f64;
        for i in 0..k {
            gram[(i, i)] += lambda;
        }
        let solution = gram
            .cholesky()
            .ok_or_else(|| Error::Numeric {
                op: "encoder calibration",
                msg: "class prompt Gram matrix is singular".into(),
            })?
            .solve(&targets);
        let text_out = solution.transpose() * &hidden;
        encoders.text_out = Tensor::new(vec![d, hid], text_out.transpose().as_slice().to_vec())?;
        Ok(encoders)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn context_len(&self) -> usize {
        self.config.context_len
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    /// Copy with a different softmax temperature.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
        }
        let mut out = self.clone();
        out.config.temperature = temperature;
        Ok(out)
    }

    /// Bit patterns of every frozen weight, for exact comparisons.
    pub fn parameter_bits(&self) -> Vec<u64> {
        let tensors = [&self.image_weight, &self.descriptor_weight, &self.text_in, &self.text_out];
        let vectors = [&self.image_bias, &self.descriptor_mean, &self.descriptor_scale];
        tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .chain(vectors.iter().flat_map(|v| v.iter()))
            .chain(self.class_embeddings.iter().flatten())
            .map(|v| v.to_bits())
            .collect()
    }

    pub fn class_embedding(&self, class_id: usize) -> Result<&[f64]> {
        self.class_embeddings
            .get(class_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("class id {class_id} out of range")))
    }

    /// `f(x)`, a `d`-vector. Never participates in gradient computation.
    pub fn encode_image(&self, img: &ToyImage) -> Result<Vec<f64>> {
        let expected = self.config.image_size;
        if img.size() != expected {
            return Err(Error::Shape {
                op: "encode_image",
                lhs: vec![img.size(), img.size(), 3],
                rhs: vec![expected, expected, 3],
            });
        }
        let desc: Vec<f64> = image_descriptors(img)
            .iter()
            .zip(self.descriptor_mean.iter().zip(&self.descriptor_scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect();
        Ok(matvec(&self.image_weight, img.pixels())
            .into_iter()
            .zip(matvec(&self.descriptor_weight, &desc))
            .zip(&self.image_bias)
            .map(|((z, zd), b)| (z + zd + b).tanh())
            .collect())
    }

    /// `g(t)` on the tape. Gradients flow to `sequence`; the encoder's own
    /// weights enter as constants.
    pub fn encode_text_prompt(&self, tape: &mut Tape, sequence: Var) -> Result<Var> {
        let (m, d) = (self.config.context_len, self.config.feature_dim);
        if tape.shape(sequence) != [m + 1, d] {
            return Err(Error::Shape {
                op: "encode_text_prompt",
                lhs: tape.shape(sequence).to_vec(),
                rhs: vec![m + 1, d],
            });
        }
        let pool = tape.constant(vec![1, m + 1], vec![1.0 / (m + 1) as f64; m + 1])?;
        let pooled = tape.matmul(pool, sequence)?;
        let pooled = tape.reshape(pooled, vec![d])?;
        let w1 = tape.param(&self.text_in);
        let w2 = tape.param(&self.text_out);
        let h = tape.matmul(w1, pooled)?;
        let h = tape.tanh(h)?;
        tape.matmul(w2, h)
    }

    /// `g(t)` for a plain row-major `(M+1) x d` buffer.
    pub fn encode_text_values(&self, sequence: &[f64]) -> Result<Vec<f64>> {
        let (m, d) = (self.config.context_len, self.config.feature_dim);
        let mut tape = Tape::new();
        let seq = tape.constant(vec![m + 1, d], sequence.to_vec()).map_err(|_| Error::Shape {
            op: "encode_text_prompt",
            lhs: vec![sequence.len()],
            rhs: vec![m + 1, d],
        })?;
        let out = self.encode_text_prompt(&mut tape, seq)?;
        Ok(tape.value(out).to_vec())
    }
}
