use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::toyworld::{apply_augmentation, AugmentationType, FrozenEncoders, ToyImage};

pub const CONTEXT_INIT_STD: f64 = 0.02;

/// Bottleneck ratio used when none is configured.
pub fn default_bottleneck(feature_dim: usize) -> usize {
    if feature_dim >= 32 {
        16
    } else {
        4
    }
}

/// `M * d + 2 * d * (d / r)`: context plus a bias-free two-layer metanet.
pub fn trainable_parameter_count(feature_dim: usize, context_len: usize, ratio: usize) -> usize {
    context_len * feature_dim + 2 * feature_dim * (feature_dim / ratio)
}

/// Reference point subtracted from an augmented view's meta token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaVariant {
    /// Meta token of the same un-augmented image.
    #[default]
    SameImage,
    /// Mean meta token over the un-augmented training images of the class.
    ClassMean,
}

/// Instance-conditioned bias `pi = h(f(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaToken(pub Vec<f64>);

/// `h(f(Aug(x))) - h(f(x))` for one image and one augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMetaToken {
    pub delta: Vec<f64>,
    pub class_id: usize,
    pub augmentation: AugmentationType,
}

/// Tape handles for the trainable parameters of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub context: Var,
    pub down: Var,
    pub up: Var,
}

impl ModelVars {
    pub fn as_array(&self) -> [Var; 3] {
        [self.context, self.down, self.up]
    }
}

/// Learnable context vectors `v_1..v_M` and the metanet `d -> d/r -> d`
/// (relu between, no biases), over a set of frozen encoders.
#[derive(Debug, Clone)]
pub struct PromptModel {
    context: Tensor,
    meta_down: Tensor,
    meta_up: Tensor,
    encoders: Arc<FrozenEncoders>,
}

impl PromptModel {
    pub const PARAMETER_NAMES: [&'static str; 3] = ["context", "metanet.down", "metanet.up"];

    /// Context entries ~ N(0, 0.02²). Both metanet layers use fan-in
    /// scaled normal init; the up-projection is further shrunk by
    /// `up_init_scale` so that initial meta tokens stay small next to the
    /// class embedding in the pooled prompt.
    pub fn new<R: Rng + ?Sized>(
        encoders: Arc<FrozenEncoders>,
        bottleneck_ratio: usize,
        up_init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d = encoders.feature_dim();
        let m = encoders.context_len();
        if bottleneck_ratio == 0 || !d.is_multiple_of(bottleneck_ratio) {
            return Err(Error::Config(format!(
                "bottleneck ratio {bottleneck_ratio} must divide feature dim {d}"
            )));
        }
        let hidden = d / bottleneck_ratio;
        let context = Tensor::randn(vec![m, d], CONTEXT_INIT_STD, rng).with_grad();
        let meta_down = Tensor::randn(vec![hidden, d], 1.0 / (d as f64).sqrt(), rng).with_grad();
        let meta_up = Tensor::randn(vec![d, hidden], up_init_scale / (hidden as f64).sqrt(), rng).with_grad();
        Ok(Self {
            context,
            meta_down,
            meta_up,
            encoders,
        })
    }

    pub fn encoders(&self) -> &Arc<FrozenEncoders> {
        &self.encoders
    }

    pub fn feature_dim(&self) -> usize {
        self.encoders.feature_dim()
    }

    pub fn context_len(&self) -> usize {
        self.encoders.context_len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.meta_down.shape()[0]
    }

    pub fn context(&self) -> &Tensor {
        &self.context
    }

    pub fn parameters(&self) -> [&Tensor; 3] {
        [&self.context, &self.meta_down, &self.meta_up]
    }

    pub fn parameters_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.context, &mut self.meta_down, &mut self.meta_up]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Replaces a parameter by name, keeping its shape and grad flag.
    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = Self::PARAMETER_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::Format(format!("unknown parameter '{name}'")))?;
        let slot = &mut self.parameters_mut()[idx];
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_parameter",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        **slot = value.with_grad();
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            context: tape.param(&self.context),
            down: tape.param(&self.meta_down),
            up: tape.param(&self.meta_up),
        }
    }

    /// Moves gradients from a finished tape into the parameter buffers.
    pub fn collect_grads(&mut self, tape: &Tape, vars: &ModelVars) -> Result<()> {
        for (p, v) in self.parameters_mut().into_iter().zip(vars.as_array()) {
            tape.accumulate_into(v, p)?;
        }
        Ok(())
    }

    pub fn meta_token_var(&self, tape: &mut Tape, vars: &ModelVars, feature: &[f64]) -> Result<Var> {
        if feature.len() != self.feature_dim() {
            return Err(Error::Shape {
                op: "meta_token",
                lhs: vec![feature.len()],
                rhs: vec![self.feature_dim()],
            });
        }
        let f = tape.constant_vector(feature)?;
        let h = tape.matmul(vars.down, f)?;
        let h = tape.relu(h)?;
        tape.matmul(vars.up, h)
    }

    /// Mean of the meta tokens of `features`.
    pub fn mean_meta_token_var(&self, tape: &mut Tape, vars: &ModelVars, features: &[Vec<f64>]) -> Result<Var> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("class mean over no images".into()));
        }
        let tokens = features
            .iter()
            .map(|f| self.meta_token_var(tape, vars, f))
            .collect::<Result<Vec<_>>>()?;
        let mut acc = tokens[0];
        for &t in &tokens[1..] {
            acc = tape.add(acc, t)?;
        }
        tape.scale(acc, 1.0 / tokens.len() as f64)
    }

    /// Rows `v_m + pi` for `m = 1..M`, followed by the class embedding.
    pub fn assemble_prompt_var(&self, tape: &mut Tape, vars: &ModelVars, pi: Var, class_id: usize) -> Result<Var> {
        let (m, d) = (self.context_len(), self.feature_dim());
        if tape.shape(pi) != [d] {
            return Err(Error::Shape {
                op: "assemble_prompt",
                lhs: tape.shape(pi).to_vec(),
                rhs: vec![d],
            });
        }
        let class = self.encoders.class_embedding(class_id)?.to_vec();
        let rows = tape.concat(&vec![pi; m])?;
        let rows = tape.reshape(rows, vec![m, d])?;
        let conditioned = tape.add(vars.context, rows)?;
        let class_row = tape.constant(vec![1, d], class)?;
        tape.concat(&[conditioned, class_row])
    }

    /// `sim(f(x), g(t_y(x))) / tau` for every candidate class.
    pub fn logits_var(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        image_feature: &[f64],
        pi: Var,
        candidates: &[usize],
    ) -> Result<Var> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("empty candidate set".into()));
        }
        let f = tape.constant_vector(image_feature)?;
        let tau = self.encoders.temperature();
        let mut logits = Vec::with_capacity(candidates.len());
        for &c in candidates {
            let prompt = self.assemble_prompt_var(tape, vars, pi, c)?;
            let text = self.encoders.encode_text_prompt(tape, prompt)?;
            let sim = tape.cosine_similarity(f, text)?;
            logits.push(tape.scale(sim, 1.0 / tau)?);
        }
        tape.concat(&logits)
    }

    pub fn meta_token(&self, img: &ToyImage) -> Result<MetaToken> {
        let feature = self.encoders.encode_image(img)?;
        self.meta_token_for_feature(&feature)
    }

    pub fn meta_token_for_feature(&self, feature: &[f64]) -> Result<MetaToken> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let pi = self.meta_token_var(&mut tape, &vars, feature)?;
        Ok(MetaToken(tape.value(pi).to_vec()))
    }

    pub fn delta_meta_token(&self, img: &ToyImage, aug: AugmentationType, seed: u64) -> Result<DeltaMetaToken> {
        let view = apply_augmentation(img, aug, seed);
        let augmented = self.meta_token(&view)?;
        let original = self.meta_token(img)?;
        Ok(DeltaMetaToken {
            delta: augmented.0.iter().zip(&original.0).map(|(a, o)| a - o).collect(),
            class_id: img.class_id,
            augmentation: aug,
        })
    }

    /// Row-major `(M+1) x d` prompt for a given meta token.
    pub fn assemble_prompt(&self, pi: &MetaToken, class_id: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let pi = tape.constant_vector(&pi.0)?;
        let prompt = self.assemble_prompt_var(&mut tape, &vars, pi, class_id)?;
        Ok(tape.value(prompt).to_vec())
    }

    /// Class probabilities over `candidates`, conditioning every prompt on `pi`.
    pub fn predict_probs(&self, img: &ToyImage, candidates: &[usize], pi: &MetaToken) -> Result<Vec<f64>> {
        let feature = self.encoders.encode_image(img)?;
        self.probs_for_feature(&feature, candidates, pi)
    }

    pub fn probs_for_feature(&self, feature: &[f64], candidates: &[usize], pi: &MetaToken) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let pi = tape.constant_vector(&pi.0)?;
        let logits = self.logits_var(&mut tape, &vars, feature, pi, candidates)?;
        let probs = tape.softmax(logits)?;
        Ok(tape.value(probs).to_vec())
    }

    /// Predicted class among `candidates`, conditioned on the image's own
    /// meta token.
    pub fn predict(&self, img: &ToyImage, candidates: &[usize]) -> Result<usize> {
        let feature = self.encoders.encode_image(img)?;
        let pi = self.meta_token_for_feature(&feature)?;
        let probs = self.probs_for_feature(&feature, candidates, &pi)?;
        let best = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("candidates non-empty");
        Ok(candidates[best])
    }
}
