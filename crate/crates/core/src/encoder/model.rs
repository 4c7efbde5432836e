//! Transformer encoder with a token-classification head.
//!
//! ```text
//! ids -> token + segment + position -> LayerNorm -> dropout
//!     -> L x [ self-attention -> dropout -> (+) -> LayerNorm
//!              -> FFN(GELU)    -> dropout -> (+) -> LayerNorm ]
//!     -> linear -> log-softmax
//! ```
//!
//! Every stage keeps a cache during the forward pass so that
//! [`EncoderModel::forward_backward`] can accumulate exact gradients into
//! each [`Parameter`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderError, ModelConfig, PositionMode};
use crate::numerics::ops::{self, LayerNormCache};
use crate::numerics::{ParamSet, Parameter, Tensor};
use crate::tokenizer::PAD;

pub const INIT_STD: f64 = 0.02;

/// Dropout is only drawn in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), truncated_normal(&[fan_in, fan_out], rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, EncoderError> {
        Ok(ops::add_row_bias(
            &ops::matmul(x, &self.weight.value)?,
            &self.bias.value,
        )?)
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, EncoderError> {
        let (dx, dw) = ops::matmul_backward(x, &self.weight.value, grad_out)?;
        self.weight.accumulate(&dw)?;
        self.bias.accumulate(&ops::add_row_bias_backward(grad_out))?;
        Ok(dx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl Norm {
    fn new(name: &str, h: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(&[h], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[h])),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache), EncoderError> {
        Ok(ops::layer_norm(x, &self.gamma.value, &self.beta.value)?)
    }

    fn backward(&mut self, cache: &LayerNormCache, grad_out: &Tensor) -> Result<Tensor, EncoderError> {
        let (dx, dg, db) = ops::layer_norm_backward(cache, &self.gamma.value, grad_out)?;
        self.gamma.accumulate(&dg)?;
        self.beta.accumulate(&db)?;
        Ok(dx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: Norm,
}

struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    context: Tensor,
}

struct LayerCache {
    input: Tensor,
    attn: AttentionCache,
    attn_drop: Option<Tensor>,
    attn_ln: LayerNormCache,
    h1: Tensor,
    ffn_pre: Tensor,
    ffn_act: Tensor,
    ffn_drop: Option<Tensor>,
    ffn_ln: LayerNormCache,
}

fn maybe_dropout(x: Tensor, p: f64, mode: &mut Mode<'_>) -> Result<(Tensor, Option<Tensor>), EncoderError> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let mask = ops::dropout_mask(x.shape(), p, *rng);
            Ok((ops::mul(&x, &mask)?, Some(mask)))
        }
        _ => Ok((x, None)),
    }
}

fn undo_dropout(grad: &Tensor, mask: &Option<Tensor>) -> Result<Tensor, EncoderError> {
    match mask {
        Some(m) => Ok(ops::mul(grad, m)?),
        None => Ok(grad.clone()),
    }
}

impl EncoderLayer {
    fn new(i: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (h, f) = (cfg.hidden_size, cfg.ffn_size);
        let p = |s: &str| format!("layers.{i}.{s}");
        Self {
            query: Linear::new(&p("attn.query"), h, h, rng),
            key: Linear::new(&p("attn.key"), h, h, rng),
            value: Linear::new(&p("attn.value"), h, h, rng),
            output: Linear::new(&p("attn.output"), h, h, rng),
            attn_norm: Norm::new(&p("attn_norm"), h),
            ffn_in: Linear::new(&p("ffn.inner"), h, f, rng),
            ffn_out: Linear::new(&p("ffn.outer"), f, h, rng),
            ffn_norm: Norm::new(&p("ffn_norm"), h),
        }
    }

    fn attention(&self, x: &Tensor, heads: usize, key_mask: &[bool]) -> Result<AttentionCache, EncoderError> {
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let d = x.cols() / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut context = Tensor::zeros(x.shape());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = (
                q.column_slice(h * d, d),
                k.column_slice(h * d, d),
                v.column_slice(h * d, d),
            );
            let mut scores = ops::matmul_nt(&qh, &kh)?.scale(scale);
            if key_mask.iter().any(|&m| m) {
                for i in 0..scores.rows() {
                    for (s, &masked) in scores.row_mut(i).iter_mut().zip(key_mask) {
                        if masked {
                            *s = f64::NEG_INFINITY;
                        }
                    }
                }
            }
            let p = ops::softmax_rows(&scores);
            context.add_column_slice(h * d, &ops::matmul(&p, &vh)?);
            probs.push(p);
        }
        Ok(AttentionCache {
            q,
            k,
            v,
            probs,
            context,
        })
    }

    fn attention_backward(
        &mut self,
        x: &Tensor,
        cache: &AttentionCache,
        grad_out: &Tensor,
    ) -> Result<Tensor, EncoderError> {
        let heads = cache.probs.len();
        let d = x.cols() / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let d_context = self.output.backward(&cache.context, grad_out)?;
        let mut dq = Tensor::zeros(x.shape());
        let mut dk = Tensor::zeros(x.shape());
        let mut dv = Tensor::zeros(x.shape());
        for (h, p) in cache.probs.iter().enumerate() {
            let (qh, kh, vh) = (
                cache.q.column_slice(h * d, d),
                cache.k.column_slice(h * d, d),
                cache.v.column_slice(h * d, d),
            );
            let dctx = d_context.column_slice(h * d, d);
            let dp = ops::matmul_nt(&dctx, &vh)?;
            dv.add_column_slice(h * d, &ops::matmul_tn(p, &dctx)?);
            let ds = ops::softmax_rows_backward(p, &dp)?.scale(scale);
            dq.add_column_slice(h * d, &ops::matmul(&ds, &kh)?);
            dk.add_column_slice(h * d, &ops::matmul_tn(&ds, &qh)?);
        }
        let mut dx = self.query.backward(x, &dq)?;
        dx.add_assign(&self.key.backward(x, &dk)?)?;
        dx.add_assign(&self.value.backward(x, &dv)?)?;
        Ok(dx)
    }

    fn forward(
        &self,
        x: &Tensor,
        cfg: &ModelConfig,
        key_mask: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<(Tensor, LayerCache), EncoderError> {
        let attn = self.attention(x, cfg.num_heads, key_mask)?;
        let projected = self.output.forward(&attn.context)?;
        let (projected, attn_drop) = maybe_dropout(projected, cfg.dropout, mode)?;
        let (h1, attn_ln) = self.attn_norm.forward(&ops::add(x, &projected)?)?;
        let ffn_pre = self.ffn_in.forward(&h1)?;
        let ffn_act = ops::gelu(&ffn_pre);
        let ffn = self.ffn_out.forward(&ffn_act)?;
        let (ffn, ffn_drop) = maybe_dropout(ffn, cfg.dropout, mode)?;
        let (out, ffn_ln) = self.ffn_norm.forward(&ops::add(&h1, &ffn)?)?;
        let cache = LayerCache {
            input: x.clone(),
            attn,
            attn_drop,
            attn_ln,
            h1,
            ffn_pre,
            ffn_act,
            ffn_drop,
            ffn_ln,
        };
        Ok((out, cache))
    }

    fn backward(&mut self, cache: &LayerCache, grad_out: &Tensor) -> Result<Tensor, EncoderError> {
        let d_sum2 = self.ffn_norm.backward(&cache.ffn_ln, grad_out)?;
        let d_ffn = undo_dropout(&d_sum2, &cache.ffn_drop)?;
        let d_act = self.ffn_out.backward(&cache.ffn_act, &d_ffn)?;
        let d_pre = ops::gelu_backward(&cache.ffn_pre, &d_act)?;
        let mut d_h1 = self.ffn_in.backward(&cache.h1, &d_pre)?;
        d_h1.add_assign(&d_sum2)?;
        let d_sum1 = self.attn_norm.backward(&cache.attn_ln, &d_h1)?;
        let d_proj = undo_dropout(&d_sum1, &cache.attn_drop)?;
        let mut dx = self.attention_backward(&cache.input, &cache.attn, &d_proj)?;
        dx.add_assign(&d_sum1)?;
        Ok(dx)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
        self.output.visit(f);
        self.attn_norm.visit(f);
        self.ffn_in.visit(f);
        self.ffn_out.visit(f);
        self.ffn_norm.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
        self.attn_norm.visit_mut(f);
        self.ffn_in.visit_mut(f);
        self.ffn_out.visit_mut(f);
        self.ffn_norm.visit_mut(f);
    }
}

/// Attention weights recorded by [`EncoderModel::encode_traced`], indexed
/// by layer then head.
pub struct EncodeTrace {
    pub output: Tensor,
    pub attention: Vec<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: ModelConfig,
    pub token: Parameter,
    pub segment: Parameter,
    pub position: Option<Parameter>,
    pub embed_norm: Norm,
    pub layers: Vec<EncoderLayer>,
    pub classifier: Linear,
}

fn truncated_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * INIT_STD {
                break x;
            }
        };
    }
    t
}

/// Fixed encodings `sin(p / 10000^(2i/H))`, `cos(...)` on even/odd columns.
pub fn sinusoidal_positions(len: usize, h: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, h]);
    for p in 0..len {
        for i in 0..h {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / h as f64);
            let angle = p as f64 / rate;
            t.set(p, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

impl EncoderModel {
    /// Zero biases, unit LayerNorm gains, truncated normal (σ = 0.02)
    /// elsewhere, all drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_size;
        let token = Parameter::new("embeddings.token", truncated_normal(&[config.vocab_size, h], &mut rng));
        let segment = Parameter::new(
            "embeddings.segment",
            truncated_normal(&[config.num_segments, h], &mut rng),
        );
        let position = match config.position_mode {
            PositionMode::Learned => Some(Parameter::new(
                "embeddings.position",
                truncated_normal(&[config.max_positions, h], &mut rng),
            )),
            PositionMode::Sinusoidal => None,
        };
        let embed_norm = Norm::new("embeddings.norm", h);
        let layers = (0..config.num_layers)
            .map(|i| EncoderLayer::new(i, &config, &mut rng))
            .collect();
        let classifier = Linear::new("classifier", h, config.num_labels, &mut rng);
        Ok(Self {
            config,
            token,
            segment,
            position,
            embed_norm,
            layers,
            classifier,
        })
    }

    /// Sum of token, segment-0 and position embeddings for each id.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor, EncoderError> {
        if ids.len() > self.config.max_positions {
            return Err(EncoderError::Range(format!(
                "sequence of {} tokens exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EncoderError::Range(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let mut x = ops::embedding_lookup(&self.token.value, ids)?;
        let seg = self.segment.value.row(0).to_vec();
        let pos = match &self.position {
            Some(p) => ops::embedding_lookup(&p.value, &(0..ids.len()).collect::<Vec<_>>())?,
            None => sinusoidal_positions(ids.len(), self.config.hidden_size),
        };
        for i in 0..ids.len() {
            for ((o, s), p) in x.row_mut(i).iter_mut().zip(&seg).zip(pos.row(i)) {
                *o += s + p;
            }
        }
        Ok(x)
    }

    fn check_width(&self, x: &Tensor, op: &'static str) -> Result<(), EncoderError> {
        if x.shape().len() != 2 || x.cols() != self.config.hidden_size {
            return Err(
                crate::numerics::NumericsError::shape(op, x.shape(), &[x.rows(), self.config.hidden_size]).into(),
            );
        }
        Ok(())
    }

    /// Runs the encoder stack on already-embedded inputs (no masking).
    pub fn encode(&self, x: &Tensor) -> Result<Tensor, EncoderError> {
        Ok(self.encode_traced(x)?.output)
    }

    pub fn encode_traced(&self, x: &Tensor) -> Result<EncodeTrace, EncoderError> {
        self.check_width(x, "encode")?;
        let mask = vec![false; x.rows()];
        let mut h = x.clone();
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h, &self.config, &mask, &mut Mode::Eval)?;
            attention.push(cache.attn.probs);
            h = out;
        }
        Ok(EncodeTrace { output: h, attention })
    }

    /// Affine map to label scores followed by a row log-softmax.
    pub fn classify(&self, hidden: &Tensor) -> Result<Tensor, EncoderError> {
        self.check_width(hidden, "classify")?;
        Ok(ops::log_softmax_rows(&self.classifier.forward(hidden)?))
    }

    /// Label log-probabilities for every position of one window.
    pub fn forward(&self, ids: &[usize]) -> Result<Tensor, EncoderError> {
        Ok(self.forward_cached(ids, &mut Mode::Eval)?.log_probs)
    }

    fn forward_cached(&self, ids: &[usize], mode: &mut Mode<'_>) -> Result<ForwardCache, EncoderError> {
        let summed = self.embed(ids)?;
        let (normed, embed_ln) = self.embed_norm.forward(&summed)?;
        let (mut h, embed_drop) = maybe_dropout(normed, self.config.dropout, mode)?;
        let key_mask: Vec<bool> = ids.iter().map(|&id| id == PAD).collect();
        let key_mask = if key_mask.iter().all(|&m| m) {
            vec![false; ids.len()]
        } else {
            key_mask
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h, &self.config, &key_mask, mode)?;
            layers.push(cache);
            h = out;
        }
        let log_probs = ops::log_softmax_rows(&self.classifier.forward(&h)?);
        Ok(ForwardCache {
            ids: ids.to_vec(),
            embed_ln,
            embed_drop,
            layers,
            hidden: h,
            log_probs,
        })
    }

    /// Forward and backward pass for one window.
    ///
    /// Returns the summed negative log-likelihood of the labelled positions
    /// divided by `normalizer`, and accumulates the matching gradients.
    pub fn forward_backward(
        &mut self,
        ids: &[usize],
        labels: &[Option<usize>],
        normalizer: f64,
        mode: &mut Mode<'_>,
    ) -> Result<f64, EncoderError> {
        let cache = self.forward_cached(ids, mode)?;
        let (loss, d_logp) = token_loss_with(&cache.log_probs, labels, normalizer)?;
        self.backward(&cache, &d_logp)?;
        Ok(loss)
    }

    fn backward(&mut self, cache: &ForwardCache, d_logp: &Tensor) -> Result<(), EncoderError> {
        let d_logits = ops::log_softmax_rows_backward(&cache.log_probs, d_logp)?;
        let mut d_h = self.classifier.backward(&cache.hidden, &d_logits)?;
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d_h = layer.backward(lc, &d_h)?;
        }
        let d_normed = undo_dropout(&d_h, &cache.embed_drop)?;
        let d_sum = self.embed_norm.backward(&cache.embed_ln, &d_normed)?;
        self.token
            .accumulate(&ops::embedding_backward(self.token.value.shape(), &cache.ids, &d_sum)?)?;
        let seg_grad = self.segment.grad.row_mut(0);
        for i in 0..d_sum.rows() {
            for (g, d) in seg_grad.iter_mut().zip(d_sum.row(i)) {
                *g += d;
            }
        }
        if let Some(pos) = &mut self.position {
            for i in 0..d_sum.rows() {
                for (g, d) in pos.grad.row_mut(i).iter_mut().zip(d_sum.row(i)) {
                    *g += d;
                }
            }
        }
        Ok(())
    }
}

struct ForwardCache {
    ids: Vec<usize>,
    embed_ln: LayerNormCache,
    embed_drop: Option<Tensor>,
    layers: Vec<LayerCache>,
    hidden: Tensor,
    log_probs: Tensor,
}

/// Mean negative log-probability of the gold labels over positions whose
/// label is not `None`, with its gradient.
pub fn token_loss(log_probs: &Tensor, labels: &[Option<usize>]) -> Result<(f64, Tensor), EncoderError> {
    let n = labels.iter().filter(|l| l.is_some()).count();
    token_loss_with(log_probs, labels, n as f64)
}

fn token_loss_with(
    log_probs: &Tensor,
    labels: &[Option<usize>],
    normalizer: f64,
) -> Result<(f64, Tensor), EncoderError> {
    if labels.len() != log_probs.rows() {
        return Err(crate::numerics::NumericsError::shape("token_loss", log_probs.shape(), &[labels.len()]).into());
    }
    if labels.iter().all(Option::is_none) || normalizer <= 0.0 {
        return Err(EncoderError::NoTargets);
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(log_probs.shape());
    for (i, l) in labels.iter().enumerate() {
        if let Some(y) = *l {
            if y >= log_probs.cols() {
                return Err(EncoderError::Range(format!(
                    "label {y} outside {} labels",
                    log_probs.cols()
                )));
            }
            loss -= log_probs.get(i, y);
            grad.set(i, y, -1.0 / normalizer);
        }
    }
    Ok((loss / normalizer, grad))
}

impl ParamSet for EncoderModel {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        f(&self.token);
        f(&self.segment);
        if let Some(p) = &self.position {
            f(p);
        }
        self.embed_norm.visit(f);
        for l in &self.layers {
            l.visit(f);
        }
        self.classifier.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.token);
        f(&mut self.segment);
        if let Some(p) = &mut self.position {
            f(p);
        }
        self.embed_norm.visit_mut(f);
        for l in &mut self.layers {
            l.visit_mut(f);
        }
        self.classifier.visit_mut(f);
    }
}
