//! Toy ASR stack: log-power spectral features, two supervised CTC
//! architectures, a contrastively pretrained recurrent encoder with
//! fine-tuned linear heads, CTC loss via the forward-backward algorithm,
//! and greedy decoding.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Utterance;
use crate::grad::{adam_step, AdamConfig, AdamState, Gradients, Graph, TensorRef};
use crate::signal::Waveform;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("autodiff error: {0}")]
    Grad(#[from] crate::grad::GradError),
    #[error("input error: {0}")]
    Input(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("label infeasible: needs {needed} frames, have {have}")]
    InfeasibleLabel { needed: usize, have: usize },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Character inventory. Id 0 is always the CTC blank; writable symbols
/// start at id 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
}

impl Vocabulary {
    pub const BLANK: usize = 0;

    pub fn new(chars: Vec<char>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if chars.len() < 1 {
            return Err(ModelError::Input("vocabulary needs at least one symbol".into()));
        }
        for &c in &chars {
            if !seen.insert(c) {
                return Err(ModelError::Input(format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Vocabulary { chars })
    }

    /// blank + 'a'..'h' + space.
    pub fn default_toy() -> Self {
        let mut chars: Vec<char> = ('a'..='h').collect();
        chars.push(' ');
        Vocabulary { chars }
    }

    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        if id == 0 {
            None
        } else {
            self.chars.get(id - 1).copied()
        }
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 1)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.id_of(c).ok_or_else(|| ModelError::Input(format!("{c:?} not in vocabulary"))))
            .collect()
    }
}

/// Framing and log-power settings for the feature front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub n_bins: usize,
    pub floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { frame_len: 256, hop: 128, n_bins: 32, floor: 1e-8 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(ModelError::Input("need 0 < hop <= frame_len".into()));
        }
        if self.n_bins > self.frame_len / 2 + 1 {
            return Err(ModelError::Input("n_bins exceeds half-spectrum".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self, samples: usize) -> Result<usize> {
        if samples < self.frame_len {
            return Err(ModelError::Input(format!(
                "waveform of {samples} samples shorter than frame_len {}",
                self.frame_len
            )));
        }
        Ok((samples - self.frame_len) / self.hop + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    FfCtc,
    RnnCtc,
    EncHead,
}

impl Arch {
    pub fn tag(&self) -> &'static str {
        match self {
            Arch::FfCtc => "ff_ctc",
            Arch::RnnCtc => "rnn_ctc",
            Arch::EncHead => "enc_head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Scratch { seed: u64 },
    Finetuned { pretrain_id: String, seed: u64 },
}

/// Dense parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub type ParamMap = BTreeMap<String, Param>;

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: Arch,
    pub params: ParamMap,
    pub vocab: Vocabulary,
    pub feat: FeatureConfig,
    pub provenance: Provenance,
}

/// Contrastively pretrained encoder, before any supervised head.
#[derive(Debug, Clone)]
pub struct PretrainedEncoder {
    pub id: String,
    pub params: ParamMap,
    pub feat: FeatureConfig,
}

/// T x D contextual representation of a waveform.
#[derive(Debug, Clone)]
pub struct ContextRepr {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

pub const FF_CONTEXT: usize = 2; // frames of splicing on each side
const FF_HIDDEN: usize = 64;
const RNN_HIDDEN: usize = 32;
pub const ENC_HIDDEN: usize = 48;
// affine normalization applied to log-power features before any network
const FEAT_SHIFT: f64 = 10.0;
const FEAT_SCALE: f64 = 0.25;

/// Builds the T x n_bins log-power feature matrix inside `g`, differentiable
/// w.r.t. the waveform node.
pub fn extract_features_graph(
    g: &mut Graph,
    wave: TensorRef,
    cfg: &FeatureConfig,
) -> Result<TensorRef> {
    cfg.validate()?;
    let (r, len) = g.shape(wave);
    if r != 1 {
        return Err(ModelError::Contract("waveform node must be 1 x L".into()));
    }
    let t_frames = cfg.frame_count(len)?;
    let f = cfg.frame_len;
    // fixed DFT bases, first n_bins bins of an f-point transform
    let mut bre = vec![0.0; f * cfg.n_bins];
    let mut bim = vec![0.0; f * cfg.n_bins];
    for t in 0..f {
        for k in 0..cfg.n_bins {
            let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / f as f64;
            bre[t * cfg.n_bins + k] = ang.cos();
            bim[t * cfg.n_bins + k] = ang.sin();
        }
    }
    let bre = g.constant(f, cfg.n_bins, bre)?;
    let bim = g.constant(f, cfg.n_bins, bim)?;
    let mut rows = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        rows.push(g.slice_cols(wave, t * cfg.hop, f)?);
    }
    let frames = g.concat_rows(&rows)?;
    let re = g.matmul(frames, bre)?;
    let im = g.matmul(frames, bim)?;
    let re2 = g.mul(re, re)?;
    let im2 = g.mul(im, im)?;
    let pow = g.add(re2, im2)?;
    let pow = g.mul_scalar(pow, 1.0 / (f * f) as f64);
    let shifted = g.add_scalar(pow, cfg.floor);
    Ok(g.log(shifted)?)
}

/// Plain (non-graph) feature extraction.
pub fn extract_features(w: &Waveform, cfg: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let wave = g.constant(1, w.len(), w.samples().to_vec())?;
    let feats = extract_features_graph(&mut g, wave, cfg)?;
    let (t, b) = g.shape(feats);
    let data = g.value(feats);
    Ok((0..t).map(|i| data[i * b..(i + 1) * b].to_vec()).collect())
}

fn ones(g: &mut Graph, rows: usize) -> TensorRef {
    g.constant(rows, 1, vec![1.0; rows]).expect("ones")
}

fn affine(g: &mut Graph, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
    let xw = g.matmul(x, w)?;
    let rows = g.shape(x).0;
    let o = ones(g, rows);
    let bb = g.matmul(o, b)?;
    Ok(g.add(xw, bb)?)
}

fn param_leaf(g: &mut Graph, p: &Param, trainable: bool) -> Result<TensorRef> {
    Ok(g.leaf(p.rows, p.cols, p.data.clone(), trainable)?)
}

/// Parameter leaves for a forward pass; `trainable` selects which names get
/// gradients (None = all).
fn build_leaves(
    g: &mut Graph,
    params: &ParamMap,
    trainable: Option<&dyn Fn(&str) -> bool>,
) -> Result<BTreeMap<String, TensorRef>> {
    let mut out = BTreeMap::new();
    for (name, p) in params {
        let t = trainable.map(|f| f(name)).unwrap_or(false);
        out.insert(name.clone(), param_leaf(g, p, t)?);
    }
    Ok(out)
}

fn normalized(g: &mut Graph, feats: TensorRef) -> TensorRef {
    let shifted = g.add_scalar(feats, FEAT_SHIFT);
    g.mul_scalar(shifted, FEAT_SCALE)
}

fn rnn_layer(
    g: &mut Graph,
    input: TensorRef,
    wx: TensorRef,
    wh: TensorRef,
    b: TensorRef,
) -> Result<TensorRef> {
    let (t_frames, _) = g.shape(input);
    let hidden = g.shape(wh).0;
    let mut h = g.constant(1, hidden, vec![0.0; hidden])?;
    let mut rows = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let x_t = g.slice_rows(input, t, 1)?;
        let xw = g.matmul(x_t, wx)?;
        let hw = g.matmul(h, wh)?;
        let s = g.add(xw, hw)?;
        let s = g.add(s, b)?;
        h = g.tanh(s);
        rows.push(h);
    }
    Ok(g.concat_rows(&rows)?)
}

fn encoder_graph(
    g: &mut Graph,
    feats_norm: TensorRef,
    leaves: &BTreeMap<String, TensorRef>,
) -> Result<TensorRef> {
    let l1 = rnn_layer(g, feats_norm, leaves["enc.l1.wx"], leaves["enc.l1.wh"], leaves["enc.l1.b"])?;
    rnn_layer(g, l1, leaves["enc.l2.wx"], leaves["enc.l2.wh"], leaves["enc.l2.b"])
}

/// Full forward pass: waveform node -> T x V log-probabilities.
pub fn forward_graph(
    g: &mut Graph,
    arch: Arch,
    leaves: &BTreeMap<String, TensorRef>,
    wave: TensorRef,
    feat: &FeatureConfig,
) -> Result<TensorRef> {
    let feats = extract_features_graph(g, wave, feat)?;
    let x = normalized(g, feats);
    let logits = match arch {
        Arch::FfCtc => {
            let (t_frames, n_bins) = g.shape(x);
            // replicate-free zero padding, then +/-FF_CONTEXT frame splicing
            let zpad = g.constant(FF_CONTEXT, n_bins, vec![0.0; FF_CONTEXT * n_bins])?;
            let padded = g.concat_rows(&[zpad, x, zpad])?;
            let mut shifted = Vec::new();
            for off in 0..(2 * FF_CONTEXT + 1) {
                shifted.push(g.slice_rows(padded, off, t_frames)?);
            }
            let spliced = g.concat_cols(&shifted)?;
            let h1 = affine(g, spliced, leaves["ff.w1"], leaves["ff.b1"])?;
            let h1 = g.tanh(h1);
            let h2 = affine(g, h1, leaves["ff.w2"], leaves["ff.b2"])?;
            let h2 = g.tanh(h2);
            affine(g, h2, leaves["ff.wo"], leaves["ff.bo"])?
        }
        Arch::RnnCtc => {
            let h = rnn_layer(g, x, leaves["rnn.wx"], leaves["rnn.wh"], leaves["rnn.b"])?;
            affine(g, h, leaves["rnn.wo"], leaves["rnn.bo"])?
        }
        Arch::EncHead => {
            let c = encoder_graph(g, x, leaves)?;
            affine(g, c, leaves["head.w"], leaves["head.b"])?
        }
    };
    Ok(g.log_softmax(logits))
}

/// Log-space forward-backward over the blank-interleaved label lattice.
/// Returns (loss, gradient w.r.t. the T x V log-probability matrix).
pub fn ctc_forward_backward(
    logprobs: &[f64],
    t_frames: usize,
    v: usize,
    label: &[usize],
) -> Result<(f64, Vec<f64>)> {
    for &l in label {
        if l == Vocabulary::BLANK || l >= v {
            return Err(ModelError::Input(format!("label id {l} out of range")));
        }
    }
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    let needed = label.len() + repeats;
    if t_frames < needed {
        return Err(ModelError::InfeasibleLabel { needed, have: t_frames });
    }
    let lp = |t: usize, k: usize| logprobs[t * v + k];
    let s_count = 2 * label.len() + 1;
    let lab = |s: usize| if s % 2 == 0 { Vocabulary::BLANK } else { label[(s - 1) / 2] };
    let neg_inf = f64::NEG_INFINITY;
    let lse2 = |a: f64, b: f64| {
        if a == neg_inf && b == neg_inf {
            neg_inf
        } else {
            let m = a.max(b);
            m + ((a - m).exp() + (b - m).exp()).ln()
        }
    };
    let lse3 = |a: f64, b: f64, c: f64| lse2(lse2(a, b), c);
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && label[(s - 1) / 2] != label[(s - 3) / 2];

    let mut alpha = vec![neg_inf; t_frames * s_count];
    alpha[0] = lp(0, Vocabulary::BLANK);
    if s_count > 1 {
        alpha[1] = lp(0, lab(1));
    }
    for t in 1..t_frames {
        for s in 0..s_count {
            let stay = alpha[(t - 1) * s_count + s];
            let step = if s >= 1 { alpha[(t - 1) * s_count + s - 1] } else { neg_inf };
            let skip = if can_skip(s) { alpha[(t - 1) * s_count + s - 2] } else { neg_inf };
            let prev = lse3(stay, step, skip);
            alpha[t * s_count + s] = if prev == neg_inf { neg_inf } else { prev + lp(t, lab(s)) };
        }
    }
    let last = (t_frames - 1) * s_count;
    let log_p = if s_count > 1 {
        lse2(alpha[last + s_count - 1], alpha[last + s_count - 2])
    } else {
        alpha[last]
    };
    if log_p == neg_inf {
        return Err(ModelError::Contract("zero-probability label".into()));
    }

    let mut beta = vec![neg_inf; t_frames * s_count];
    beta[last + s_count - 1] = lp(t_frames - 1, lab(s_count - 1));
    if s_count > 1 {
        beta[last + s_count - 2] = lp(t_frames - 1, lab(s_count - 2));
    }
    for t in (0..t_frames - 1).rev() {
        for s in 0..s_count {
            let stay = beta[(t + 1) * s_count + s];
            let step = if s + 1 < s_count { beta[(t + 1) * s_count + s + 1] } else { neg_inf };
            let skip = if s + 2 < s_count && can_skip(s + 2) {
                beta[(t + 1) * s_count + s + 2]
            } else {
                neg_inf
            };
            let next = lse3(stay, step, skip);
            beta[t * s_count + s] = if next == neg_inf { neg_inf } else { next + lp(t, lab(s)) };
        }
    }

    let mut grad = vec![0.0; t_frames * v];
    for t in 0..t_frames {
        let mut acc = vec![neg_inf; v];
        for s in 0..s_count {
            let ab = alpha[t * s_count + s] + beta[t * s_count + s];
            if ab != neg_inf {
                let k = lab(s);
                acc[k] = lse2(acc[k], ab);
            }
        }
        for k in 0..v {
            if acc[k] != neg_inf {
                grad[t * v + k] = -((acc[k] - log_p - lp(t, k)).exp());
            }
        }
    }
    Ok((-log_p, grad))
}

/// CTC loss as a differentiable graph node.
pub fn ctc_loss_graph(g: &mut Graph, logprobs: TensorRef, label: &[usize]) -> Result<TensorRef> {
    let (t_frames, v) = g.shape(logprobs);
    let (loss, grad) = ctc_forward_backward(g.value(logprobs), t_frames, v, label)?;
    Ok(g.custom_scalar(loss, logprobs, grad)?)
}

/// Standalone CTC loss on a T x V log-probability matrix.
pub fn ctc_loss(logprobs: &[Vec<f64>], label: &[usize]) -> Result<f64> {
    let t_frames = logprobs.len();
    if t_frames == 0 {
        return Err(ModelError::Input("empty log-probability matrix".into()));
    }
    let v = logprobs[0].len();
    let flat: Vec<f64> = logprobs.iter().flatten().copied().collect();
    Ok(ctc_forward_backward(&flat, t_frames, v, label)?.0)
}

/// Best-path decoding: per-frame argmax, collapse repeats, drop blanks.
pub fn greedy_decode(logprobs: &[Vec<f64>], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    let mut prev = usize::MAX;
    for row in logprobs {
        let arg = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if arg != prev {
            if let Some(c) = vocab.char_of(arg) {
                out.push(c);
            }
        }
        prev = arg;
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub batch: usize,
}

fn init_param(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Param {
    let std = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| standard_normal(rng) * std).collect();
    Param { rows, cols, data }
}

fn zero_param(rows: usize, cols: usize) -> Param {
    Param { rows, cols, data: vec![0.0; rows * cols] }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn init_params(arch: Arch, vocab: &Vocabulary, feat: &FeatureConfig, seed: u64) -> ParamMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab.size();
    let b = feat.n_bins;
    let mut p = ParamMap::new();
    match arch {
        Arch::FfCtc => {
            let input = (2 * FF_CONTEXT + 1) * b;
            p.insert("ff.w1".into(), init_param(&mut rng, input, FF_HIDDEN, input));
            p.insert("ff.b1".into(), zero_param(1, FF_HIDDEN));
            p.insert("ff.w2".into(), init_param(&mut rng, FF_HIDDEN, FF_HIDDEN, FF_HIDDEN));
            p.insert("ff.b2".into(), zero_param(1, FF_HIDDEN));
            p.insert("ff.wo".into(), init_param(&mut rng, FF_HIDDEN, v, FF_HIDDEN));
            p.insert("ff.bo".into(), zero_param(1, v));
        }
        Arch::RnnCtc => {
            p.insert("rnn.wx".into(), init_param(&mut rng, b, RNN_HIDDEN, b));
            p.insert("rnn.wh".into(), init_param(&mut rng, RNN_HIDDEN, RNN_HIDDEN, RNN_HIDDEN));
            p.insert("rnn.b".into(), zero_param(1, RNN_HIDDEN));
            p.insert("rnn.wo".into(), init_param(&mut rng, RNN_HIDDEN, v, RNN_HIDDEN));
            p.insert("rnn.bo".into(), zero_param(1, v));
        }
        Arch::EncHead => {
            let mut enc = init_encoder_params(feat, seed);
            p.append(&mut enc);
            p.insert("head.w".into(), init_param(&mut rng, ENC_HIDDEN, v, ENC_HIDDEN));
            p.insert("head.b".into(), zero_param(1, v));
        }
    }
    p
}

pub fn init_encoder_params(feat: &FeatureConfig, seed: u64) -> ParamMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f5f_5f5f);
    let b = feat.n_bins;
    let mut p = ParamMap::new();
    p.insert("enc.l1.wx".into(), init_param(&mut rng, b, ENC_HIDDEN, b));
    p.insert("enc.l1.wh".into(), init_param(&mut rng, ENC_HIDDEN, ENC_HIDDEN, ENC_HIDDEN));
    p.insert("enc.l1.b".into(), zero_param(1, ENC_HIDDEN));
    p.insert("enc.l2.wx".into(), init_param(&mut rng, ENC_HIDDEN, ENC_HIDDEN, ENC_HIDDEN));
    p.insert("enc.l2.wh".into(), init_param(&mut rng, ENC_HIDDEN, ENC_HIDDEN, ENC_HIDDEN));
    p.insert("enc.l2.b".into(), zero_param(1, ENC_HIDDEN));
    p.insert("enc.proj.w".into(), init_param(&mut rng, b, ENC_HIDDEN, b));
    p.insert("enc.proj.b".into(), zero_param(1, ENC_HIDDEN));
    p
}

impl TrainedModel {
    /// T x V log-probabilities for raw samples.
    pub fn logprobs(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let wave = g.constant(1, samples.len(), samples.to_vec())?;
        let leaves = build_leaves(&mut g, &self.params, None)?;
        let lp = forward_graph(&mut g, self.arch, &leaves, wave, &self.feat)?;
        let (t, v) = g.shape(lp);
        let data = g.value(lp);
        Ok((0..t).map(|i| data[i * v..(i + 1) * v].to_vec()).collect())
    }

    pub fn decode(&self, samples: &[f64]) -> Result<String> {
        Ok(greedy_decode(&self.logprobs(samples)?, &self.vocab))
    }

    /// CTC loss of `samples` against `label`, no gradients.
    pub fn loss(&self, samples: &[f64], label: &[usize]) -> Result<f64> {
        let lp = self.logprobs(samples)?;
        ctc_loss(&lp, label)
    }

    /// CTC loss and its gradient w.r.t. the input samples.
    pub fn loss_and_input_grad(&self, samples: &[f64], label: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let wave = g.leaf(1, samples.len(), samples.to_vec(), true)?;
        let leaves = build_leaves(&mut g, &self.params, None)?;
        let lp = forward_graph(&mut g, self.arch, &leaves, wave, &self.feat)?;
        let loss = ctc_loss_graph(&mut g, lp, label)?;
        let value = g.value(loss)[0];
        let grads = g.backward(loss)?;
        Ok((value, grads.of(wave, samples.len())))
    }

    pub fn has_encoder(&self) -> bool {
        matches!(self.arch, Arch::EncHead)
    }

    pub fn encoder_representation(&self, samples: &[f64]) -> Result<ContextRepr> {
        if !self.has_encoder() {
            return Err(ModelError::Contract(format!("{} has no encoder", self.arch.tag())));
        }
        encoder_representation(&self.params, &self.feat, samples)
    }
}

impl PretrainedEncoder {
    pub fn encoder_representation(&self, samples: &[f64]) -> Result<ContextRepr> {
        encoder_representation(&self.params, &self.feat, samples)
    }
}

pub fn encoder_representation(
    params: &ParamMap,
    feat: &FeatureConfig,
    samples: &[f64],
) -> Result<ContextRepr> {
    let mut g = Graph::new();
    let wave = g.constant(1, samples.len(), samples.to_vec())?;
    let leaves = build_leaves(&mut g, params, None)?;
    let feats = extract_features_graph(&mut g, wave, feat)?;
    let x = normalized(&mut g, feats);
    let c = encoder_graph(&mut g, x, &leaves)?;
    let (t, d) = g.shape(c);
    Ok(ContextRepr { frames: t, dim: d, data: g.value(c).to_vec() })
}

/// Squared distance ||c(x') - c_ref||^2 and its gradient w.r.t. `samples`.
pub fn repr_distance_and_grad(
    params: &ParamMap,
    feat: &FeatureConfig,
    samples: &[f64],
    reference: &ContextRepr,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let wave = g.leaf(1, samples.len(), samples.to_vec(), true)?;
    let leaves = build_leaves(&mut g, params, None)?;
    let feats = extract_features_graph(&mut g, wave, feat)?;
    let x = normalized(&mut g, feats);
    let c = encoder_graph(&mut g, x, &leaves)?;
    let (t, d) = g.shape(c);
    if t != reference.frames || d != reference.dim {
        return Err(ModelError::Contract("representation shape mismatch".into()));
    }
    let cref = g.constant(t, d, reference.data.clone())?;
    let diff = g.sub(c, cref)?;
    let sq = g.mul(diff, diff)?;
    let loss = g.sum(sq);
    let value = g.value(loss)[0];
    let grads = g.backward(loss)?;
    Ok((value, grads.of(wave, samples.len())))
}

struct Trainer {
    states: BTreeMap<String, AdamState>,
    cfg: AdamConfig,
}

impl Trainer {
    fn new(params: &ParamMap, lr: f64) -> Self {
        let states = params.iter().map(|(k, p)| (k.clone(), AdamState::new(p.data.len()))).collect();
        Trainer { states, cfg: AdamConfig { lr, ..Default::default() } }
    }

    fn apply(
        &mut self,
        params: &mut ParamMap,
        leaves: &BTreeMap<String, TensorRef>,
        grads: &Gradients,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Result<()> {
        for (name, p) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let g = grads.of(leaves[name], p.data.len());
            adam_step(&mut p.data, &g, self.states.get_mut(name).unwrap(), &self.cfg)?;
        }
        Ok(())
    }
}

fn batch_indices(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch.min(n)).map(|_| rng.random_range(0..n)).collect()
}

fn run_training(
    params: &mut ParamMap,
    corpus: &[Utterance],
    hyper: &Hyper,
    trainable: &dyn Fn(&str) -> bool,
    mut loss_graph: impl FnMut(&mut Graph, &BTreeMap<String, TensorRef>, &Utterance) -> Result<TensorRef>,
) -> Result<()> {
    if corpus.is_empty() {
        return Err(ModelError::Input("empty training corpus".into()));
    }
    if hyper.lr == 0.0 {
        return Ok(()); // zero learning rate leaves parameters at initialization
    }
    let mut trainer = Trainer::new(params, hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x9e37_79b9));
    for step in 0..hyper.steps {
        let batch = batch_indices(&mut rng, corpus.len(), hyper.batch.max(1));
        let mut g = Graph::new();
        let leaves = build_leaves(&mut g, params, Some(trainable))?;
        let mut losses = Vec::with_capacity(batch.len());
        for &i in &batch {
            losses.push(loss_graph(&mut g, &leaves, &corpus[i])?);
        }
        let stacked = g.concat_rows(&losses)?;
        let loss = g.mean(stacked);
        if !g.value(loss)[0].is_finite() {
            return Err(ModelError::Diverged { step });
        }
        let grads = g.backward(loss)?;
        trainer.apply(params, &leaves, &grads, trainable)?;
    }
    Ok(())
}

/// Supervised CTC training from random initialization.
pub fn train_supervised(
    arch: Arch,
    corpus: &[Utterance],
    vocab: &Vocabulary,
    feat: &FeatureConfig,
    hyper: &Hyper,
) -> Result<TrainedModel> {
    let mut params = init_params(arch, vocab, feat, hyper.seed);
    let labels: Vec<Vec<usize>> = corpus
        .iter()
        .map(|u| vocab.encode(&u.transcript))
        .collect::<Result<_>>()?;
    let label_of: BTreeMap<&str, &[usize]> = corpus
        .iter()
        .zip(&labels)
        .map(|(u, l)| (u.id.as_str(), l.as_slice()))
        .collect();
    run_training(&mut params, corpus, hyper, &|_| true, |g, leaves, utt| {
        let wave = g.constant(1, utt.waveform.len(), utt.waveform.samples().to_vec())?;
        let lp = forward_graph(g, arch, leaves, wave, feat)?;
        ctc_loss_graph(g, lp, label_of[utt.id.as_str()])
    })?;
    Ok(TrainedModel {
        arch,
        params,
        vocab: vocab.clone(),
        feat: *feat,
        provenance: Provenance::Scratch { seed: hyper.seed },
    })
}

/// Label-free contrastive pretraining: each context frame must pick out its
/// own (detached) projected feature frame among all in-utterance frames.
pub fn pretrain_contrastive(
    corpus: &[Utterance],
    feat: &FeatureConfig,
    hyper: &Hyper,
    id: &str,
) -> Result<PretrainedEncoder> {
    let mut params = init_encoder_params(feat, hyper.seed);
    run_training(&mut params, corpus, hyper, &|name| !name.starts_with("enc.proj"), |g, leaves, utt| {
        let wave = g.constant(1, utt.waveform.len(), utt.waveform.samples().to_vec())?;
        let feats = extract_features_graph(g, wave, feat)?;
        let x = normalized(g, feats);
        let c = encoder_graph(g, x, leaves)?;
        let z_raw = affine(g, x, leaves["enc.proj.w"], leaves["enc.proj.b"])?;
        let z = g.detach(z_raw);
        let zt = g.transpose(z);
        let scores = g.matmul(c, zt)?;
        let scores = g.mul_scalar(scores, 1.0 / (ENC_HIDDEN as f64).sqrt());
        let ls = g.log_softmax(scores);
        let t = g.shape(ls).0;
        let mut eye = vec![0.0; t * t];
        for i in 0..t {
            eye[i * t + i] = 1.0;
        }
        let mask = g.constant(t, t, eye)?;
        let diag = g.mul(mask, ls)?;
        let total = g.sum(diag);
        Ok(g.mul_scalar(total, -1.0 / t as f64))
    })?;
    Ok(PretrainedEncoder { id: id.to_string(), params, feat: *feat })
}

/// Fraction of held-out frames whose context vector scores its own projected
/// feature frame above `n_distractors` random in-utterance frames.
pub fn frame_match_accuracy(
    enc: &PretrainedEncoder,
    corpus: &[Utterance],
    n_distractors: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut total = 0usize;
    for utt in corpus {
        let mut g = Graph::new();
        let wave = g.constant(1, utt.waveform.len(), utt.waveform.samples().to_vec())?;
        let leaves = build_leaves(&mut g, &enc.params, None)?;
        let feats = extract_features_graph(&mut g, wave, &enc.feat)?;
        let x = normalized(&mut g, feats);
        let c = encoder_graph(&mut g, x, &leaves)?;
        let z = affine(&mut g, x, leaves["enc.proj.w"], leaves["enc.proj.b"])?;
        let (t, d) = g.shape(c);
        let cv = g.value(c).to_vec();
        let zv = g.value(z).to_vec();
        let score = |i: usize, j: usize| -> f64 {
            (0..d).map(|k| cv[i * d + k] * zv[j * d + k]).sum()
        };
        for i in 0..t {
            if t < 2 {
                continue;
            }
            let own = score(i, i);
            let mut beaten = true;
            for _ in 0..n_distractors {
                let mut j = rng.random_range(0..t);
                while j == i {
                    j = rng.random_range(0..t);
                }
                if score(i, j) >= own {
                    beaten = false;
                    break;
                }
            }
            hits += usize::from(beaten);
            total += 1;
        }
    }
    if total == 0 {
        return Err(ModelError::Input("no frames to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Attaches and trains a linear CTC head on a pretrained encoder.
pub fn finetune_head(
    encoder: &PretrainedEncoder,
    corpus: &[Utterance],
    vocab: &Vocabulary,
    hyper: &Hyper,
    freeze_encoder: bool,
) -> Result<TrainedModel> {
    let mut params: ParamMap = encoder
        .params
        .iter()
        .filter(|(k, _)| !k.starts_with("enc.proj"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0xabcd_1234);
    let v = vocab.size();
    params.insert("head.w".into(), init_param(&mut rng, ENC_HIDDEN, v, ENC_HIDDEN));
    params.insert("head.b".into(), zero_param(1, v));
    let feat = encoder.feat;
    let labels: Vec<Vec<usize>> = corpus
        .iter()
        .map(|u| vocab.encode(&u.transcript))
        .collect::<Result<_>>()?;
    let label_of: BTreeMap<&str, &[usize]> = corpus
        .iter()
        .zip(&labels)
        .map(|(u, l)| (u.id.as_str(), l.as_slice()))
        .collect();
    let trainable = move |name: &str| !freeze_encoder || name.starts_with("head.");
    run_training(&mut params, corpus, hyper, &trainable, |g, leaves, utt| {
        let wave = g.constant(1, utt.waveform.len(), utt.waveform.samples().to_vec())?;
        let lp = forward_graph(g, Arch::EncHead, leaves, wave, &feat)?;
        ctc_loss_graph(g, lp, label_of[utt.id.as_str()])
    })?;
    Ok(TrainedModel {
        arch: Arch::EncHead,
        params,
        vocab: vocab.clone(),
        feat,
        provenance: Provenance::Finetuned { pretrain_id: encoder.id.clone(), seed: hyper.seed },
    })
}

// ---------------------------------------------------------------------------
// checkpoint container: versioned binary, bitwise round trip

const CKPT_MAGIC: &[u8; 4] = b"AVSP";
const CKPT_VERSION: u32 = 1;

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_params(out: &mut Vec<u8>, params: &ParamMap) {
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params {
        write_string(out, name);
        out.extend_from_slice(&(p.rows as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols as u32).to_le_bytes());
        for v in &p.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

fn write_feat(out: &mut Vec<u8>, feat: &FeatureConfig) {
    out.extend_from_slice(&(feat.frame_len as u32).to_le_bytes());
    out.extend_from_slice(&(feat.hop as u32).to_le_bytes());
    out.extend_from_slice(&(feat.n_bins as u32).to_le_bytes());
    out.extend_from_slice(&feat.floor.to_bits().to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| ModelError::Checkpoint("bad utf8".into()))
    }

    fn params(&mut self) -> Result<ParamMap> {
        let n = self.u32()? as usize;
        let mut out = ParamMap::new();
        for _ in 0..n {
            let name = self.string()?;
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(self.f64()?);
            }
            out.insert(name, Param { rows, cols, data });
        }
        Ok(out)
    }

    fn feat(&mut self) -> Result<FeatureConfig> {
        Ok(FeatureConfig {
            frame_len: self.u32()? as usize,
            hop: self.u32()? as usize,
            n_bins: self.u32()? as usize,
            floor: self.f64()?,
        })
    }
}

pub fn save_model<P: AsRef<Path>>(m: &TrainedModel, path: P) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.push(0); // kind: full model
    out.push(match m.arch {
        Arch::FfCtc => 0,
        Arch::RnnCtc => 1,
        Arch::EncHead => 2,
    });
    let chars: String = m.vocab.chars().iter().collect();
    write_string(&mut out, &chars);
    write_feat(&mut out, &m.feat);
    match &m.provenance {
        Provenance::Scratch { seed } => {
            out.push(0);
            out.extend_from_slice(&seed.to_le_bytes());
            write_string(&mut out, "");
        }
        Provenance::Finetuned { pretrain_id, seed } => {
            out.push(1);
            out.extend_from_slice(&seed.to_le_bytes());
            write_string(&mut out, pretrain_id);
        }
    }
    write_params(&mut out, &m.params);
    File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn save_encoder<P: AsRef<Path>>(e: &PretrainedEncoder, path: P) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.push(1); // kind: encoder
    write_string(&mut out, &e.id);
    write_feat(&mut out, &e.feat);
    write_params(&mut out, &e.params);
    File::create(path)?.write_all(&out)?;
    Ok(())
}

fn open_reader(bytes: &[u8]) -> Result<Reader<'_>> {
    if bytes.len() < 9 || &bytes[0..4] != CKPT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    Ok(Reader { buf: bytes, pos: 8 })
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<TrainedModel> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = open_reader(&bytes)?;
    if r.take(1)?[0] != 0 {
        return Err(ModelError::Checkpoint("not a model checkpoint".into()));
    }
    let arch = match r.take(1)?[0] {
        0 => Arch::FfCtc,
        1 => Arch::RnnCtc,
        2 => Arch::EncHead,
        other => return Err(ModelError::Checkpoint(format!("unknown arch tag {other}"))),
    };
    let chars = r.string()?;
    let vocab = Vocabulary::new(chars.chars().collect())?;
    let feat = r.feat()?;
    let provenance = match r.take(1)?[0] {
        0 => {
            let seed = r.u64()?;
            let _ = r.string()?;
            Provenance::Scratch { seed }
        }
        1 => {
            let seed = r.u64()?;
            let pretrain_id = r.string()?;
            Provenance::Finetuned { pretrain_id, seed }
        }
        other => return Err(ModelError::Checkpoint(format!("unknown provenance tag {other}"))),
    };
    let params = r.params()?;
    Ok(TrainedModel { arch, params, vocab, feat, provenance })
}

pub fn load_encoder<P: AsRef<Path>>(path: P) -> Result<PretrainedEncoder> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = open_reader(&bytes)?;
    if r.take(1)?[0] != 1 {
        return Err(ModelError::Checkpoint("not an encoder checkpoint".into()));
    }
    let id = r.string()?;
    let feat = r.feat()?;
    let params = r.params()?;
    Ok(PretrainedEncoder { id, params, feat })
}
