//! Attack families: PGD (L2/Linf), Carlini&Wagner, genetic black-box,
//! Kenansville spectral deletion, the label-free SSL representation attack,
//! and cross-model transfer application.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Utterance;
use crate::dsp;
use crate::grad::{adam_step, AdamConfig, AdamState};
use crate::metrics::{self, AttackRecord};
use crate::model::{self, ContextRepr, ModelError, PretrainedEncoder, TrainedModel};
use crate::signal::{self, eps_from_snr, norm, snr_db, NormKind, Perturbation, Waveform};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("signal error: {0}")]
    Signal(#[from] signal::SignalError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("dsp error: {0}")]
    Dsp(#[from] dsp::DspError),
    #[error("metric error: {0}")]
    Metric(#[from] metrics::MetricError),
    #[error("invalid attack config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    Numeric { step: usize },
    #[error("target infeasible: needs {needed} frames, have {have}")]
    InfeasibleTarget { needed: usize, have: usize },
}

pub type Result<T> = std::result::Result<T, AttackError>;

/// Attack output: the perturbation plus bookkeeping.
#[derive(Debug, Clone)]
pub struct AdversarialExample {
    pub utterance_id: String,
    pub delta: Perturbation,
    pub snr_db: f64,
    pub attack: String,
    pub target: Option<String>,
    pub succeeded: Option<bool>,
}

/// Either a perturbation budget or the SNR it is derived from.
#[derive(Debug, Clone, Copy)]
pub enum Bound {
    Eps(f64),
    SnrDb(f64),
}

impl Bound {
    /// Resolves to a radius in the given norm. An explicit eps is taken as
    /// is; an SNR bound is converted to an L2 radius, and for Linf spread
    /// over the samples (E||u||_2 = eps*sqrt(L/3) for uniform u in the box).
    fn eps_for(&self, x: &Waveform, kind: NormKind) -> Result<f64> {
        match *self {
            Bound::Eps(e) if e > 0.0 => Ok(e),
            Bound::Eps(e) => Err(AttackError::Config(format!("eps must be positive, got {e}"))),
            Bound::SnrDb(s) => {
                let l2 = eps_from_snr(x, s)?;
                Ok(match kind {
                    NormKind::L2 => l2,
                    NormKind::Linf => l2 / (x.len() as f64 / 3.0).sqrt(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PgdConfig {
    pub norm: NormKind,
    pub bound: Bound,
    pub steps: usize,
    /// Step size as a fraction of eps; defaults to 2.5/steps.
    pub step_frac: Option<f64>,
    pub rand_init: bool,
    pub seed: u64,
}

impl PgdConfig {
    pub fn new(norm: NormKind, bound: Bound) -> Self {
        PgdConfig { norm, bound, steps: 100, step_frac: None, rand_init: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CwConfig {
    pub c: f64,
    pub lr: f64,
    pub steps: usize,
    /// Initial Linf constraint; defaults to eps_from_snr(x, 10 dB).
    pub eps_init: Option<f64>,
    pub decay: f64,
    pub check_every: usize,
}

impl Default for CwConfig {
    fn default() -> Self {
        CwConfig { c: 1.0, lr: 0.01, steps: 5000, eps_init: None, decay: 0.8, check_every: 50 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeneticConfig {
    pub pop: usize,
    pub iters: usize,
    pub bound: Bound,
    pub mut_std: f64,
    pub elite: usize,
    pub seed: u64,
}

impl GeneticConfig {
    pub fn new(bound: Bound) -> Self {
        GeneticConfig { pop: 50, iters: 2000, bound, mut_std: 0.05, elite: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KenansvilleConfig {
    pub snr_db: f64,
    pub tol_db: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SslConfig {
    pub bound: Bound,
    pub steps: usize,
    pub step_frac: Option<f64>,
    pub seed: u64,
}

impl SslConfig {
    pub fn new(bound: Bound) -> Self {
        SslConfig { bound, steps: 500, step_frac: None, seed: 0 }
    }
}

/// Projects delta onto the eps-ball of the given norm. In-ball input is
/// returned unchanged.
pub fn project(delta: &[f64], eps: f64, kind: NormKind) -> Vec<f64> {
    match kind {
        NormKind::Linf => delta.iter().map(|d| d.clamp(-eps, eps)).collect(),
        NormKind::L2 => {
            let n = norm(delta, NormKind::L2);
            if n > eps {
                let s = eps / n;
                delta.iter().map(|d| d * s).collect()
            } else {
                delta.to_vec()
            }
        }
    }
}

fn per_utt_seed(seed: u64, utt_id: &str) -> u64 {
    // FNV-1a over the utterance id, mixed with the global seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in utt_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed
}

fn effective_delta(x: &Waveform, delta: &[f64]) -> Vec<f64> {
    x.samples()
        .iter()
        .zip(delta)
        .map(|(s, d)| (s + d).clamp(-1.0, 1.0) - s)
        .collect()
}

/// Iterative projected gradient ascent shared by PGD and the SSL attack.
/// `loss_grad` returns (loss, d loss / d input) at clip(x + delta).
fn projected_ascent(
    x: &Waveform,
    eps: f64,
    steps: usize,
    step_frac: Option<f64>,
    norm_kind: NormKind,
    rand_init: bool,
    seed: u64,
    mut loss_grad: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<Vec<f64>> {
    let len = x.len();
    let mut delta = vec![0.0; len];
    if rand_init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in delta.iter_mut() {
            *d = rng.random_range(-eps..eps);
        }
        delta = project(&delta, eps, norm_kind);
    }
    let alpha = step_frac.unwrap_or(2.5 / steps.max(1) as f64) * eps;
    for step in 0..steps {
        let adv: Vec<f64> =
            x.samples().iter().zip(&delta).map(|(s, d)| (s + d).clamp(-1.0, 1.0)).collect();
        let (loss, grad) = loss_grad(&adv)?;
        if !loss.is_finite() {
            return Err(AttackError::Numeric { step });
        }
        let dir: Vec<f64> = match norm_kind {
            NormKind::Linf => grad.iter().map(|g| g.signum()).collect(),
            NormKind::L2 => {
                let n = norm(&grad, NormKind::L2);
                if n == 0.0 {
                    vec![0.0; len]
                } else {
                    grad.iter().map(|g| g / n).collect()
                }
            }
        };
        for (d, v) in delta.iter_mut().zip(&dir) {
            *d += alpha * v;
        }
        delta = project(&delta, eps, norm_kind);
    }
    Ok(effective_delta(x, &delta))
}

/// Untargeted PGD maximizing CTC loss on the true label.
pub fn pgd(model: &TrainedModel, utt: &Utterance, cfg: &PgdConfig) -> Result<AdversarialExample> {
    let label = model.vocab.encode(&utt.transcript)?;
    let x = &utt.waveform;
    let eps = cfg.bound.eps_for(x, cfg.norm)?;
    let delta = projected_ascent(
        x,
        eps,
        cfg.steps,
        cfg.step_frac,
        cfg.norm,
        cfg.rand_init,
        per_utt_seed(cfg.seed, &utt.id),
        |adv| Ok(model.loss_and_input_grad(adv, &label)?),
    )?;
    let delta = Perturbation::new(delta)?;
    let snr = snr_db(x, &delta)?;
    Ok(AdversarialExample {
        utterance_id: utt.id.clone(),
        delta,
        snr_db: snr,
        attack: format!(
            "pgd{{norm={:?},steps={},eps={eps:.6e}}}",
            cfg.norm, cfg.steps
        ),
        target: None,
        succeeded: None,
    })
}

/// Targeted Carlini&Wagner: Adam on c*CTC(x+delta, target) + ||delta||_2^2
/// under a shrinking Linf constraint.
pub fn cw_attack(
    model: &TrainedModel,
    utt: &Utterance,
    target: &str,
    cfg: &CwConfig,
) -> Result<AdversarialExample> {
    let target_ids = model.vocab.encode(target)?;
    let x = &utt.waveform;
    let frames = model.feat.frame_count(x.len())?;
    let repeats = target_ids.windows(2).filter(|w| w[0] == w[1]).count();
    let needed = target_ids.len() + repeats;
    if frames < needed {
        return Err(AttackError::InfeasibleTarget { needed, have: frames });
    }
    let digest = format!(
        "cw{{c={},lr={},steps={},decay={},check_every={}}}",
        cfg.c, cfg.lr, cfg.steps, cfg.decay, cfg.check_every
    );
    let make = |delta: Vec<f64>, snr: f64, succeeded: bool| -> Result<AdversarialExample> {
        Ok(AdversarialExample {
            utterance_id: utt.id.clone(),
            delta: Perturbation::new(delta)?,
            snr_db: snr,
            attack: digest.clone(),
            target: Some(target.to_string()),
            succeeded: Some(succeeded),
        })
    };
    if metrics::attack_success(&model.decode(x.samples())?, target) {
        return make(vec![0.0; x.len()], f64::INFINITY, true);
    }
    if cfg.steps == 0 {
        return make(vec![0.0; x.len()], f64::INFINITY, false);
    }
    if !(cfg.decay > 0.0 && cfg.decay < 1.0) {
        return Err(AttackError::Config(format!("decay must be in (0,1), got {}", cfg.decay)));
    }
    let mut eps_current = match cfg.eps_init {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(AttackError::Config(format!("eps_init must be positive, got {e}"))),
        None => eps_from_snr(x, 10.0)?,
    };
    let mut delta = vec![0.0; x.len()];
    let mut adam = AdamState::new(x.len());
    let adam_cfg = AdamConfig { lr: cfg.lr, ..Default::default() };
    let mut best: Option<Vec<f64>> = None;
    for step in 1..=cfg.steps {
        let adv: Vec<f64> =
            x.samples().iter().zip(&delta).map(|(s, d)| (s + d).clamp(-1.0, 1.0)).collect();
        let (loss, ctc_grad) = model.loss_and_input_grad(&adv, &target_ids)?;
        if !loss.is_finite() {
            return Err(AttackError::Numeric { step });
        }
        let grad: Vec<f64> =
            ctc_grad.iter().zip(&delta).map(|(g, d)| cfg.c * g + 2.0 * d).collect();
        adam_step(&mut delta, &grad, &mut adam, &adam_cfg).map_err(ModelError::Grad)?;
        delta = project(&delta, eps_current, NormKind::Linf);
        if cfg.check_every > 0 && step % cfg.check_every == 0 {
            let eff = effective_delta(x, &delta);
            let adv: Vec<f64> = x.samples().iter().zip(&eff).map(|(s, d)| s + d).collect();
            if metrics::attack_success(&model.decode(&adv)?, target) {
                let linf = norm(&eff, NormKind::Linf);
                let better = best
                    .as_ref()
                    .map(|b| linf < norm(b, NormKind::Linf))
                    .unwrap_or(true);
                if better {
                    best = Some(eff);
                }
                eps_current = cfg.decay * linf;
            }
        }
    }
    match best {
        Some(b) => {
            let snr = snr_db(x, &Perturbation::new(b.clone())?)?;
            make(b, snr, true)
        }
        None => {
            let eff = effective_delta(x, &delta);
            let snr = snr_db(x, &Perturbation::new(eff.clone())?)?;
            make(eff, snr, false)
        }
    }
}

/// Black-box genetic attack: Linf-bounded population, CTC loss on the true
/// label as fitness, elitism plus uniform crossover and Gaussian mutation.
pub fn genetic_attack(
    model: &TrainedModel,
    utt: &Utterance,
    cfg: &GeneticConfig,
) -> Result<AdversarialExample> {
    if cfg.pop == 0 || cfg.elite == 0 || cfg.elite > cfg.pop {
        return Err(AttackError::Config("need 0 < elite <= pop".into()));
    }
    let label = model.vocab.encode(&utt.transcript)?;
    let x = &utt.waveform;
    let len = x.len();
    let eps = cfg.bound.eps_for(x, NormKind::Linf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(per_utt_seed(cfg.seed, &utt.id));
    let fitness = |delta: &[f64]| -> Result<f64> {
        let adv: Vec<f64> =
            x.samples().iter().zip(delta).map(|(s, d)| (s + d).clamp(-1.0, 1.0)).collect();
        Ok(model.loss(&adv, &label)?)
    };
    let mut pop: Vec<Vec<f64>> = (0..cfg.pop)
        .map(|_| (0..len).map(|_| rng.random_range(-eps..eps)).collect())
        .collect();
    let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(cfg.pop);
    for member in pop.drain(..) {
        scored.push((fitness(&member)?, member));
    }
    sort_by_fitness(&mut scored);
    for _gen in 0..cfg.iters {
        let mut next: Vec<(f64, Vec<f64>)> = scored[..cfg.elite].to_vec();
        while next.len() < cfg.pop {
            let a = pick_parent(&scored, &mut rng);
            let b = pick_parent(&scored, &mut rng);
            let mut child: Vec<f64> = (0..len)
                .map(|i| if rng.random_range(0.0..1.0) < 0.5 { scored[a].1[i] } else { scored[b].1[i] })
                .collect();
            for v in child.iter_mut() {
                *v += gaussian(&mut rng) * cfg.mut_std * eps;
            }
            let child = project(&child, eps, NormKind::Linf);
            next.push((fitness(&child)?, child));
        }
        scored = next;
        sort_by_fitness(&mut scored);
    }
    let best = effective_delta(x, &scored[0].1);
    let delta = Perturbation::new(best)?;
    let snr = snr_db(x, &delta)?;
    Ok(AdversarialExample {
        utterance_id: utt.id.clone(),
        delta,
        snr_db: snr,
        attack: format!(
            "genetic{{pop={},iters={},elite={},mut_std={},eps={eps:.6e}}}",
            cfg.pop, cfg.iters, cfg.elite, cfg.mut_std
        ),
        target: None,
        succeeded: None,
    })
}

fn sort_by_fitness(scored: &mut [(f64, Vec<f64>)]) {
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
}

fn pick_parent(scored: &[(f64, Vec<f64>)], rng: &mut ChaCha8Rng) -> usize {
    let min = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = scored.iter().map(|s| s.0 - min + 1e-9).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    scored.len() - 1
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Result of the deterministic lowest-PSD prefix selection.
pub struct KenansvillePlan {
    /// Bin indices to zero, in removal order (ascending power, ties by index).
    pub removed: Vec<usize>,
    pub saturated: bool,
}

/// Largest lowest-power prefix whose removal keeps the SNR at or above the
/// target. Pure selection logic, exposed for oracle testing.
pub fn kenansville_plan(power: &[f64], target_snr_db: f64) -> KenansvillePlan {
    let mut order: Vec<usize> = (0..power.len()).collect();
    order.sort_by(|&a, &b| {
        power[a].partial_cmp(&power[b]).unwrap().then(a.cmp(&b))
    });
    let total: f64 = power.iter().sum();
    let mut cum = Vec::with_capacity(order.len());
    let mut acc = 0.0;
    for &k in &order {
        acc += power[k];
        cum.push(acc);
    }
    let snr_of = |m: usize| -> f64 {
        if m == 0 || cum[m - 1] == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (total / cum[m - 1]).log10()
        }
    };
    // binary search for the largest prefix still meeting the target;
    // never remove the top-power bin
    let max_m = power.len().saturating_sub(1);
    let (mut lo, mut hi) = (0usize, max_m);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if snr_of(mid) >= target_snr_db {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let saturated = lo == max_m && snr_of(lo) > target_snr_db;
    KenansvillePlan { removed: order[..lo].to_vec(), saturated }
}

/// Model-free spectral attack: zeroes the lowest-PSD bins of the whole
/// utterance up to the requested SNR.
pub fn kenansville_attack(utt: &Utterance, cfg: &KenansvilleConfig) -> Result<AdversarialExample> {
    let x = &utt.waveform;
    let mut spec = dsp::rfft(x.samples())?;
    let psd = dsp::psd(&spec);
    let plan = kenansville_plan(&psd.power, cfg.snr_db);
    let delta = if plan.removed.is_empty() {
        // avoid a round-trip transform that would leave float dust in delta
        Perturbation::zeros(x.len())
    } else {
        for &k in &plan.removed {
            spec.bins[k] = (0.0, 0.0);
        }
        let rebuilt = dsp::irfft(&spec)?;
        Perturbation::new(rebuilt.iter().zip(x.samples()).map(|(r, s)| r - s).collect())?
    };
    let snr = snr_db(x, &delta)?;
    Ok(AdversarialExample {
        utterance_id: utt.id.clone(),
        delta,
        snr_db: snr,
        attack: format!(
            "kenansville{{snr_db={},tol_db={},removed={}{}}}",
            cfg.snr_db,
            cfg.tol_db,
            plan.removed.len(),
            if plan.saturated { ",saturated" } else { "" }
        ),
        target: None,
        succeeded: None,
    })
}

/// Anything exposing a contextual representation the SSL attack can push on.
pub trait EncoderModel {
    fn representation(&self, samples: &[f64]) -> Result<ContextRepr>;
    fn distance_and_grad(&self, samples: &[f64], reference: &ContextRepr) -> Result<(f64, Vec<f64>)>;
}

impl EncoderModel for TrainedModel {
    fn representation(&self, samples: &[f64]) -> Result<ContextRepr> {
        Ok(self.encoder_representation(samples)?)
    }

    fn distance_and_grad(&self, samples: &[f64], reference: &ContextRepr) -> Result<(f64, Vec<f64>)> {
        if !self.has_encoder() {
            return Err(AttackError::Model(ModelError::Contract(
                "model has no encoder".into(),
            )));
        }
        Ok(model::repr_distance_and_grad(&self.params, &self.feat, samples, reference)?)
    }
}

impl EncoderModel for PretrainedEncoder {
    fn representation(&self, samples: &[f64]) -> Result<ContextRepr> {
        Ok(self.encoder_representation(samples)?)
    }

    fn distance_and_grad(&self, samples: &[f64], reference: &ContextRepr) -> Result<(f64, Vec<f64>)> {
        Ok(model::repr_distance_and_grad(&self.params, &self.feat, samples, reference)?)
    }
}

/// Label-free Linf-PGD maximizing ||c(x+delta) - c(x)||^2 with c(x) fixed.
pub fn ssl_attack<E: EncoderModel>(
    encoder: &E,
    utt: &Utterance,
    cfg: &SslConfig,
) -> Result<AdversarialExample> {
    let x = &utt.waveform;
    let reference = encoder.representation(x.samples())?;
    let eps = cfg.bound.eps_for(x, NormKind::Linf)?;
    let delta = projected_ascent(
        x,
        eps,
        cfg.steps,
        cfg.step_frac,
        NormKind::Linf,
        false,
        per_utt_seed(cfg.seed, &utt.id),
        |adv| encoder.distance_and_grad(adv, &reference),
    )?;
    let delta = Perturbation::new(delta)?;
    let snr = snr_db(x, &delta)?;
    Ok(AdversarialExample {
        utterance_id: utt.id.clone(),
        delta,
        snr_db: snr,
        attack: format!("ssl{{steps={},eps={eps:.6e}}}", cfg.steps),
        target: None,
        succeeded: None,
    })
}

/// Applies a crafted perturbation to (possibly) another model and scores it.
pub fn transfer_apply(
    adv: &AdversarialExample,
    source_utt: &Utterance,
    target_model: &TrainedModel,
) -> Result<AttackRecord> {
    if adv.delta.len() != source_utt.waveform.len() {
        return Err(AttackError::Model(ModelError::Contract(
            "perturbation length does not match utterance".into(),
        )));
    }
    let perturbed = source_utt.waveform.add_clipped(&adv.delta)?;
    let decoded = target_model.decode(perturbed.samples())?;
    let wer_vs_label = metrics::wer(&decoded, &source_utt.transcript)?;
    let (wer_vs_target, success) = match &adv.target {
        Some(t) => (Some(metrics::wer(&decoded, t)?), Some(metrics::attack_success(&decoded, t))),
        None => (None, None),
    };
    Ok(AttackRecord {
        utterance_id: source_utt.id.clone(),
        decoded,
        wer_vs_label,
        wer_vs_target,
        success,
        snr_db: adv.snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn project_linf_clamps() {
        assert_eq!(project(&[0.3, -0.2], 0.1, NormKind::Linf), vec![0.1, -0.1]);
    }

    #[test]
    fn project_l2_scales() {
        let p = project(&[2.0, 0.0], 1.0, NormKind::L2);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] == 0.0);
        let q = project(&[1.2, 1.6], 1.0, NormKind::L2); // ||.||_2 = 2
        assert!((q[0] - 0.6).abs() < 1e-12 && (q[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn project_in_ball_is_identity() {
        let v = vec![0.05, -0.03, 0.01];
        assert_eq!(project(&v, 0.1, NormKind::Linf), v);
        assert_eq!(project(&v, 1.0, NormKind::L2), v);
    }

    #[test]
    fn linear_surrogate_one_linf_step_is_eps_sign_w() {
        // f(x) = w . x, so d f / d x = w; one step of size alpha >= eps
        // saturates the ball at eps * sign(w)
        let w = [0.7, -0.3, 0.0, 1.2];
        let x = Waveform::new(vec![0.0; 4], 8000).unwrap();
        let eps = 0.01;
        let delta = projected_ascent(
            &x,
            eps,
            1,
            Some(2.0), // alpha = 2 * eps >= eps
            NormKind::Linf,
            false,
            0,
            |adv| {
                let loss: f64 = adv.iter().zip(&w).map(|(a, b)| a * b).sum();
                Ok((loss, w.to_vec()))
            },
        )
        .unwrap();
        for (d, wi) in delta.iter().zip(&w) {
            assert_eq!(*d, eps * wi.signum());
        }
    }

    #[test]
    fn zero_steps_means_zero_delta() {
        let x = Waveform::new(vec![0.1, -0.2, 0.3], 8000).unwrap();
        let delta = projected_ascent(&x, 0.5, 0, None, NormKind::L2, false, 0, |_| {
            panic!("loss must not be evaluated with steps=0")
        })
        .unwrap();
        assert_eq!(delta, vec![0.0; 3]);
    }

    #[test]
    fn kenansville_plan_matches_exhaustive_prefix_search() {
        let power = [0.5, 0.01, 0.2, 0.01, 0.05, 0.001, 0.3];
        for target in [3.0, 6.0, 10.0, 20.0, 40.0] {
            let plan = kenansville_plan(&power, target);
            // exhaustive search over every prefix of the sorted order
            let mut order: Vec<usize> = (0..power.len()).collect();
            order.sort_by(|&a, &b| power[a].partial_cmp(&power[b]).unwrap().then(a.cmp(&b)));
            let total: f64 = power.iter().sum();
            let mut best = 0usize;
            for m in 0..power.len() {
                let removed: f64 = order[..m].iter().map(|&k| power[k]).sum();
                let snr = if removed == 0.0 { f64::INFINITY } else { 10.0 * (total / removed).log10() };
                if snr >= target {
                    best = m;
                }
            }
            assert_eq!(plan.removed, order[..best].to_vec(), "target={target}");
        }
    }

    #[test]
    fn kenansville_removes_weak_tone_first() {
        // strong tone at bin 5, weak tone at bin 20 of a 256-sample signal
        let n = 256;
        let samples: Vec<f64> = (0..n)
            .map(|t| {
                let ph = 2.0 * std::f64::consts::PI * t as f64 / n as f64;
                0.9 * (5.0 * ph).sin() + 0.01 * (20.0 * ph).sin()
            })
            .collect();
        let utt = Utterance {
            id: "tone".into(),
            waveform: Waveform::new(samples.clone(), 8000).unwrap(),
            transcript: "a".into(),
        };
        let adv = kenansville_attack(&utt, &KenansvilleConfig { snr_db: 30.0, tol_db: 0.5 }).unwrap();
        // weak tone removed: the perturbed signal is close to the pure strong tone
        let strong: Vec<f64> = (0..n)
            .map(|t| 0.9 * (2.0 * std::f64::consts::PI * 5.0 * t as f64 / n as f64).sin())
            .collect();
        let perturbed = utt.waveform.add_clipped(&adv.delta).unwrap();
        for (p, s) in perturbed.samples().iter().zip(&strong) {
            assert!((p - s).abs() < 1e-6);
        }
        assert!(adv.snr_db >= 30.0);
    }

    #[test]
    fn kenansville_prefix_zero_leaves_signal_untouched() {
        let samples: Vec<f64> = (0..64)
            .map(|t| 0.5 * (2.0 * std::f64::consts::PI * 4.0 * t as f64 / 64.0).sin())
            .collect();
        let utt = Utterance {
            id: "clean".into(),
            waveform: Waveform::new(samples, 8000).unwrap(),
            transcript: "a".into(),
        };
        // an absurdly high target admits no removal at all of the nonzero bins
        let adv =
            kenansville_attack(&utt, &KenansvilleConfig { snr_db: 500.0, tol_db: 0.5 }).unwrap();
        assert!(adv.snr_db.is_infinite() || adv.snr_db >= 500.0);
    }

    proptest! {
        #[test]
        fn projection_feasible(
            v in proptest::collection::vec(-1.0f64..1.0, 1..64),
            eps in 0.01f64..0.5,
        ) {
            let pl = project(&v, eps, NormKind::Linf);
            prop_assert!(norm(&pl, NormKind::Linf) <= eps + 1e-12);
            let p2 = project(&v, eps, NormKind::L2);
            prop_assert!(norm(&p2, NormKind::L2) <= eps + 1e-12);
            // in-ball vectors come back bitwise unchanged
            if norm(&v, NormKind::L2) <= eps {
                prop_assert_eq!(project(&v, eps, NormKind::L2), v.clone());
            }
            if norm(&v, NormKind::Linf) <= eps {
                prop_assert_eq!(project(&v, eps, NormKind::Linf), v);
            }
        }
    }
}
