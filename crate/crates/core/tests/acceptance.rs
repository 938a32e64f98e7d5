//! Acceptance gate: eleven numbered criteria, one pass/fail line each.
//! Run with `cargo test --test acceptance -- --nocapture` to see every line;
//! each criterion is its own test so failures are isolated.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use advspeech::attacks::{
    cw_attack, genetic_attack, kenansville_attack, kenansville_plan, pgd, project, ssl_attack,
    transfer_apply, AdversarialExample, Bound, CwConfig, EncoderModel, GeneticConfig,
    KenansvilleConfig, PgdConfig, SslConfig,
};
use advspeech::corpus::{select_target, Corpus, Utterance};
use advspeech::harness::{clean_wer, cmd_train, Panel, Plan};
use advspeech::metrics::{self, edit_distance, wer};
use advspeech::model::{ctc_forward_backward, ctc_loss, Vocabulary};
use advspeech::signal::{norm, snr_db, NormKind, Perturbation};
use advspeech::{dsp, Waveform};

const ACCEPTANCE_PLAN: &str = r#"
seed = 42
subset = 100
snr_grid = [30.0, 25.0, 20.0]
targets = ["bad", "face", "be a cad"]

[corpus]
n_train = 240
n_test = 100
chars_min = 3
chars_max = 6
sample_rate = 8000
symbol_dur = 512
noise_std = 0.02
"#;

struct Fixture {
    corpus: Corpus,
    panel: Panel,
    train_secs: f64,
    _dir: tempfile::TempDir,
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let plan = Plan::from_str(ACCEPTANCE_PLAN).unwrap();
        let vocab = Vocabulary::default_toy();
        let feat = advspeech::model::FeatureConfig::default();
        let corpus =
            advspeech::corpus::generate_corpus(&plan.corpus_config(), &vocab, &feat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let t0 = Instant::now();
        let panel = cmd_train(&plan, &corpus.train, dir.path()).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        Fixture { corpus, panel, train_secs, _dir: dir }
    })
}

fn plan() -> Plan {
    Plan::from_str(ACCEPTANCE_PLAN).unwrap()
}

fn report(n: u32, desc: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("criterion {n} ({desc}): PASS"),
        Err(e) => {
            println!("criterion {n} ({desc}): FAIL - {e}");
            panic!("criterion {n} ({desc}) failed: {e}");
        }
    }
}

// --------------------------------------------------------------------------
// independent oracles

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev && p != 0 {
            out.push(p);
        }
        prev = p;
    }
    out
}

fn ctc_loss_exhaustive(logprobs: &[Vec<f64>], label: &[usize]) -> f64 {
    let t = logprobs.len();
    let v = logprobs[0].len();
    let mut total = 0.0f64;
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        let mut path = Vec::with_capacity(t);
        for _ in 0..t {
            path.push(c % v);
            c /= v;
        }
        if collapse(&path) == label {
            total += path.iter().enumerate().map(|(i, &k)| logprobs[i][k]).sum::<f64>().exp();
        }
    }
    -total.ln()
}

fn edit_distance_recursive(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((ah, at)), Some((bh, bt))) => {
            let sub = edit_distance_recursive(at, bt) + usize::from(ah != bh);
            let del = edit_distance_recursive(at, b) + 1;
            let ins = edit_distance_recursive(a, bt) + 1;
            sub.min(del).min(ins)
        }
    }
}

fn dft_direct(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n / 2 + 1)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re, im)
        })
        .collect()
}

fn random_logprobs(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..v).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + raw.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            raw.iter().map(|x| x - lse).collect()
        })
        .collect()
}

fn random_label(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Vec<usize> {
    loop {
        let len = rng.random_range(1..=3usize.min(t));
        let label: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
        let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
        if t >= label.len() + repeats {
            return label;
        }
    }
}

// --------------------------------------------------------------------------
// criteria

#[test]
fn c01_ctc_oracle_equivalence() {
    report(1, "CTC loss equals exhaustive alignment enumeration", (|| {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut checked = 0usize;
        while checked < 200 {
            let t = rng.random_range(2..=8usize);
            let v = rng.random_range(2..=5usize);
            let lp = random_logprobs(&mut rng, t, v);
            let label = random_label(&mut rng, t, v);
            let got = ctc_loss(&lp, &label).map_err(|e| e.to_string())?;
            let want = ctc_loss_exhaustive(&lp, &label);
            let rel = (got - want).abs() / want.abs().max(1e-300);
            if rel > 1e-9 {
                return Err(format!("t={t} v={v} label={label:?}: rel err {rel:.3e}"));
            }
            checked += 1;
        }
        let secs = t0.elapsed().as_secs_f64();
        if secs >= 10.0 {
            return Err(format!("{checked} instances took {secs:.1}s (budget 10s)"));
        }
        Ok(())
    })());
}

#[test]
fn c02_gradient_integrity() {
    report(2, "CTC, full-model, and SSL gradients match finite differences", (|| {
        let t0 = Instant::now();
        let fix = fixture();
        let rel_ok = |a: f64, fd: f64| (a - fd).abs() <= 1e-4 * fd.abs().max(1e-3);

        // CTC loss w.r.t. log-probabilities
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for i in 0..20 {
            let t = rng.random_range(3..=6usize);
            let v = rng.random_range(2..=5usize);
            let lp = random_logprobs(&mut rng, t, v);
            let label = random_label(&mut rng, t, v);
            let mut flat: Vec<f64> = lp.iter().flatten().copied().collect();
            let (_, grad) = ctc_forward_backward(&flat, t, v, &label).map_err(|e| e.to_string())?;
            let h = 1e-6;
            let j = rng.random_range(0..flat.len());
            let orig = flat[j];
            flat[j] = orig + h;
            let up = ctc_forward_backward(&flat, t, v, &label).unwrap().0;
            flat[j] = orig - h;
            let down = ctc_forward_backward(&flat, t, v, &label).unwrap().0;
            flat[j] = orig;
            let fd = (up - down) / (2.0 * h);
            if !rel_ok(grad[j], fd) {
                return Err(format!("ctc instance {i}: {} vs fd {fd}", grad[j]));
            }
        }

        // full model: waveform -> CTC loss
        let model = &fix.panel.models[0].1;
        let vocab = Vocabulary::default_toy();
        for i in 0..20 {
            let utt = &fix.corpus.test[i % fix.corpus.test.len()];
            let label = vocab.encode(&utt.transcript).map_err(|e| e.to_string())?;
            let samples = utt.waveform.samples();
            let (_, grad) = model.loss_and_input_grad(samples, &label).map_err(|e| e.to_string())?;
            // probe the highest-sensitivity sample so the relative check is meaningful
            let j = (0..grad.len()).max_by(|&a, &b| grad[a].abs().partial_cmp(&grad[b].abs()).unwrap()).unwrap();
            let h = 1e-5;
            let mut bumped = samples.to_vec();
            bumped[j] += h;
            let up = model.loss(&bumped, &label).unwrap();
            bumped[j] -= 2.0 * h;
            let down = model.loss(&bumped, &label).unwrap();
            let fd = (up - down) / (2.0 * h);
            if !rel_ok(grad[j], fd) {
                return Err(format!("model instance {i}: {} vs fd {fd}", grad[j]));
            }
        }

        // SSL representation distance w.r.t. the input
        let enc = &fix.panel.encoder;
        for i in 0..20 {
            let utt = &fix.corpus.test[(i + 7) % fix.corpus.test.len()];
            let reference = enc.representation(utt.waveform.samples()).map_err(|e| e.to_string())?;
            // evaluate away from the zero-distance reference point
            let mut samples = utt.waveform.samples().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(303 + i as u64);
            for s in samples.iter_mut() {
                *s += rng.random_range(-0.01..0.01);
            }
            let (_, grad) = enc.distance_and_grad(&samples, &reference).map_err(|e| e.to_string())?;
            let j = (0..grad.len()).max_by(|&a, &b| grad[a].abs().partial_cmp(&grad[b].abs()).unwrap()).unwrap();
            let h = 1e-5;
            let mut bumped = samples.clone();
            bumped[j] += h;
            let up = enc.distance_and_grad(&bumped, &reference).unwrap().0;
            bumped[j] -= 2.0 * h;
            let down = enc.distance_and_grad(&bumped, &reference).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            if !rel_ok(grad[j], fd) {
                return Err(format!("ssl instance {i}: {} vs fd {fd}", grad[j]));
            }
        }

        let secs = t0.elapsed().as_secs_f64();
        if secs >= 60.0 {
            return Err(format!("gradient checks took {secs:.1}s (budget 60s)"));
        }
        Ok(())
    })());
}

#[test]
fn c03_metrics_oracle_equivalence() {
    report(3, "edit distance equals exhaustive recursion; WER can exceed 100", (|| {
        let mut seqs: Vec<Vec<u8>> = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..6 {
            let mut next = Vec::new();
            for s in &frontier {
                for c in 0..3u8 {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            seqs.extend(next.iter().cloned());
            frontier = next;
        }
        for a in &seqs {
            for b in &seqs {
                if edit_distance(a, b) != edit_distance_recursive(a, b) {
                    return Err(format!("mismatch for {a:?} vs {b:?}"));
                }
            }
        }
        let w = wer("b c", "a").map_err(|e| e.to_string())?;
        if w != 200.0 {
            return Err(format!("wer(\"b c\", \"a\") = {w}, expected 200"));
        }
        Ok(())
    })());
}

#[test]
fn c04_projection_exactness() {
    report(4, "projection lands in the ball; in-ball vectors unchanged bitwise", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for i in 0..10_000 {
            let len = rng.random_range(1..48usize);
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eps = rng.random_range(0.01..1.5);
            for kind in [NormKind::L2, NormKind::Linf] {
                let p = project(&v, eps, kind);
                let n = norm(&p, kind);
                if n > eps + 1e-12 {
                    return Err(format!("vector {i}: norm {n} > eps {eps}"));
                }
                if norm(&v, kind) <= eps {
                    for (a, b) in v.iter().zip(&p) {
                        if a.to_bits() != b.to_bits() {
                            return Err(format!("vector {i}: in-ball input modified"));
                        }
                    }
                }
            }
        }
        Ok(())
    })());
}

#[test]
fn c05_closed_form_pgd() {
    report(5, "one Linf PGD step recovers eps*sign(gradient) exactly", (|| {
        let fix = fixture();
        let model = &fix.panel.models[0].1;
        let utt = &fix.corpus.test[0];
        let vocab = Vocabulary::default_toy();
        let label = vocab.encode(&utt.transcript).map_err(|e| e.to_string())?;
        let eps = 1e-3;
        let cfg = PgdConfig { steps: 1, ..PgdConfig::new(NormKind::Linf, Bound::Eps(eps)) };
        let adv = pgd(model, utt, &cfg).map_err(|e| e.to_string())?;
        // independent closed form: the first (and only) step saturates the ball
        let (_, w) = model.loss_and_input_grad(utt.waveform.samples(), &label).map_err(|e| e.to_string())?;
        for (i, (d, g)) in adv.delta.values().iter().zip(&w).enumerate() {
            let expected = eps * g.signum();
            if (d - expected).abs() > 1e-15 {
                return Err(format!("sample {i}: delta {d} vs closed form {expected}"));
            }
        }
        Ok(())
    })());
}

#[test]
fn c06_dsp_oracles() {
    report(6, "FFT matches naive DFT; Parseval; Kenansville prefix + SNR tolerance", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        for n in 1..=64usize {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let spec = dsp::rfft(&x).map_err(|e| e.to_string())?;
            let want = dft_direct(&x);
            let scale = want.iter().map(|(r, i)| r.hypot(*i)).fold(1.0f64, f64::max);
            for (k, ((gr, gi), (wr, wi))) in spec.bins.iter().zip(&want).enumerate() {
                if (gr - wr).abs() > 1e-9 * scale || (gi - wi).abs() > 1e-9 * scale {
                    return Err(format!("n={n} bin {k}: ({gr},{gi}) vs ({wr},{wi})"));
                }
            }
            // Parseval: total PSD power equals the mean square of the signal
            let p = dsp::psd(&spec);
            let total: f64 = p.power.iter().sum();
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
            if (total - ms).abs() > 1e-9 * ms.max(1.0) {
                return Err(format!("n={n}: Parseval {total} vs {ms}"));
            }
        }

        let fix = fixture();
        for (i, utt) in fix.corpus.test.iter().take(20).enumerate() {
            let spec = dsp::rfft(utt.waveform.samples()).map_err(|e| e.to_string())?;
            let power = dsp::psd(&spec).power;
            for target in [15.0, 25.0, 40.0] {
                let plan = kenansville_plan(&power, target);
                // exhaustive prefix search over the same removal order
                let mut order: Vec<usize> = (0..power.len()).collect();
                order.sort_by(|&a, &b| power[a].partial_cmp(&power[b]).unwrap().then(a.cmp(&b)));
                let total: f64 = power.iter().sum();
                let mut best = 0usize;
                for m in 0..power.len() {
                    let removed: f64 = order[..m].iter().map(|&k| power[k]).sum();
                    let ok = removed == 0.0 || 10.0 * (total / removed).log10() >= target;
                    if ok {
                        best = m;
                    }
                }
                if plan.removed != order[..best] {
                    return Err(format!("utt {i} target {target}: removal set differs from exhaustive search"));
                }
                let adv = kenansville_attack(utt, &KenansvilleConfig { snr_db: target, tol_db: 0.5 })
                    .map_err(|e| e.to_string())?;
                if adv.snr_db < target - 0.5 {
                    return Err(format!("utt {i}: achieved {} dB < target {target} - 0.5", adv.snr_db));
                }
            }
        }
        Ok(())
    })());
}

#[test]
fn c07_panel_clean_wer() {
    report(7, "every panel model at or below 5% clean test WER; training < 15 min", (|| {
        let fix = fixture();
        for (id, model) in &fix.panel.models {
            let w = clean_wer(model, &fix.corpus.test).map_err(|e| e.to_string())?;
            if w > 5.0 {
                return Err(format!("{id}: clean WER {w:.2}%"));
            }
        }
        if fix.train_secs >= 900.0 {
            return Err(format!("panel training took {:.0}s (budget 900s)", fix.train_secs));
        }
        Ok(())
    })());
}

#[test]
fn c08_attack_potency_ordering() {
    report(8, "PGD > Genetic > clean at ~20 dB; Kenansville mild at >= 20 dB", (|| {
        let fix = fixture();
        let test = &fix.corpus.test[..12];
        let mut pgd_sum = 0.0;
        let mut gen_sum = 0.0;
        let mut clean_sum = 0.0;
        let mut n = 0.0;
        for (_, model) in &fix.panel.models {
            for utt in test {
                let p = pgd(model, utt, &PgdConfig {
                    steps: 60,
                    ..PgdConfig::new(NormKind::Linf, Bound::SnrDb(20.0))
                })
                .map_err(|e| e.to_string())?;
                pgd_sum += transfer_apply(&p, utt, model).map_err(|e| e.to_string())?.wer_vs_label;
                let g = genetic_attack(model, utt, &GeneticConfig {
                    pop: 30,
                    iters: 150,
                    ..GeneticConfig::new(Bound::SnrDb(20.0))
                })
                .map_err(|e| e.to_string())?;
                gen_sum += transfer_apply(&g, utt, model).map_err(|e| e.to_string())?.wer_vs_label;
                let d = model.decode(utt.waveform.samples()).map_err(|e| e.to_string())?;
                clean_sum += wer(&d, &utt.transcript).map_err(|e| e.to_string())?;
                n += 1.0;
            }
        }
        let (p, g, c) = (pgd_sum / n, gen_sum / n, clean_sum / n);
        if !(p > g && g > c) {
            return Err(format!("ordering violated: pgd {p:.1}, genetic {g:.1}, clean {c:.1}"));
        }

        // Kenansville is judged on the panel mean, like the gradient attacks above
        for snr in [20.0, 25.0, 30.0] {
            let mut rise_sum = 0.0;
            for (_, model) in &fix.panel.models {
                let cw = clean_wer(model, test).map_err(|e| e.to_string())?;
                let mut sum = 0.0;
                for utt in test {
                    let k = kenansville_attack(utt, &KenansvilleConfig { snr_db: snr, tol_db: 0.5 })
                        .map_err(|e| e.to_string())?;
                    sum += transfer_apply(&k, utt, model).map_err(|e| e.to_string())?.wer_vs_label;
                }
                rise_sum += sum / test.len() as f64 - cw;
            }
            let rise = rise_sum / fix.panel.models.len() as f64;
            if rise >= 15.0 {
                return Err(format!("at {snr} dB: Kenansville raises panel mean WER by {rise:.1}"));
            }
        }
        Ok(())
    })());
}

#[test]
fn c09_targeted_cw_success() {
    report(9, "CW >= 80% success at mean SNR >= 20 dB over 100 utterances", (|| {
        let fix = fixture();
        let plan = plan();
        let cfg = CwConfig { steps: 600, check_every: 25, ..CwConfig::default() };
        let mut successes = 0usize;
        let mut snr_sum = 0.0;
        let utts = &fix.corpus.test[..100];
        for (i, utt) in utts.iter().enumerate() {
            let (_, model) = &fix.panel.models[i % fix.panel.models.len()];
            let target = select_target(&utt.transcript, &plan.targets).map_err(|e| e.to_string())?;
            let adv = cw_attack(model, utt, target, &cfg).map_err(|e| e.to_string())?;
            // success flag must agree with an independent decode of x + delta
            let perturbed = utt.waveform.add_clipped(&adv.delta).map_err(|e| e.to_string())?;
            let decoded = model.decode(perturbed.samples()).map_err(|e| e.to_string())?;
            let exact = metrics::attack_success(&decoded, target);
            if adv.succeeded != Some(exact) {
                return Err(format!(
                    "utt {i}: success flag {:?} but decode {:?} vs target {:?}",
                    adv.succeeded, decoded, target
                ));
            }
            successes += exact as usize;
            snr_sum += adv.snr_db;
        }
        let rate = 100.0 * successes as f64 / utts.len() as f64;
        let mean_snr = snr_sum / utts.len() as f64;
        if rate < 80.0 {
            return Err(format!("success rate {rate:.0}%"));
        }
        if mean_snr < 20.0 {
            return Err(format!("mean SNR {mean_snr:.1} dB"));
        }
        Ok(())
    })());
}

#[test]
fn c10_transfer_direction() {
    report(10, "shared-encoder heads transfer attacks; SSL hits heads hardest", (|| {
        let fix = fixture();
        let test = &fix.corpus.test[..25];
        let by_id = |id: &str| fix.panel.get(id).unwrap();
        let (ff, rnn) = (by_id("ff_scratch"), by_id("rnn_scratch"));
        let (head_a, head_b) = (by_id("enc_head_a"), by_id("enc_head_b"));
        let craft = |m: &advspeech::model::TrainedModel| -> Result<Vec<AdversarialExample>, String> {
            test.iter()
                .map(|u| {
                    pgd(m, u, &PgdConfig { steps: 60, ..PgdConfig::new(NormKind::L2, Bound::SnrDb(25.0)) })
                        .map_err(|e| e.to_string())
                })
                .collect()
        };
        let apply = |advs: &[AdversarialExample], m: &advspeech::model::TrainedModel| -> Result<f64, String> {
            let mut s = 0.0;
            for (u, a) in test.iter().zip(advs) {
                s += transfer_apply(a, u, m).map_err(|e| e.to_string())?.wer_vs_label;
            }
            Ok(s / test.len() as f64)
        };
        let (adv_a, adv_b, adv_ff, adv_rnn) = (craft(head_a)?, craft(head_b)?, craft(ff)?, craft(rnn)?);
        let heads_pair = (apply(&adv_a, head_b)? + apply(&adv_b, head_a)?) / 2.0;
        let scratch_pair = (apply(&adv_ff, rnn)? + apply(&adv_rnn, ff)?) / 2.0;
        if heads_pair - scratch_pair < 20.0 {
            return Err(format!(
                "PGD transfer gap {:.1} (heads {heads_pair:.1}, scratch {scratch_pair:.1})",
                heads_pair - scratch_pair
            ));
        }

        let ssl_cfg = SslConfig { steps: 150, ..SslConfig::new(Bound::SnrDb(25.0)) };
        let ssl_advs: Vec<AdversarialExample> = test
            .iter()
            .map(|u| ssl_attack(&fix.panel.encoder, u, &ssl_cfg).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let degradation = |m: &advspeech::model::TrainedModel| -> Result<f64, String> {
            Ok(apply(&ssl_advs, m)? - clean_wer(m, test).map_err(|e| e.to_string())?)
        };
        let scratch_deg = degradation(ff)?.max(degradation(rnn)?);
        for (id, m) in [("enc_head_a", head_a), ("enc_head_b", head_b)] {
            let d = degradation(m)?;
            if d < 2.0 * scratch_deg || d <= 0.0 {
                return Err(format!("{id}: SSL degradation {d:.1} vs scratch max {scratch_deg:.1}"));
            }
        }
        Ok(())
    })());
}

#[test]
fn c11_determinism() {
    report(11, "two identical pipeline runs produce byte-identical CSV and SVG", (|| {
        let plan_text = r#"
seed = 9
subset = 5
snr_grid = [25.0, 20.0]
targets = ["bad", "face", "be a cad"]

[corpus]
n_train = 40
n_test = 6
chars_min = 3
chars_max = 5
sample_rate = 8000
symbol_dur = 512
noise_std = 0.02

[train]
lr = 0.005
steps = 120
batch = 8
pretrain_steps = 80
finetune_steps = 100

[attacks.pgd]
steps = 12
rand_init = true

[attacks.cw]
c = 1.0
lr = 0.01
steps = 80
decay = 0.8
check_every = 20

[attacks.genetic]
pop = 12
iters = 30
mut_std = 0.05
elite = 3

[attacks.ssl]
steps = 15
"#;
        let dir = tempfile::tempdir().unwrap();
        let plan_path = dir.path().join("plan.toml");
        std::fs::write(&plan_path, plan_text).unwrap();
        let bin = env!("CARGO_BIN_EXE_advspeech");
        let run = |tag: &str| -> Result<std::path::PathBuf, String> {
            let corpus = dir.path().join(format!("corpus_{tag}"));
            let out = dir.path().join(format!("out_{tag}"));
            let steps: Vec<Vec<&str>> = vec![
                vec!["gen-corpus"],
                vec!["train"],
                vec!["sweep"],
                vec!["targeted"],
                vec!["transfer"],
            ];
            for step in steps {
                let mut cmd = Command::new(bin);
                cmd.arg(step[0]).arg("--plan").arg(&plan_path).arg("--corpus").arg(&corpus);
                if step[0] != "gen-corpus" {
                    cmd.arg("--out").arg(&out);
                }
                let st = cmd.output().map_err(|e| e.to_string())?;
                if !st.status.success() {
                    return Err(format!("{} failed: {}", step[0], String::from_utf8_lossy(&st.stderr)));
                }
            }
            let st = Command::new(bin)
                .args(["report", "--csv"])
                .arg(out.join("sweep.csv"))
                .arg("--out")
                .arg(out.join("report"))
                .output()
                .map_err(|e| e.to_string())?;
            if !st.status.success() {
                return Err(format!("report failed: {}", String::from_utf8_lossy(&st.stderr)));
            }
            Ok(out)
        };
        let a = run("a")?;
        let b = run("b")?;
        let mut compared = 0usize;
        for rel in ["sweep.csv", "targeted.csv", "transfer.csv"] {
            let fa = std::fs::read(a.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
            let fb = std::fs::read(b.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
            if fa != fb {
                return Err(format!("{rel} differs between runs"));
            }
            compared += 1;
        }
        for entry in std::fs::read_dir(a.as_path()).unwrap().chain(std::fs::read_dir(a.join("report")).unwrap()) {
            let entry = entry.unwrap();
            let name = entry.file_name().into_string().unwrap();
            if name.ends_with(".svg") {
                let rel: &Path = entry.path().strip_prefix(&a).unwrap().to_owned().leak();
                let fa = std::fs::read(a.join(rel)).unwrap();
                let fb = std::fs::read(b.join(rel)).map_err(|e| format!("{}: {e}", rel.display()))?;
                if fa != fb {
                    return Err(format!("{} differs between runs", rel.display()));
                }
                compared += 1;
            }
        }
        if compared < 5 {
            return Err(format!("only {compared} artifacts compared"));
        }
        Ok(())
    })());
}

// sanity: the attack examples the harness reports are internally consistent
#[test]
fn adversarial_snr_recomputes_from_delta() {
    let fix = fixture();
    let utt: &Utterance = &fix.corpus.test[0];
    let model = &fix.panel.models[0].1;
    let adv = pgd(model, utt, &PgdConfig { steps: 10, ..PgdConfig::new(NormKind::L2, Bound::SnrDb(30.0)) }).unwrap();
    let recomputed = snr_db(&utt.waveform, &Perturbation::new(adv.delta.values().to_vec()).unwrap()).unwrap();
    assert!((recomputed - adv.snr_db).abs() < 1e-6);
}
