//! Experiment orchestration: plan files, the five-entry model panel,
//! attack sweeps, targeted and transfer tables, CSV and SVG reporting.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::attacks::{
    cw_attack, genetic_attack, kenansville_attack, pgd, ssl_attack, transfer_apply,
    AdversarialExample, AttackError, Bound, CwConfig, GeneticConfig, KenansvilleConfig, PgdConfig,
    SslConfig,
};
use crate::corpus::{select_target, CorpusConfig, CorpusError, Utterance};
use crate::metrics::{self, AttackRecord, MetricError, SummaryRow};
use crate::model::{
    finetune_head, load_encoder, load_model, pretrain_contrastive, save_encoder, save_model,
    train_supervised, Arch, FeatureConfig, Hyper, ModelError, PretrainedEncoder, Provenance,
    TrainedModel, Vocabulary,
};
use crate::signal::{self, Perturbation};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("plan error: {0}")]
    Plan(String),
    #[error("attack error: {0}")]
    Attack(#[from] AttackError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("corpus error: {0}")]
    Corpus(#[from] CorpusError),
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("signal error: {0}")]
    Signal(#[from] signal::SignalError),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

// ---------------------------------------------------------------------------
// plan file

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub seed: u64,
    #[serde(default = "default_subset")]
    pub subset: usize,
    pub snr_grid: Vec<f64>,
    pub targets: Vec<String>,
    /// Model ids to include; empty means the whole panel.
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub corpus: CorpusPlan,
    #[serde(default)]
    pub train: TrainPlan,
    #[serde(default)]
    pub attacks: AttacksPlan,
}

fn default_subset() -> usize {
    100
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPlan {
    pub n_train: usize,
    pub n_test: usize,
    pub chars_min: usize,
    pub chars_max: usize,
    pub sample_rate: u32,
    pub symbol_dur: usize,
    pub noise_std: f64,
}

impl Default for CorpusPlan {
    fn default() -> Self {
        let c = CorpusConfig::default();
        CorpusPlan {
            n_train: c.n_train,
            n_test: c.n_test,
            chars_min: c.chars_min,
            chars_max: c.chars_max,
            sample_rate: c.sample_rate,
            symbol_dur: c.symbol_dur,
            noise_std: c.noise_std,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan { lr: 0.005, steps: 600, batch: 8, pretrain_steps: 800, finetune_steps: 600 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttacksPlan {
    #[serde(default)]
    pub pgd: PgdPlan,
    #[serde(default)]
    pub cw: CwPlan,
    #[serde(default)]
    pub genetic: GeneticPlan,
    #[serde(default)]
    pub kenansville: KenansvillePlanCfg,
    #[serde(default)]
    pub ssl: SslPlan,
    /// SNR bound for crafting transfer perturbations.
    #[serde(default = "default_transfer_snr")]
    pub transfer_snr_db: f64,
    /// Untargeted SNR bound for the genetic column of the targeted table.
    #[serde(default = "default_genetic_snr")]
    pub genetic_snr_db: f64,
}

fn default_transfer_snr() -> f64 {
    25.0
}

fn default_genetic_snr() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdPlan {
    pub steps: usize,
    pub rand_init: bool,
}

impl Default for PgdPlan {
    fn default() -> Self {
        PgdPlan { steps: 100, rand_init: false }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwPlan {
    pub c: f64,
    pub lr: f64,
    pub steps: usize,
    pub decay: f64,
    pub check_every: usize,
}

impl Default for CwPlan {
    fn default() -> Self {
        let d = CwConfig::default();
        CwPlan { c: d.c, lr: d.lr, steps: d.steps, decay: d.decay, check_every: d.check_every }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneticPlan {
    pub pop: usize,
    pub iters: usize,
    pub mut_std: f64,
    pub elite: usize,
}

impl Default for GeneticPlan {
    fn default() -> Self {
        let d = GeneticConfig::new(Bound::SnrDb(20.0));
        GeneticPlan { pop: d.pop, iters: d.iters, mut_std: d.mut_std, elite: d.elite }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KenansvillePlanCfg {
    pub tol_db: f64,
}

impl Default for KenansvillePlanCfg {
    fn default() -> Self {
        KenansvillePlanCfg { tol_db: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslPlan {
    pub steps: usize,
}

impl Default for SslPlan {
    fn default() -> Self {
        SslPlan { steps: 500 }
    }
}

impl Plan {
    pub fn from_str(text: &str) -> Result<Plan> {
        let plan: Plan = toml::from_str(text).map_err(|e| HarnessError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Plan> {
        Plan::from_str(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(HarnessError::Plan("targets must be non-empty".into()));
        }
        if self.snr_grid.windows(2).any(|w| w[0] < w[1]) {
            return Err(HarnessError::Plan("snr_grid must be sorted descending".into()));
        }
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            n_train: self.corpus.n_train,
            n_test: self.corpus.n_test,
            seed: self.seed,
            chars_min: self.corpus.chars_min,
            chars_max: self.corpus.chars_max,
            sample_rate: self.corpus.sample_rate,
            symbol_dur: self.corpus.symbol_dur,
            noise_std: self.corpus.noise_std,
        }
    }
}

// ---------------------------------------------------------------------------
// model panel

pub const ENCODER_ID: &str = "encoder";

pub struct Panel {
    /// Decodable ASR models, in fixed order.
    pub models: Vec<(String, TrainedModel)>,
    pub encoder: PretrainedEncoder,
}

impl Panel {
    pub fn get(&self, id: &str) -> Option<&TrainedModel> {
        self.models.iter().find(|(m, _)| m == id).map(|(_, m)| m)
    }

    fn selected<'a>(&'a self, plan: &Plan) -> Vec<(&'a str, &'a TrainedModel)> {
        self.models
            .iter()
            .filter(|(id, _)| plan.models.is_empty() || plan.models.iter().any(|m| m == id))
            .map(|(id, m)| (id.as_str(), m))
            .collect()
    }
}

/// Trains the whole panel: two scratch models, the contrastive encoder, and
/// two heads fine-tuned from it on different data halves with different
/// seeds. Writes checkpoints plus `panel.tsv`.
pub fn cmd_train(plan: &Plan, train: &[Utterance], out_dir: &Path) -> Result<Panel> {
    let vocab = Vocabulary::default_toy();
    let feat = FeatureConfig::default();
    let tp = plan.train;
    let hyper = |seed: u64, steps: usize| Hyper { lr: tp.lr, steps, seed, batch: tp.batch };

    let ff = train_supervised(Arch::FfCtc, train, &vocab, &feat, &hyper(plan.seed, tp.steps))?;
    let rnn = train_supervised(Arch::RnnCtc, train, &vocab, &feat, &hyper(plan.seed + 1, tp.steps))?;
    let encoder =
        pretrain_contrastive(train, &feat, &hyper(plan.seed + 2, tp.pretrain_steps), ENCODER_ID)?;
    // unfrozen: both models start from the shared pretrained encoder and
    // fine-tune end to end, on different (overlapping) data subsets and seeds
    let cut = train.len() * 2 / 3;
    let head_a = finetune_head(&encoder, &train[..cut], &vocab,
        &hyper(plan.seed + 3, tp.finetune_steps), false)?;
    let head_b = finetune_head(&encoder, &train[train.len() - cut..], &vocab,
        &hyper(plan.seed + 4, tp.finetune_steps), false)?;

    let ckpt = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let panel = Panel {
        models: vec![
            ("ff_scratch".to_string(), ff),
            ("rnn_scratch".to_string(), rnn),
            ("enc_head_a".to_string(), head_a),
            ("enc_head_b".to_string(), head_b),
        ],
        encoder,
    };
    let mut manifest = String::new();
    for (id, m) in &panel.models {
        let file = format!("{id}.ckpt");
        save_model(m, ckpt.join(&file))?;
        let prov = match &m.provenance {
            Provenance::Scratch { seed } => format!("scratch(seed={seed})"),
            Provenance::Finetuned { pretrain_id, seed } => {
                format!("finetuned(pretrain={pretrain_id},seed={seed})")
            }
        };
        manifest.push_str(&format!("{id}\t{file}\t{}\t{prov}\n", m.arch.tag()));
    }
    let enc_file = format!("{ENCODER_ID}.ckpt");
    save_encoder(&panel.encoder, ckpt.join(&enc_file))?;
    manifest.push_str(&format!("{ENCODER_ID}\t{enc_file}\tencoder\tpretrained(seed={})\n", plan.seed + 2));
    fs::write(ckpt.join("panel.tsv"), manifest)?;
    Ok(panel)
}

/// Loads a panel previously written by [`cmd_train`].
pub fn load_panel(out_dir: &Path) -> Result<Panel> {
    let ckpt = out_dir.join("checkpoints");
    let manifest = fs::read_to_string(ckpt.join("panel.tsv"))
        .map_err(|e| HarnessError::Plan(format!("missing panel manifest: {e}")))?;
    let mut models = Vec::new();
    let mut encoder = None;
    for line in manifest.lines() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(HarnessError::Plan(format!("malformed panel line: {line}")));
        }
        let (id, file, kind) = (parts[0], parts[1], parts[2]);
        if kind == "encoder" {
            encoder = Some(load_encoder(ckpt.join(file))?);
        } else {
            models.push((id.to_string(), load_model(ckpt.join(file))?));
        }
    }
    let encoder = encoder.ok_or_else(|| HarnessError::Plan("panel has no encoder".into()))?;
    Ok(Panel { models, encoder })
}

// ---------------------------------------------------------------------------
// attack execution

fn subset<'a>(utts: &'a [Utterance], n: usize) -> &'a [Utterance] {
    &utts[..n.min(utts.len())]
}

fn record_for(
    model: &TrainedModel,
    utt: &Utterance,
    adv: &AdversarialExample,
) -> Result<AttackRecord> {
    Ok(transfer_apply(adv, utt, model)?)
}

fn clean_record(model: &TrainedModel, utt: &Utterance) -> Result<AttackRecord> {
    let decoded = model.decode(utt.waveform.samples())?;
    Ok(AttackRecord {
        utterance_id: utt.id.clone(),
        decoded: decoded.clone(),
        wer_vs_label: metrics::wer(&decoded, &utt.transcript)?,
        wer_vs_target: None,
        success: None,
        snr_db: f64::INFINITY,
    })
}

fn mean_wer(records: &[AttackRecord]) -> f64 {
    records.iter().map(|r| r.wer_vs_label).sum::<f64>() / records.len() as f64
}

pub fn clean_wer(model: &TrainedModel, utts: &[Utterance]) -> Result<f64> {
    let recs: Vec<AttackRecord> =
        utts.iter().map(|u| clean_record(model, u)).collect::<Result<_>>()?;
    Ok(mean_wer(&recs))
}

fn save_adv_example(
    out_dir: &Path,
    model_id: &str,
    attack_id: &str,
    utt: &Utterance,
    adv: &AdversarialExample,
) -> Result<()> {
    let dir = out_dir.join("adv").join(model_id).join(attack_id);
    fs::create_dir_all(&dir)?;
    let perturbed = utt.waveform.add_clipped(&adv.delta)?;
    signal::save_wav(&perturbed, dir.join(format!("{}.wav", utt.id)))?;
    let mut meta = String::new();
    meta.push_str(&format!("utterance_id={}\n", adv.utterance_id));
    meta.push_str(&format!("attack={}\n", adv.attack));
    meta.push_str(&format!("snr_db={}\n", fmt_num(adv.snr_db)));
    if let Some(t) = &adv.target {
        meta.push_str(&format!("target={t}\n"));
    }
    if let Some(s) = adv.succeeded {
        meta.push_str(&format!("succeeded={s}\n"));
    }
    fs::write(dir.join(format!("{}.meta", utt.id)), meta)?;
    Ok(())
}

/// One (model, attack, SNR) sweep cell.
fn sweep_cell(
    model: &TrainedModel,
    utts: &[Utterance],
    craft: impl Fn(&Utterance) -> std::result::Result<AdversarialExample, AttackError> + Sync,
) -> Result<(Vec<AdversarialExample>, Vec<AttackRecord>)> {
    let advs: Vec<AdversarialExample> = utts
        .par_iter()
        .map(|u| craft(u))
        .collect::<std::result::Result<_, _>>()?;
    let records: Vec<AttackRecord> = utts
        .iter()
        .zip(&advs)
        .map(|(u, a)| record_for(model, u, a))
        .collect::<Result<_>>()?;
    Ok((advs, records))
}

/// WER-vs-SNR sweep over PGD (both norms) and Kenansville. Writes
/// `sweep.csv` and one SVG per attack.
pub fn cmd_sweep(plan: &Plan, test: &[Utterance], panel: &Panel, out_dir: &Path, save_adv: bool) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut rows: Vec<(String, String, f64, f64, usize)> = Vec::new();
    let attacks_list = ["pgd_l2", "pgd_linf", "kenansville"];
    for (model_id, model) in panel.selected(plan) {
        for attack_id in attacks_list {
            for &snr in &plan.snr_grid {
                let craft = |u: &Utterance| -> std::result::Result<AdversarialExample, AttackError> {
                    match attack_id {
                        "pgd_l2" => pgd(model, u, &PgdConfig {
                            steps: plan.attacks.pgd.steps,
                            rand_init: plan.attacks.pgd.rand_init,
                            seed: plan.seed,
                            ..PgdConfig::new(signal::NormKind::L2, Bound::SnrDb(snr))
                        }),
                        "pgd_linf" => pgd(model, u, &PgdConfig {
                            steps: plan.attacks.pgd.steps,
                            rand_init: plan.attacks.pgd.rand_init,
                            seed: plan.seed,
                            ..PgdConfig::new(signal::NormKind::Linf, Bound::SnrDb(snr))
                        }),
                        _ => kenansville_attack(u, &KenansvilleConfig {
                            snr_db: snr,
                            tol_db: plan.attacks.kenansville.tol_db,
                        }),
                    }
                };
                let (advs, records) = sweep_cell(model, test, craft)?;
                if save_adv {
                    for (u, a) in test.iter().zip(&advs) {
                        save_adv_example(out_dir, model_id, &format!("{attack_id}_{snr}"), u, a)?;
                    }
                }
                rows.push((model_id.to_string(), attack_id.to_string(), snr, mean_wer(&records), records.len()));
            }
        }
    }
    let mut csv = String::from("model,attack,snr_db,mean_wer,n\n");
    for (m, a, s, w, n) in &rows {
        csv.push_str(&format!("{m},{a},{},{},{n}\n", fmt_num(*s), fmt_num(*w)));
    }
    let csv_path = out_dir.join("sweep.csv");
    fs::write(&csv_path, &csv)?;
    render_sweep_svgs(&csv_path, out_dir)?;
    Ok(csv_path)
}

/// Targeted table: clean WER, CW (WER vs target, SNR, accuracy), genetic WER.
pub fn cmd_targeted(plan: &Plan, test: &[Utterance], panel: &Panel, out_dir: &Path, save_adv: bool) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let utts = subset(test, plan.subset);
    let mut csv = String::from("model,clean_wer,cw_wer_vs_target,cw_mean_snr,cw_accuracy,genetic_wer\n");
    for (model_id, model) in panel.selected(plan) {
        let clean = clean_wer(model, utts)?;
        let cw_cfg = CwConfig {
            c: plan.attacks.cw.c,
            lr: plan.attacks.cw.lr,
            steps: plan.attacks.cw.steps,
            decay: plan.attacks.cw.decay,
            check_every: plan.attacks.cw.check_every,
            eps_init: None,
        };
        let outcomes: Vec<std::result::Result<(AdversarialExample, AttackRecord), AttackError>> = utts
            .par_iter()
            .map(|u| {
                let target = select_target(&u.transcript, &plan.targets)
                    .map_err(|e| AttackError::Config(e.to_string()))?;
                let adv = cw_attack(model, u, target, &cw_cfg)?;
                let rec = transfer_apply(&adv, u, model)?;
                Ok((adv, rec))
            })
            .collect();
        let mut records = Vec::new();
        let mut infeasible = 0usize;
        for (u, outcome) in utts.iter().zip(outcomes) {
            match outcome {
                Ok((adv, rec)) => {
                    if save_adv {
                        save_adv_example(out_dir, model_id, "cw", u, &adv)?;
                    }
                    records.push(rec);
                }
                Err(AttackError::InfeasibleTarget { .. }) => infeasible += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if infeasible > 0 {
            eprintln!("[targeted] {model_id}: {infeasible} utterances with infeasible targets excluded");
        }
        let cw_wer_vs_target = if records.is_empty() {
            f64::NAN
        } else {
            records.iter().map(|r| r.wer_vs_target.unwrap_or(f64::NAN)).sum::<f64>() / records.len() as f64
        };
        let summary = metrics::summarize(model_id, "cw", &records)?;
        let gen_cfg = GeneticConfig {
            pop: plan.attacks.genetic.pop,
            iters: plan.attacks.genetic.iters,
            mut_std: plan.attacks.genetic.mut_std,
            elite: plan.attacks.genetic.elite,
            seed: plan.seed,
            bound: Bound::SnrDb(plan.attacks.genetic_snr_db),
        };
        let (_, gen_records) = sweep_cell(model, utts, |u| genetic_attack(model, u, &gen_cfg))?;
        csv.push_str(&format!(
            "{model_id},{},{},{},{},{}\n",
            fmt_num(clean),
            fmt_num(cw_wer_vs_target),
            fmt_num(summary.mean_snr),
            fmt_num(summary.accuracy.unwrap_or(f64::NAN)),
            fmt_num(mean_wer(&gen_records)),
        ));
    }
    let path = out_dir.join("targeted.csv");
    fs::write(&path, csv)?;
    Ok(path)
}

/// Transfer matrix: craft on each source, apply to every target. SSL rows
/// are crafted on the pretrained encoder.
pub fn cmd_transfer(plan: &Plan, test: &[Utterance], panel: &Panel, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let utts = subset(test, plan.subset);
    let selected = panel.selected(plan);
    if selected.len() < 2 {
        return Err(HarnessError::Plan("transfer needs at least two models".into()));
    }
    let snr = plan.attacks.transfer_snr_db;
    let rows_for = |source_id: &str, advs: &[AdversarialExample]| -> Result<Vec<SummaryRow>> {
        let mut rows = Vec::new();
        for (target_id, target_model) in &selected {
            let records: Vec<AttackRecord> = utts
                .iter()
                .zip(advs)
                .map(|(u, a)| transfer_apply(a, u, target_model).map_err(HarnessError::from))
                .collect::<Result<_>>()?;
            let mut row = metrics::summarize(source_id, target_id, &records)?;
            row.attack_id = target_id.to_string();
            rows.push(row);
        }
        Ok(rows)
    };

    // delta = 0 control: clean decoding of every target model
    let zero_advs: Vec<AdversarialExample> = utts
        .iter()
        .map(|u| AdversarialExample {
            utterance_id: u.id.clone(),
            delta: Perturbation::zeros(u.waveform.len()),
            snr_db: f64::INFINITY,
            attack: "none".into(),
            target: None,
            succeeded: None,
        })
        .collect();

    let mut csv = String::from("attack,source,target,mean_wer,mean_snr,n\n");
    for (target_id, target_model) in &selected {
        let records: Vec<AttackRecord> = utts
            .iter()
            .zip(&zero_advs)
            .map(|(u, a)| transfer_apply(a, u, target_model).map_err(HarnessError::from))
            .collect::<Result<_>>()?;
        let row = metrics::summarize("none", target_id, &records)?;
        csv.push_str(&format!(
            "none,none,{target_id},{},{},{}\n",
            fmt_num(row.mean_wer),
            fmt_num(row.mean_snr),
            row.n
        ));
    }

    for (source_id, source_model) in &selected {
        let pgd_advs: Vec<AdversarialExample> = utts
            .par_iter()
            .map(|u| {
                pgd(source_model, u, &PgdConfig {
                    steps: plan.attacks.pgd.steps,
                    rand_init: plan.attacks.pgd.rand_init,
                    seed: plan.seed,
                    ..PgdConfig::new(signal::NormKind::L2, Bound::SnrDb(snr))
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        for row in &rows_for(source_id, &pgd_advs)? {
            csv.push_str(&format!(
                "pgd,{source_id},{},{},{},{}\n",
                row.attack_id,
                fmt_num(row.mean_wer),
                fmt_num(row.mean_snr),
                row.n
            ));
        }

        let cw_cfg = CwConfig {
            c: plan.attacks.cw.c,
            lr: plan.attacks.cw.lr,
            steps: plan.attacks.cw.steps,
            decay: plan.attacks.cw.decay,
            check_every: plan.attacks.cw.check_every,
            eps_init: None,
        };
        let cw_advs: Vec<AdversarialExample> = utts
            .par_iter()
            .map(|u| {
                let target = select_target(&u.transcript, &plan.targets)
                    .map_err(|e| AttackError::Config(e.to_string()))?;
                cw_attack(source_model, u, target, &cw_cfg)
            })
            .collect::<std::result::Result<_, _>>()?;
        for row in &rows_for(source_id, &cw_advs)? {
            csv.push_str(&format!(
                "cw,{source_id},{},{},{},{}\n",
                row.attack_id,
                fmt_num(row.mean_wer),
                fmt_num(row.mean_snr),
                row.n
            ));
        }
    }

    // SSL perturbations are crafted once, on the pretrained encoder
    let ssl_cfg = SslConfig {
        steps: plan.attacks.ssl.steps,
        seed: plan.seed,
        ..SslConfig::new(Bound::SnrDb(snr))
    };
    let ssl_advs: Vec<AdversarialExample> = utts
        .par_iter()
        .map(|u| ssl_attack(&panel.encoder, u, &ssl_cfg))
        .collect::<std::result::Result<_, _>>()?;
    for row in &rows_for(ENCODER_ID, &ssl_advs)? {
        csv.push_str(&format!(
            "ssl,{ENCODER_ID},{},{},{},{}\n",
            row.attack_id,
            fmt_num(row.mean_wer),
            fmt_num(row.mean_snr),
            row.n
        ));
    }

    let path = out_dir.join("transfer.csv");
    fs::write(&path, csv)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// CSV numbers and SVG reporting

/// Formats with 6 significant digits, "." decimal separator.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).clamp(0, 12) as usize;
    let s = format!("{x:.decimals$}");
    // trim trailing zeros but keep at least one digit after the point
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone)]
struct SweepRow {
    model: String,
    attack: String,
    snr_db: f64,
    mean_wer: f64,
}

fn parse_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if !line.starts_with("model,attack,snr_db") {
                return Err(HarnessError::Csv { line: 1, msg: "unexpected header".into() });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(HarnessError::Csv { line: i + 1, msg: format!("expected 5 fields, got {}", parts.len()) });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| HarnessError::Csv { line: i + 1, msg: format!("bad {what}: {s}") })
        };
        rows.push(SweepRow {
            model: parts[0].to_string(),
            attack: parts[1].to_string(),
            snr_db: parse(parts[2], "snr")?,
            mean_wer: parse(parts[3], "wer")?,
        });
    }
    Ok(rows)
}

const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#3c8d0d", "#8d5a97", "#e08a1e", "#12777f"];

/// Renders one WER-vs-SNR line chart per attack found in the sweep CSV.
/// Pure function of the CSV bytes.
pub fn render_sweep_svgs(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = parse_sweep_csv(csv_path)?;
    let mut attacks_seen: Vec<String> = Vec::new();
    for r in &rows {
        if !attacks_seen.contains(&r.attack) {
            attacks_seen.push(r.attack.clone());
        }
    }
    let mut out_paths = Vec::new();
    for attack in attacks_seen {
        let sub: Vec<&SweepRow> = rows.iter().filter(|r| r.attack == attack).collect();
        let mut models: Vec<String> = Vec::new();
        for r in &sub {
            if !models.contains(&r.model) {
                models.push(r.model.clone());
            }
        }
        let series: Vec<(String, Vec<(f64, f64)>)> = models
            .iter()
            .map(|m| {
                let mut pts: Vec<(f64, f64)> = sub
                    .iter()
                    .filter(|r| &r.model == m)
                    .map(|r| (r.snr_db, r.mean_wer))
                    .collect();
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                (m.clone(), pts)
            })
            .collect();
        let svg = line_chart(&format!("mean WER vs SNR ({attack})"), "SNR (dB)", "WER (%)", &series);
        let path = out_dir.join(format!("sweep_{attack}.svg"));
        fs::write(&path, svg)?;
        out_paths.push(path);
    }
    Ok(out_paths)
}

fn svg_coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Minimal deterministic SVG 1.1 line chart: axes, ticks, legend, one
/// polyline with point markers per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 150.0, 40.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let mut y1 = all.iter().fold(0.0f64, |a, p| a.max(p.1));
    let y0 = 0.0;
    if !x0.is_finite() || x0 == x1 {
        x0 -= 1.0;
        x1 = x0 + 2.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |v: f64| ml + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64| mt + ph - (v - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{title}</text>\n",
        svg_coord(ml + pw / 2.0)
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        svg_coord(ml), svg_coord(mt + ph), svg_coord(ml + pw), svg_coord(mt + ph)
    ));
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        svg_coord(ml), svg_coord(mt), svg_coord(ml), svg_coord(mt + ph)
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        s.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
            svg_coord(sx(fx)), svg_coord(mt + ph), svg_coord(mt + ph + 5.0)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            svg_coord(sx(fx)), svg_coord(mt + ph + 18.0), fmt_num((fx * 100.0).round() / 100.0)
        ));
        s.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"black\"/>\n",
            svg_coord(sy(fy)), svg_coord(ml - 5.0), svg_coord(ml)
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            svg_coord(ml - 8.0), svg_coord(sy(fy) + 4.0), fmt_num((fy * 100.0).round() / 100.0)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>\n",
        svg_coord(ml + pw / 2.0), svg_coord(h - 10.0)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{y_label}</text>\n",
        svg_coord(mt + ph / 2.0)
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let path: Vec<String> =
                pts.iter().map(|(x, y)| format!("{},{}", svg_coord(sx(*x)), svg_coord(sy(*y)))).collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            for (x, y) in pts {
                s.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                    svg_coord(sx(*x)), svg_coord(sy(*y))
                ));
            }
        }
        let ly = mt + 14.0 + i as f64 * 18.0;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{1}\" x2=\"{}\" y2=\"{1}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            svg_coord(w - mr + 10.0), svg_coord(ly),
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            svg_coord(w - mr + 40.0), svg_coord(ly + 4.0)
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_PLAN: &str = r#"
seed = 7
snr_grid = [40.0, 30.0, 20.0]
targets = ["bad", "face", "be a cad"]
"#;

    #[test]
    fn plan_parses_with_defaults() {
        let plan = Plan::from_str(MINIMAL_PLAN).unwrap();
        assert_eq!(plan.seed, 7);
        assert_eq!(plan.subset, 100);
        assert_eq!(plan.attacks.pgd.steps, 100);
        assert_eq!(plan.attacks.cw.steps, 5000);
        assert_eq!(plan.attacks.genetic.iters, 2000);
        assert_eq!(plan.attacks.ssl.steps, 500);
        assert_eq!(plan.corpus.n_train, 240);
    }

    #[test]
    fn plan_rejects_unknown_keys() {
        let text = format!("{MINIMAL_PLAN}\nbogus_key = 1\n");
        let err = Plan::from_str(&text).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let nested = format!("{MINIMAL_PLAN}\n[attacks.pgd]\nsteps = 10\nwhat = 2\n");
        assert!(Plan::from_str(&nested).is_err());
    }

    #[test]
    fn plan_rejects_bad_grids_and_targets() {
        let ascending = "seed = 1\nsnr_grid = [10.0, 20.0]\ntargets = [\"bad\"]\n";
        assert!(Plan::from_str(ascending).is_err());
        let no_targets = "seed = 1\nsnr_grid = [20.0]\ntargets = []\n";
        assert!(Plan::from_str(no_targets).is_err());
    }

    #[test]
    fn fmt_num_examples() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_num(f64::NAN), "nan");
        assert_eq!(fmt_num(123.4567891), "123.457");
        assert_eq!(fmt_num(0.0001234567891), "0.000123457");
        assert_eq!(fmt_num(20.0), "20");
        assert_eq!(fmt_num(-7.5), "-7.5");
        assert_eq!(fmt_num(100.0 / 3.0), "33.3333");
    }

    #[test]
    fn sweep_csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad_header = dir.path().join("h.csv");
        fs::write(&bad_header, "nope\n").unwrap();
        match render_sweep_svgs(&bad_header, dir.path()) {
            Err(HarnessError::Csv { line: 1, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        let bad_field = dir.path().join("f.csv");
        fs::write(&bad_field, "model,attack,snr_db,mean_wer,n\nm,a,20,oops,4\n").unwrap();
        match render_sweep_svgs(&bad_field, dir.path()) {
            Err(HarnessError::Csv { line: 2, msg }) => assert!(msg.contains("oops")),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn svg_rendering_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("sweep.csv");
        fs::write(
            &csv,
            "model,attack,snr_db,mean_wer,n\n\
             m1,pgd_l2,40,5.5,10\nm1,pgd_l2,20,80.25,10\n\
             m2,pgd_l2,40,2,10\nm2,pgd_l2,20,60,10\n",
        )
        .unwrap();
        let first = render_sweep_svgs(&csv, dir.path()).unwrap();
        assert_eq!(first.len(), 1);
        let a = fs::read(&first[0]).unwrap();
        let again = render_sweep_svgs(&csv, dir.path()).unwrap();
        let b = fs::read(&again[0]).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\""));
        assert!(text.contains("polyline"));
        assert!(text.contains("m2"));
    }
}
