//! Deterministic synthetic spoken-symbol corpus. Each character renders to
//! a fixed two-tone signature plus noise; space is near-silence.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{FeatureConfig, Vocabulary};
use crate::signal::{self, Waveform};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown character {0:?}")]
    UnknownChar(char),
    #[error("signal error: {0}")]
    Signal(#[from] signal::SignalError),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
    pub transcript: String,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub chars_min: usize,
    pub chars_max: usize,
    pub sample_rate: u32,
    pub symbol_dur: usize,
    pub noise_std: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 240,
            n_test: 40,
            seed: 1,
            chars_min: 3,
            chars_max: 6,
            sample_rate: 8000,
            symbol_dur: 512,
            noise_std: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub config: CorpusConfig,
}

/// Feature-extractor bin indices (256-point frame) of each character's two
/// tones. Spaced away from DC and Nyquist; all within the default 32 bins.
fn signature_bins(ch: char) -> Option<(usize, usize)> {
    match ch {
        'a' => Some((4, 13)),
        'b' => Some((6, 15)),
        'c' => Some((8, 17)),
        'd' => Some((10, 19)),
        'e' => Some((12, 21)),
        'f' => Some((14, 23)),
        'g' => Some((16, 25)),
        'h' => Some((18, 27)),
        _ => None,
    }
}

const TONE_AMP: f64 = 0.3;
const SIGNATURE_FRAME: usize = 256;

/// Renders one character: two tones at its signature frequencies plus
/// Gaussian noise, or noise alone for space.
pub fn render_symbol(ch: char, cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let tones = if ch == ' ' {
        None
    } else {
        Some(signature_bins(ch).ok_or(CorpusError::UnknownChar(ch))?)
    };
    let mut out = Vec::with_capacity(cfg.symbol_dur);
    for t in 0..cfg.symbol_dur {
        let mut v = gaussian(rng) * cfg.noise_std;
        if let Some((b1, b2)) = tones {
            // bin b of a SIGNATURE_FRAME-point frame <=> frequency
            // b * sample_rate / SIGNATURE_FRAME
            let phase = 2.0 * std::f64::consts::PI * t as f64 / SIGNATURE_FRAME as f64;
            v += TONE_AMP * (phase * b1 as f64).sin();
            v += TONE_AMP * (phase * b2 as f64).sin();
        }
        out.push(v.clamp(-1.0, 1.0));
    }
    Ok(out)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_transcript(vocab: &Vocabulary, cfg: &CorpusConfig, rng: &mut ChaCha8Rng) -> String {
    let letters: Vec<char> = vocab.chars().iter().copied().filter(|&c| c != ' ').collect();
    let len = rng.random_range(cfg.chars_min..=cfg.chars_max);
    let mut out = String::new();
    for i in 0..len {
        let can_space = i > 0 && i + 1 < len && !out.ends_with(' ');
        if can_space && rng.random_range(0.0..1.0) < 0.2 {
            out.push(' ');
        } else {
            out.push(letters[rng.random_range(0..letters.len())]);
        }
    }
    out
}

fn render_utterance(
    id: &str,
    transcript: &str,
    cfg: &CorpusConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Utterance> {
    let mut samples = Vec::with_capacity(transcript.chars().count() * cfg.symbol_dur);
    for ch in transcript.chars() {
        samples.extend(render_symbol(ch, cfg, rng)?);
    }
    Ok(Utterance {
        id: id.to_string(),
        waveform: Waveform::new(samples, cfg.sample_rate)?,
        transcript: transcript.to_string(),
    })
}

fn ctc_feasible(transcript: &str, frames: usize) -> bool {
    let chars: Vec<char> = transcript.chars().collect();
    let repeats = chars.windows(2).filter(|w| w[0] == w[1]).count();
    frames >= chars.len() + repeats
}

/// Generates disjoint train/test splits; a pure function of the config.
pub fn generate_corpus(cfg: &CorpusConfig, vocab: &Vocabulary, feat: &FeatureConfig) -> Result<Corpus> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(CorpusError::Config("n_train and n_test must be positive".into()));
    }
    if cfg.chars_min == 0 || cfg.chars_min > cfg.chars_max {
        return Err(CorpusError::Config("need 0 < chars_min <= chars_max".into()));
    }
    if cfg.symbol_dur < feat.frame_len {
        return Err(CorpusError::Config(format!(
            "symbol_dur {} shorter than frame_len {}",
            cfg.symbol_dur, feat.frame_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_texts: HashSet<String> = HashSet::new();
    let make_split = |prefix: &str, n: usize, taken: &HashSet<String>, rng: &mut ChaCha8Rng| -> Result<Vec<Utterance>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let transcript = loop {
                let t = random_transcript(vocab, cfg, rng);
                let frames = (t.chars().count() * cfg.symbol_dur - feat.frame_len) / feat.hop + 1;
                if ctc_feasible(&t, frames) && !taken.contains(&t) {
                    break t;
                }
            };
            out.push(render_utterance(&format!("{prefix}-{i:04}"), &transcript, cfg, rng)?);
        }
        Ok(out)
    };
    let train = make_split("train", cfg.n_train, &HashSet::new(), &mut rng)?;
    train_texts.extend(train.iter().map(|u| u.transcript.clone()));
    let test = make_split("test", cfg.n_test, &train_texts, &mut rng)?;
    Ok(Corpus { train, test, config: *cfg })
}

/// Among `targets`, the one whose word count is closest to the label's;
/// ties go to the earliest entry.
pub fn select_target<'a>(label: &str, targets: &'a [String]) -> Result<&'a str> {
    if targets.is_empty() {
        return Err(CorpusError::Config("empty target list".into()));
    }
    let words = |s: &str| s.split_whitespace().count() as i64;
    let lw = words(label);
    let mut best = 0usize;
    for (i, t) in targets.iter().enumerate() {
        if (words(t) - lw).abs() < (words(&targets[best]) - lw).abs() {
            best = i;
        }
    }
    Ok(&targets[best])
}

/// Writes WAVs plus a tab-separated manifest: `id<TAB>path<TAB>transcript`.
pub fn write_corpus<P: AsRef<Path>>(corpus: &Corpus, dir: P) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("wav"))?;
    for (name, split) in [("train", &corpus.train), ("test", &corpus.test)] {
        let mut manifest = String::new();
        for utt in split.iter() {
            let rel = format!("wav/{}.wav", utt.id);
            signal::save_wav(&utt.waveform, dir.join(&rel))?;
            manifest.push_str(&format!("{}\t{}\t{}\n", utt.id, rel, utt.transcript));
        }
        fs::write(dir.join(format!("{name}.tsv")), manifest)?;
    }
    let cfg = toml::to_string(&corpus.config)
        .map_err(|e| CorpusError::Config(format!("serialize config: {e}")))?;
    fs::write(dir.join("config.toml"), cfg)?;
    Ok(())
}

fn read_split(dir: &Path, name: &str) -> Result<Vec<Utterance>> {
    let path = dir.join(format!("{name}.tsv"));
    let text = fs::read_to_string(&path)
        .map_err(|e| CorpusError::Manifest(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.splitn(3, '\t');
        let (id, rel, transcript) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(CorpusError::Manifest(format!(
                    "{}:{}: expected id<TAB>path<TAB>transcript",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        out.push(Utterance {
            id: id.to_string(),
            waveform: signal::load_wav(dir.join(rel))?,
            transcript: transcript.to_string(),
        });
    }
    Ok(out)
}

/// Reads a corpus previously written by [`write_corpus`].
pub fn load_corpus<P: AsRef<Path>>(dir: P) -> Result<Corpus> {
    let dir = dir.as_ref();
    let cfg_text = fs::read_to_string(dir.join("config.toml"))
        .map_err(|e| CorpusError::Manifest(format!("missing config.toml: {e}")))?;
    let config: CorpusConfig =
        toml::from_str(&cfg_text).map_err(|e| CorpusError::Config(format!("config.toml: {e}")))?;
    Ok(Corpus { train: read_split(dir, "train")?, test: read_split(dir, "test")?, config })
}
