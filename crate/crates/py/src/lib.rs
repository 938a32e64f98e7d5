//! Python bindings for the advspeech toolkit.
//!
//! Exposes the main types and operations: waveforms and WAV I/O, corpus
//! generation, model training and decoding, the attack suite, and metrics.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use advspeech::attacks::{
    cw_attack, genetic_attack, kenansville_attack, pgd, ssl_attack, transfer_apply, Bound as AttackBound,
    CwConfig, GeneticConfig, KenansvilleConfig, PgdConfig, SslConfig,
};
use advspeech::corpus::{generate_corpus, load_corpus, write_corpus, CorpusConfig};
use advspeech::metrics;
use advspeech::model::{
    load_model, save_model, train_supervised, Arch, FeatureConfig, Hyper, TrainedModel,
    Vocabulary,
};
use advspeech::signal::{self, NormKind};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_norm(s: &str) -> PyResult<NormKind> {
    match s {
        "l2" => Ok(NormKind::L2),
        "linf" => Ok(NormKind::Linf),
        other => Err(PyValueError::new_err(format!("unknown norm {other:?}, expected 'l2' or 'linf'"))),
    }
}

/// A mono waveform: f64 samples in [-1, 1] plus a sample rate.
#[pyclass(name = "Waveform", from_py_object)]
#[derive(Clone)]
struct PyWaveform {
    inner: signal::Waveform,
}

#[pymethods]
impl PyWaveform {
    #[new]
    fn new(samples: Vec<f64>, sample_rate: u32) -> PyResult<Self> {
        Ok(PyWaveform { inner: signal::Waveform::new(samples, sample_rate).map_err(value_err)? })
    }

    fn samples(&self) -> Vec<f64> {
        self.inner.samples().to_vec()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Adds a perturbation and clips the result to [-1, 1].
    fn add_clipped(&self, delta: Vec<f64>) -> PyResult<PyWaveform> {
        let p = signal::Perturbation::new(delta).map_err(value_err)?;
        Ok(PyWaveform { inner: self.inner.add_clipped(&p).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        signal::save_wav(&self.inner, path).map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!("Waveform(len={}, sample_rate={})", self.inner.len(), self.inner.sample_rate())
    }
}

/// One synthetic utterance: id, waveform, and transcript.
#[pyclass(name = "Utterance", from_py_object)]
#[derive(Clone)]
struct PyUtterance {
    inner: advspeech::corpus::Utterance,
}

#[pymethods]
impl PyUtterance {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn transcript(&self) -> String {
        self.inner.transcript.clone()
    }

    #[getter]
    fn waveform(&self) -> PyWaveform {
        PyWaveform { inner: self.inner.waveform.clone() }
    }

    fn __repr__(&self) -> String {
        format!("Utterance(id={:?}, transcript={:?})", self.inner.id, self.inner.transcript)
    }
}

/// Train/test split of synthetic utterances.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: advspeech::corpus::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[getter]
    fn train(&self) -> Vec<PyUtterance> {
        self.inner.train.iter().map(|u| PyUtterance { inner: u.clone() }).collect()
    }

    #[getter]
    fn test(&self) -> Vec<PyUtterance> {
        self.inner.test.iter().map(|u| PyUtterance { inner: u.clone() }).collect()
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        write_corpus(&self.inner, dir).map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!("Corpus(train={}, test={})", self.inner.train.len(), self.inner.test.len())
    }
}

/// Result of an attack: the perturbation, its SNR, and outcome flags.
#[pyclass(name = "AdversarialExample")]
struct PyAdversarialExample {
    inner: advspeech::attacks::AdversarialExample,
}

#[pymethods]
impl PyAdversarialExample {
    #[getter]
    fn utterance_id(&self) -> String {
        self.inner.utterance_id.clone()
    }

    #[getter]
    fn delta(&self) -> Vec<f64> {
        self.inner.delta.values().to_vec()
    }

    #[getter]
    fn snr_db(&self) -> f64 {
        self.inner.snr_db
    }

    #[getter]
    fn attack(&self) -> String {
        self.inner.attack.clone()
    }

    #[getter]
    fn target(&self) -> Option<String> {
        self.inner.target.clone()
    }

    #[getter]
    fn succeeded(&self) -> Option<bool> {
        self.inner.succeeded
    }

    fn __repr__(&self) -> String {
        format!("AdversarialExample(attack={:?}, snr_db={:.2})", self.inner.attack, self.inner.snr_db)
    }
}

/// A trained CTC model (feed-forward, recurrent, or encoder+head).
#[pyclass(name = "Model")]
struct PyModel {
    inner: TrainedModel,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn arch(&self) -> String {
        self.inner.arch.tag().to_string()
    }

    /// Greedy CTC decode of raw samples.
    fn decode(&self, samples: Vec<f64>) -> PyResult<String> {
        self.inner.decode(&samples).map_err(runtime_err)
    }

    /// CTC loss of samples against a transcript.
    fn loss(&self, samples: Vec<f64>, transcript: &str) -> PyResult<f64> {
        let label = self.inner.vocab.encode(transcript).map_err(value_err)?;
        self.inner.loss(&samples, &label).map_err(runtime_err)
    }

    /// Untargeted PGD attack at a given SNR budget.
    #[pyo3(signature = (utt, snr_db, steps=100, norm="linf", seed=0))]
    fn pgd(&self, utt: &PyUtterance, snr_db: f64, steps: usize, norm: &str, seed: u64) -> PyResult<PyAdversarialExample> {
        let cfg = PgdConfig {
            steps,
            seed,
            ..PgdConfig::new(parse_norm(norm)?, AttackBound::SnrDb(snr_db))
        };
        Ok(PyAdversarialExample { inner: pgd(&self.inner, &utt.inner, &cfg).map_err(runtime_err)? })
    }

    /// Targeted minimum-Linf attack towards a transcript.
    #[pyo3(signature = (utt, target, steps=5000))]
    fn cw(&self, utt: &PyUtterance, target: &str, steps: usize) -> PyResult<PyAdversarialExample> {
        let cfg = CwConfig { steps, ..CwConfig::default() };
        Ok(PyAdversarialExample {
            inner: cw_attack(&self.inner, &utt.inner, target, &cfg).map_err(runtime_err)?,
        })
    }

    /// Black-box genetic attack at a given SNR budget.
    #[pyo3(signature = (utt, snr_db, pop=20, iters=100, seed=0))]
    fn genetic(&self, utt: &PyUtterance, snr_db: f64, pop: usize, iters: usize, seed: u64) -> PyResult<PyAdversarialExample> {
        let cfg = GeneticConfig { pop, iters, seed, ..GeneticConfig::new(AttackBound::SnrDb(snr_db)) };
        Ok(PyAdversarialExample {
            inner: genetic_attack(&self.inner, &utt.inner, &cfg).map_err(runtime_err)?,
        })
    }

    /// Label-free attack on the encoder representation (encoder+head models only).
    #[pyo3(signature = (utt, snr_db, steps=100, seed=0))]
    fn ssl(&self, utt: &PyUtterance, snr_db: f64, steps: usize, seed: u64) -> PyResult<PyAdversarialExample> {
        let cfg = SslConfig { steps, seed, ..SslConfig::new(AttackBound::SnrDb(snr_db)) };
        Ok(PyAdversarialExample {
            inner: ssl_attack(&self.inner, &utt.inner, &cfg).map_err(runtime_err)?,
        })
    }

    /// Applies a (possibly foreign) perturbation to an utterance and decodes
    /// with this model. Returns (decoded, wer_vs_label, snr_db).
    fn apply(&self, adv: &PyAdversarialExample, utt: &PyUtterance) -> PyResult<(String, f64, f64)> {
        let r = transfer_apply(&adv.inner, &utt.inner, &self.inner).map_err(runtime_err)?;
        Ok((r.decoded, r.wer_vs_label, r.snr_db))
    }

    /// Mean WER (percent) over a list of utterances.
    fn wer_on(&self, utts: Vec<PyUtterance>) -> PyResult<f64> {
        if utts.is_empty() {
            return Err(PyValueError::new_err("need at least one utterance"));
        }
        let mut sum = 0.0;
        for u in &utts {
            let decoded = self.inner.decode(u.inner.waveform.samples()).map_err(runtime_err)?;
            sum += metrics::wer(&decoded, &u.inner.transcript).map_err(value_err)?;
        }
        Ok(sum / utts.len() as f64)
    }

    /// Saves the model checkpoint (bitwise-stable format).
    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.inner, path).map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!("Model(arch={:?})", self.inner.arch.tag())
    }
}

/// Generates the deterministic synthetic corpus.
#[pyfunction]
#[pyo3(signature = (n_train=240, n_test=40, seed=0))]
fn gen_corpus(n_train: usize, n_test: usize, seed: u64) -> PyResult<PyCorpus> {
    let cfg = CorpusConfig { n_train, n_test, seed, ..CorpusConfig::default() };
    let corpus = generate_corpus(&cfg, &Vocabulary::default_toy(), &FeatureConfig::default())
        .map_err(value_err)?;
    Ok(PyCorpus { inner: corpus })
}

/// Loads a corpus previously written with Corpus.save / the CLI.
#[pyfunction]
fn open_corpus(dir: &str) -> PyResult<PyCorpus> {
    Ok(PyCorpus { inner: load_corpus(dir).map_err(runtime_err)? })
}

/// Trains a model from scratch. arch is one of "ff", "rnn".
#[pyfunction]
#[pyo3(signature = (arch, utts, steps=600, lr=0.005, batch=8, seed=0))]
fn train(arch: &str, utts: Vec<PyUtterance>, steps: usize, lr: f64, batch: usize, seed: u64) -> PyResult<PyModel> {
    let a = match arch {
        "ff" => Arch::FfCtc,
        "rnn" => Arch::RnnCtc,
        other => return Err(PyValueError::new_err(format!("unknown arch {other:?}, expected 'ff' or 'rnn'"))),
    };
    let inner: Vec<_> = utts.into_iter().map(|u| u.inner).collect();
    let hyper = Hyper { lr, steps, seed, batch };
    let model = train_supervised(a, &inner, &Vocabulary::default_toy(), &FeatureConfig::default(), &hyper)
        .map_err(runtime_err)?;
    Ok(PyModel { inner: model })
}

/// Loads a model checkpoint saved by Model.save / the CLI.
#[pyfunction]
fn open_model(path: &str) -> PyResult<PyModel> {
    Ok(PyModel { inner: load_model(path).map_err(runtime_err)? })
}

/// Signal-rewriting attack: removes low-power spectral bins down to an SNR target.
#[pyfunction]
#[pyo3(signature = (utt, snr_db, tol_db=0.5))]
fn kenansville(utt: &PyUtterance, snr_db: f64, tol_db: f64) -> PyResult<PyAdversarialExample> {
    let cfg = KenansvilleConfig { snr_db, tol_db };
    Ok(PyAdversarialExample { inner: kenansville_attack(&utt.inner, &cfg).map_err(runtime_err)? })
}

/// Word error rate of a hypothesis against a reference, in percent (uncapped).
#[pyfunction]
fn wer(hyp: &str, reference: &str) -> PyResult<f64> {
    metrics::wer(hyp, reference).map_err(value_err)
}

/// Levenshtein distance between two token sequences.
#[pyfunction]
fn edit_distance(a: Vec<String>, b: Vec<String>) -> usize {
    metrics::edit_distance(&a, &b)
}

/// SNR in dB of a perturbation against a clean waveform.
#[pyfunction]
fn snr_db(clean: &PyWaveform, delta: Vec<f64>) -> PyResult<f64> {
    let p = signal::Perturbation::new(delta).map_err(value_err)?;
    signal::snr_db(&clean.inner, &p).map_err(value_err)
}

/// L2 radius that realizes a given SNR for this waveform.
#[pyfunction]
fn eps_from_snr(clean: &PyWaveform, snr: f64) -> PyResult<f64> {
    signal::eps_from_snr(&clean.inner, snr).map_err(value_err)
}

/// Loads a 16-bit mono PCM WAV file.
#[pyfunction]
fn load_wav(path: &str) -> PyResult<PyWaveform> {
    Ok(PyWaveform { inner: signal::load_wav(path).map_err(runtime_err)? })
}

#[pymodule]
fn advspeech_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWaveform>()?;
    m.add_class::<PyUtterance>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyAdversarialExample>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(open_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(open_model, m)?)?;
    m.add_function(wrap_pyfunction!(kenansville, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(eps_from_snr, m)?)?;
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    Ok(())
}
