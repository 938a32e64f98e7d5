//! Time-domain audio: waveforms, PCM16 WAV I/O, norms and SNR arithmetic.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed wav file: {0}")]
    Format(String),
    #[error("unsupported wav format: {0}")]
    Unsupported(String),
    #[error("invalid waveform: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Mono audio samples in [-1, 1] at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(SignalError::Invalid("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(SignalError::Invalid("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(SignalError::Invalid("non-finite sample".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Returns self + delta, clipped to [-1, 1].
    pub fn add_clipped(&self, delta: &Perturbation) -> Result<Waveform> {
        if delta.len() != self.len() {
            return Err(SignalError::Invalid("perturbation length mismatch".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(delta.values())
            .map(|(s, d)| (s + d).clamp(-1.0, 1.0))
            .collect();
        Waveform::new(samples, self.sample_rate)
    }
}

/// Additive perturbation, same length as its reference waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    delta: Vec<f64>,
}

impl Perturbation {
    pub fn new(delta: Vec<f64>) -> Result<Self> {
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(SignalError::Invalid("non-finite perturbation value".into()));
        }
        Ok(Perturbation { delta })
    }

    pub fn zeros(len: usize) -> Self {
        Perturbation { delta: vec![0.0; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Linf,
}

pub fn norm(v: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormKind::Linf => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
    }
}

/// 20*log10(||x||_2 / ||delta||_2). Zero delta yields +inf.
pub fn snr_db(x: &Waveform, delta: &Perturbation) -> Result<f64> {
    if delta.len() != x.len() {
        return Err(SignalError::Invalid("length mismatch".into()));
    }
    let nx = norm(x.samples(), NormKind::L2);
    if nx == 0.0 {
        return Err(SignalError::Domain("zero-energy reference waveform".into()));
    }
    let nd = norm(delta.values(), NormKind::L2);
    if nd == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (nx / nd).log10())
}

/// Perturbation budget for a requested SNR: ||x||_2 / 10^(snr/20).
pub fn eps_from_snr(x: &Waveform, snr: f64) -> Result<f64> {
    let nx = norm(x.samples(), NormKind::L2);
    if nx == 0.0 {
        return Err(SignalError::Domain("zero-energy reference waveform".into()));
    }
    Ok(nx / 10f64.powf(snr / 20.0))
}

const PCM_SCALE: f64 = 32768.0;

fn read_u32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn read_u16(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

/// Reads a mono PCM16 RIFF/WAVE file, scaling samples to [-1, 1].
/// Unknown chunks before the data chunk are skipped.
pub fn load_wav<P: AsRef<Path>>(path: P) -> Result<Waveform> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(SignalError::Format("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(SignalError::Format("chunk extends past end of file".into()));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(SignalError::Format("fmt chunk too short".into()));
                }
                fmt = Some((
                    read_u16(&bytes, body),
                    read_u16(&bytes, body + 2),
                    read_u32(&bytes, body + 4),
                    read_u16(&bytes, body + 14),
                ));
            }
            b"data" => {
                data = Some((body, size));
                break;
            }
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| SignalError::Format("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(SignalError::Unsupported(format!("format tag {format}, expected PCM")));
    }
    if channels != 1 {
        return Err(SignalError::Unsupported(format!("{channels} channels, expected mono")));
    }
    if bits != 16 {
        return Err(SignalError::Unsupported(format!("{bits}-bit samples, expected 16")));
    }
    let (off, size) = data.ok_or_else(|| SignalError::Format("missing data chunk".into()))?;
    if size == 0 {
        return Err(SignalError::Format("empty data chunk".into()));
    }
    if size % 2 != 0 {
        return Err(SignalError::Format("odd data chunk length".into()));
    }
    let samples = bytes[off..off + size]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE)
        .collect();
    Waveform::new(samples, rate)
}

/// Writes a mono PCM16 WAV with the canonical 44-byte header.
/// Samples are clipped to [-1, 1], scaled by 32768, and clamped to the
/// i16 range so that load/save use the same scale.
pub fn save_wav<P: AsRef<Path>>(w: &Waveform, path: P) -> Result<()> {
    let n = w.len() as u32;
    let data_len = n * 2;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    File::create(path)?.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn load_scales_by_32768() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        // hand-build a file with samples {0, 16384, -32768}
        let w = raw_wav(&[0, 16384, -32768], 8000);
        std::fs::write(&path, w).unwrap();
        let wav = load_wav(&path).unwrap();
        assert_eq!(wav.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(wav.sample_rate(), 8000);
    }

    #[test]
    fn empty_data_chunk_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        std::fs::write(&path, raw_wav(&[], 8000)).unwrap();
        assert!(matches!(load_wav(&path), Err(SignalError::Format(_))));
    }

    #[test]
    fn stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let mut bytes = raw_wav(&[0, 0], 8000);
        bytes[22] = 2; // channel count
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_wav(&path), Err(SignalError::Unsupported(_))));
    }

    #[test]
    fn extra_chunks_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let base = raw_wav(&[100, -100], 16000);
        // splice a LIST chunk between fmt and data
        let mut bytes = base[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(b"INFO");
        bytes.extend_from_slice(&base[36..]);
        let riff_len = (bytes.len() - 8) as u32;
        bytes[4..8].copy_from_slice(&riff_len.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let wav = load_wav(&path).unwrap();
        assert_eq!(wav.len(), 2);
    }

    #[test]
    fn save_clips_and_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.wav");
        save_wav(&Waveform::new(vec![1.0], 8000).unwrap(), &p1).unwrap();
        assert_eq!(
            i16::from_le_bytes([std::fs::read(&p1).unwrap()[44], std::fs::read(&p1).unwrap()[45]]),
            32767
        );
        let p2 = dir.path().join("b.wav");
        save_wav(&Waveform::new(vec![-1.5], 8000).unwrap(), &p2).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(i16::from_le_bytes([b[44], b[45]]), -32768);
    }

    #[test]
    fn snr_examples() {
        let x = Waveform::new(vec![0.5, -0.25, 0.125], 8000).unwrap();
        let d = Perturbation::new(x.samples().iter().map(|s| 0.1 * s).collect()).unwrap();
        assert!((snr_db(&x, &d).unwrap() - 20.0).abs() < 1e-9);
        let d2 = Perturbation::new(x.samples().to_vec()).unwrap();
        assert!(snr_db(&x, &d2).unwrap().abs() < 1e-9);
        let x3 = Waveform::new(vec![1.0, 0.0], 8000).unwrap();
        let d3 = Perturbation::new(vec![0.01, 0.0]).unwrap();
        assert!((snr_db(&x3, &d3).unwrap() - 40.0).abs() < 1e-9);
        let zero = Perturbation::zeros(2);
        assert!(snr_db(&x3, &zero).unwrap().is_infinite());
    }

    #[test]
    fn eps_from_snr_examples() {
        let x = Waveform::new(vec![1.0, 0.0], 8000).unwrap();
        assert!((eps_from_snr(&x, 20.0).unwrap() - 0.1).abs() < 1e-12);
        assert!((eps_from_snr(&x, 0.0).unwrap() - 1.0).abs() < 1e-12);
        // ||x||_2 = 3.2, snr = 30
        let x2 = Waveform::new(vec![3.2, 0.0], 8000).unwrap();
        assert!((eps_from_snr(&x2, 30.0).unwrap() - 0.101192885125388).abs() < 1e-9);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&[3.0, 4.0], NormKind::L2), 5.0);
        assert_eq!(norm(&[3.0, -4.0], NormKind::Linf), 4.0);
    }

    fn raw_wav(samples: &[i16], rate: u32) -> Vec<u8> {
        let data_len = (samples.len() * 2) as u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2).to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&data_len.to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    proptest! {
        #[test]
        fn wav_round_trip_within_one_step(samples in proptest::collection::vec(-1.0f64..1.0, 1..64)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.wav");
            let w = Waveform::new(samples.clone(), 8000).unwrap();
            save_wav(&w, &path).unwrap();
            let back = load_wav(&path).unwrap();
            prop_assert_eq!(back.len(), w.len());
            for (a, b) in w.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }

        #[test]
        fn snr_scale_invariant(
            xs in proptest::collection::vec(-1.0f64..1.0, 2..32),
            ds in proptest::collection::vec(-0.1f64..0.1, 2..32),
            c in 0.01f64..100.0,
        ) {
            let n = xs.len().min(ds.len());
            let xs = &xs[..n];
            let ds = &ds[..n];
            prop_assume!(norm(xs, NormKind::L2) > 1e-6 && norm(ds, NormKind::L2) > 1e-9);
            let x = Waveform::new(xs.to_vec(), 8000).unwrap();
            let d = Perturbation::new(ds.to_vec()).unwrap();
            let s1 = snr_db(&x, &d).unwrap();
            let x2 = Waveform::new(xs.iter().map(|v| v * c).collect(), 8000);
            // scaling can push samples outside [-1,1]; Waveform allows it only via new? keep within range
            prop_assume!(x2.is_ok());
            let d2 = Perturbation::new(ds.iter().map(|v| v * c).collect()).unwrap();
            let s2 = snr_db(&x2.unwrap(), &d2).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }

        #[test]
        fn snr_eps_round_trip(
            xs in proptest::collection::vec(-1.0f64..1.0, 2..32),
            ds in proptest::collection::vec(-1.0f64..1.0, 2..32),
            s in -10.0f64..60.0,
        ) {
            let n = xs.len().min(ds.len());
            let (xs, ds) = (&xs[..n], &ds[..n]);
            prop_assume!(norm(xs, NormKind::L2) > 1e-6 && norm(ds, NormKind::L2) > 1e-9);
            let x = Waveform::new(xs.to_vec(), 8000).unwrap();
            let eps = eps_from_snr(&x, s).unwrap();
            let scale = eps / norm(ds, NormKind::L2);
            let d = Perturbation::new(ds.iter().map(|v| v * scale).collect()).unwrap();
            prop_assert!((snr_db(&x, &d).unwrap() - s).abs() < 1e-9);
        }

        #[test]
        fn l2_at_least_linf(v in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
            prop_assert!(norm(&v, NormKind::L2) >= norm(&v, NormKind::Linf) - 1e-12);
        }
    }
}
