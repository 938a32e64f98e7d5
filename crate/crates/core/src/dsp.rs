//! Real-input discrete Fourier analysis: forward/inverse transform and
//! power spectral density. Exact-length semantics; power-of-two inputs take
//! the radix-2 path, everything else falls back to the direct DFT.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty input")]
    Empty,
    #[error("inconsistent spectrum: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Half-spectrum of an N-point real transform: bins 0..=N/2.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub bins: Vec<(f64, f64)>,
    pub n: usize,
}

impl Spectrum {
    pub fn bin_count(&self) -> usize {
        self.n / 2 + 1
    }
}

/// Per-bin power, normalized so the total equals the signal's mean square.
#[derive(Debug, Clone)]
pub struct PsdProfile {
    pub power: Vec<f64>,
}

fn fft_complex(re: &mut [f64], im: &mut [f64], invert: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = if invert { 2.0 } else { -2.0 } * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

fn dft_direct(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    let half = n / 2 + 1;
    let mut out = Vec::with_capacity(half);
    for k in 0..half {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        out.push((re, im));
    }
    out
}

/// Forward transform of a real signal; returns bins 0..=N/2.
pub fn rfft(x: &[f64]) -> Result<Spectrum> {
    let n = x.len();
    if n == 0 {
        return Err(DspError::Empty);
    }
    let bins = if n.is_power_of_two() && n > 1 {
        let mut re = x.to_vec();
        let mut im = vec![0.0; n];
        fft_complex(&mut re, &mut im, false);
        (0..n / 2 + 1).map(|k| (re[k], im[k])).collect()
    } else {
        dft_direct(x)
    };
    Ok(Spectrum { bins, n })
}

/// Inverse of [`rfft`]; reconstructs the length-n real signal.
pub fn irfft(s: &Spectrum) -> Result<Vec<f64>> {
    let n = s.n;
    if n == 0 {
        return Err(DspError::Empty);
    }
    if s.bins.len() != n / 2 + 1 {
        return Err(DspError::Inconsistent(format!(
            "{} bins for n = {}, expected {}",
            s.bins.len(),
            n,
            n / 2 + 1
        )));
    }
    // expand to the full conjugate-symmetric spectrum
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for (k, &(br, bi)) in s.bins.iter().enumerate() {
        re[k] = br;
        im[k] = bi;
        if k > 0 && k < n - k {
            re[n - k] = br;
            im[n - k] = -bi;
        }
    }
    if n.is_power_of_two() && n > 1 {
        fft_complex(&mut re, &mut im, true);
        Ok(re.iter().map(|v| v / n as f64).collect())
    } else {
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let ang = 2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                acc += re[k] * ang.cos() - im[k] * ang.sin();
            }
            out.push(acc / n as f64);
        }
        Ok(out)
    }
}

/// Power per half-spectrum bin: |X_k|^2 * m_k / N^2 with m_k = 2 except at
/// DC and Nyquist. Normalized so the sum equals the signal's mean square.
pub fn psd(s: &Spectrum) -> PsdProfile {
    let n = s.n as f64;
    let power = s
        .bins
        .iter()
        .enumerate()
        .map(|(k, &(re, im))| {
            let m = if k == 0 || (s.n % 2 == 0 && k == s.n / 2) { 1.0 } else { 2.0 };
            (re * re + im * im) * m / (n * n)
        })
        .collect();
    PsdProfile { power }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N^2) DFT used as the oracle for the fast path.
    pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k as f64) * (t as f64) / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn impulse_flat_spectrum() {
        let s = rfft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        for &(re, im) in &s.bins {
            assert!((re - 1.0).abs() < 1e-12 && im.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_is_dc_only() {
        let s = rfft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((s.bins[0].0 - 4.0).abs() < 1e-12);
        for &(re, im) in &s.bins[1..] {
            assert!(re.abs() < 1e-12 && im.abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_oracle_lengths_1_to_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=64usize {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = rfft(&x).unwrap();
            let oracle = naive_dft(&x);
            for (a, b) in s.bins.iter().zip(&oracle) {
                assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn round_trip_lengths_including_primes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=64usize {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let back = irfft(&rfft(&x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(rfft(&[]), Err(DspError::Empty)));
    }

    #[test]
    fn inconsistent_spectrum_rejected() {
        let s = Spectrum { bins: vec![(1.0, 0.0); 3], n: 8 };
        assert!(matches!(irfft(&s), Err(DspError::Inconsistent(_))));
    }

    #[test]
    fn cosine_power_half() {
        // unit-amplitude cosine at bin 3 of a 16-point frame
        let n = 16;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).cos())
            .collect();
        let p = psd(&rfft(&x).unwrap());
        assert!((p.power[3] - 0.5).abs() < 1e-9);
        for (k, &v) in p.power.iter().enumerate() {
            if k != 3 {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_signal_zero_psd() {
        let p = psd(&rfft(&[0.0; 10]).unwrap());
        assert!(p.power.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parseval_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [5usize, 12, 16, 31, 64] {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let total: f64 = psd(&rfft(&x).unwrap()).power.iter().sum();
            let msq = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
            assert!((total - msq).abs() < 1e-9 * msq.max(1.0), "n={n}");
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 24;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + 3.0 * y).collect();
        let sa = rfft(&a).unwrap();
        let sb = rfft(&b).unwrap();
        let ss = rfft(&sum).unwrap();
        for k in 0..ss.bins.len() {
            assert!((ss.bins[k].0 - (2.0 * sa.bins[k].0 + 3.0 * sb.bins[k].0)).abs() < 1e-9);
            assert!((ss.bins[k].1 - (2.0 * sa.bins[k].1 + 3.0 * sb.bins[k].1)).abs() < 1e-9);
        }
    }
}
