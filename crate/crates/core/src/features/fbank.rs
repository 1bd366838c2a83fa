use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureConfig, FeatureError, FeatureKind, FeatureMatrix, Waveform};
use crate::numerics::Tensor;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// The `n_mels + 2` band edges, equally spaced on the mel scale.
fn mel_edges(cfg: &FeatureConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect()
}

/// Centre frequency (Hz) of every triangular filter.
pub fn mel_center_frequencies(cfg: &FeatureConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular filter weights, `n_mels × (fft_size/2 + 1)`, non-negative.
pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let edges = mel_edges(cfg);
    let n_bins = cfg.fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal type-II DCT computed through a length-`n` FFT of the
/// even/odd reordered input.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut v = vec![Complex::new(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        v[i].re = x[2 * i];
    }
    for i in 0..n / 2 {
        v[n - 1 - i].re = x[2 * i + 1];
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut v);
    let s0 = (1.0 / n as f64).sqrt();
    let sk = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|k| {
            let ang = -PI * k as f64 / (2.0 * n as f64);
            let re = v[k].re * ang.cos() - v[k].im * ang.sin();
            re * if k == 0 { s0 } else { sk }
        })
        .collect()
}

/// Reusable extractor holding the window, filterbank and FFT plan for one
/// (config, sample rate) pair.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    frame_len: usize,
    frame_shift: usize,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        cfg.validate(sample_rate)?;
        let frame_len = cfg.frame_length(sample_rate);
        let frame_shift = cfg.frame_shift(sample_rate);
        let window = (0..frame_len)
            .map(|i| {
                if frame_len == 1 {
                    1.0
                } else {
                    0.5 - 0.5 * (2.0 * PI * i as f64 / (frame_len - 1) as f64).cos()
                }
            })
            .collect();
        let filters = mel_filterbank(&cfg, sample_rate);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self { cfg, sample_rate, frame_len, frame_shift, window, filters, fft })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    fn check_rate(&self, w: &Waveform) -> Result<(), FeatureError> {
        if w.sample_rate != self.sample_rate {
            return Err(FeatureError::Config(format!(
                "extractor built for {} Hz, waveform is {} Hz",
                self.sample_rate, w.sample_rate
            )));
        }
        Ok(())
    }

    fn log_mel_rows(&self, w: &Waveform) -> Result<Vec<Vec<f64>>, FeatureError> {
        self.check_rate(w)?;
        let t = self.cfg.num_frames(w.samples.len(), w.sample_rate).ok_or_else(|| {
            FeatureError::TooShort(format!(
                "{} samples is shorter than one {}-sample frame",
                w.samples.len(),
                self.frame_len
            ))
        })?;
        let n_bins = self.cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let mut frame = vec![0.0; self.frame_len];
        let mut power = vec![0.0; n_bins];
        let mut rows = Vec::with_capacity(t);
        for f in 0..t {
            let start = f * self.frame_shift;
            frame.copy_from_slice(&w.samples[start..start + self.frame_len]);
            for i in (1..self.frame_len).rev() {
                frame[i] -= self.cfg.preemphasis * frame[i - 1];
            }
            frame[0] -= self.cfg.preemphasis * frame[0];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < self.frame_len {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            rows.push(
                self.filters
                    .iter()
                    .map(|filt| {
                        let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
                        e.max(self.cfg.log_floor).ln()
                    })
                    .collect(),
            );
        }
        Ok(rows)
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<FeatureMatrix, FeatureError> {
        let rows = self.log_mel_rows(w)?;
        Ok(FeatureMatrix {
            frames: Tensor::from_rows(&rows)?,
            fingerprint: self.cfg.fingerprint(FeatureKind::LogMel),
        })
    }

    pub fn mfcc(&self, w: &Waveform) -> Result<FeatureMatrix, FeatureError> {
        let rows: Vec<Vec<f64>> = self
            .log_mel_rows(w)?
            .iter()
            .map(|r| dct_ii(r)[..self.cfg.n_mfcc].to_vec())
            .collect();
        Ok(FeatureMatrix {
            frames: Tensor::from_rows(&rows)?,
            fingerprint: self.cfg.fingerprint(FeatureKind::Mfcc),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{log_mel_fbank, mfcc};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dct(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let s: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos())
                    .sum();
                s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
            })
            .collect()
    }

    fn sine(freq: f64, secs: f64) -> Waveform {
        let n = (16000.0 * secs) as usize;
        Waveform::new((0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin()).collect(), 16000).unwrap()
    }

    #[test]
    fn dct_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 7, 13, 80] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let fast = dct_ii(&x);
            let slow = naive_dct(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn dct_of_constant_has_only_dc() {
        let c = dct_ii(&[2.5; 80]);
        assert!(c[0].abs() > 1.0);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn default_dimensions() {
        let w = sine(440.0, 0.5);
        let cfg = FeatureConfig::default();
        let f = log_mel_fbank(&w, &cfg).unwrap();
        assert_eq!(f.dim(), 80);
        assert_eq!(f.num_frames(), (8000 - 400) / 160 + 1);
        let m = mfcc(&w, &cfg).unwrap();
        assert_eq!(m.dim(), 13);
        assert_eq!(m.num_frames(), f.num_frames());
    }

    #[test]
    fn silence_hits_log_floor() {
        let w = Waveform::new(vec![0.0; 4000], 16000).unwrap();
        let cfg = FeatureConfig::default();
        let f = log_mel_fbank(&w, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(f.frames.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_peaks_in_nearest_filter() {
        let cfg = FeatureConfig::default();
        // Centres recomputed from the mel formula directly.
        let lo = 2595.0 * (1.0 + cfg.fmin / 700.0).log10();
        let hi = 2595.0 * (1.0 + cfg.fmax / 700.0).log10();
        let centres: Vec<f64> = (1..=80)
            .map(|i| 700.0 * (10f64.powf((lo + (hi - lo) * i as f64 / 81.0) / 2595.0) - 1.0))
            .collect();
        let nearest = centres
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let f = log_mel_fbank(&sine(1000.0, 0.3), &cfg).unwrap();
        for t in 0..f.num_frames() {
            let row = f.frames.row(t);
            let argmax = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn filterbank_covers_interior_bins() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg, 16000);
        assert!(fb.iter().flatten().all(|&w| w >= 0.0));
        for k in 0..257 {
            let f = k as f64 * 16000.0 / 512.0;
            if f > cfg.fmin && f < cfg.fmax {
                assert!(fb.iter().any(|filt| filt[k] > 0.0), "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn too_short_input() {
        let w = Waveform::new(vec![0.1; 399], 16000).unwrap();
        assert!(matches!(log_mel_fbank(&w, &FeatureConfig::default()), Err(FeatureError::TooShort(_))));
    }

    #[test]
    fn extraction_is_bit_deterministic() {
        let w = sine(733.0, 0.2);
        let cfg = FeatureConfig::default();
        let a = log_mel_fbank(&w, &cfg).unwrap();
        let b = log_mel_fbank(&w, &cfg).unwrap();
        assert!(a.frames.data().iter().zip(b.frames.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
