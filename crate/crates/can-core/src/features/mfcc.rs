//! MFCC extraction: pre-emphasis, windowed framing, magnitude FFT, mel
//! filterbank, log, and an orthonormal DCT-II.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Rectangular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub coefficient_count: usize,
    pub frame_ms: u32,
    pub hop_ms: u32,
    pub window: WindowKind,
    pub mel_filter_count: usize,
    pub fft_size: usize,
    pub pre_emphasis: f64,
}

impl Default for MfccConfig {
    fn default() -> MfccConfig {
        MfccConfig {
            coefficient_count: 40,
            frame_ms: 25,
            hop_ms: 10,
            window: WindowKind::Hamming,
            mel_filter_count: 40,
            fft_size: 512,
            pre_emphasis: 0.97,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop_ms == 0 || self.frame_ms <= self.hop_ms {
            return Err(Error::Config(format!(
                "frame ({} ms) must exceed hop ({} ms) and hop must be positive",
                self.frame_ms, self.hop_ms
            )));
        }
        if self.coefficient_count == 0 || self.coefficient_count > self.mel_filter_count {
            return Err(Error::Config(format!(
                "coefficient count {} outside 1..={} mel filters",
                self.coefficient_count, self.mel_filter_count
            )));
        }
        if self.fft_size < 2 {
            return Err(Error::Config("FFT size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::Config(format!(
                "pre-emphasis {} outside [0, 1)",
                self.pre_emphasis
            )));
        }
        Ok(())
    }

    pub fn frame_samples(&self, rate: u32) -> usize {
        (rate as u64 * self.frame_ms as u64 / 1000) as usize
    }

    pub fn hop_samples(&self, rate: u32) -> usize {
        (rate as u64 * self.hop_ms as u64 / 1000) as usize
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0_f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT bins 0..=fft_size/2, spanning 0 Hz to
/// Nyquist on the mel scale.
fn mel_filterbank(cfg: &MfccConfig, rate: u32) -> Vec<Vec<f64>> {
    let bins = cfg.fft_size / 2 + 1;
    let top_mel = hz_to_mel(rate as f64 / 2.0);
    let points: Vec<usize> = (0..cfg.mel_filter_count + 2)
        .map(|p| {
            let mel = top_mel * p as f64 / (cfg.mel_filter_count + 1) as f64;
            let hz = mel_to_hz(mel);
            ((cfg.fft_size + 1) as f64 * hz / rate as f64).floor() as usize
        })
        .collect();
    (0..cfg.mel_filter_count)
        .map(|m| {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            let mut filter = vec![0.0; bins];
            for (k, w) in filter.iter_mut().enumerate() {
                if k > lo && k < mid {
                    *w = (k - lo) as f64 / (mid - lo) as f64;
                } else if k == mid {
                    *w = 1.0;
                } else if k > mid && k < hi {
                    *w = (hi - k) as f64 / (hi - mid) as f64;
                }
            }
            filter
        })
        .collect()
}

fn window_weights(kind: WindowKind, n: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rectangular => vec![1.0; n],
        WindowKind::Hamming => (0..n)
            .map(|i| {
                if n == 1 {
                    1.0
                } else {
                    let phase = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
                    0.54 - 0.46 * phase.cos()
                }
            })
            .collect(),
    }
}

/// Orthonormal DCT-II of `input`, truncated to `keep` coefficients.
fn dct_ii(input: &[f64], keep: usize) -> Vec<f64> {
    let m = input.len();
    (0..keep)
        .map(|i| {
            let scale = if i == 0 {
                (1.0 / m as f64).sqrt()
            } else {
                (2.0 / m as f64).sqrt()
            };
            let sum: f64 = input
                .iter()
                .enumerate()
                .map(|(j, x)| {
                    x * (std::f64::consts::PI * i as f64 * (2 * j + 1) as f64 / (2 * m) as f64)
                        .cos()
                })
                .sum();
            scale * sum
        })
        .collect()
}

/// Extracts MFCC frames from one sample slice. Frame count is
/// `max(1, floor((len − frame)/hop) + 1)`; slices shorter than one frame are
/// zero-padded up to a single frame.
pub fn compute(slice: &[f64], rate: u32, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if slice.is_empty() {
        return Err(Error::InvalidInput(
            "cannot extract MFCC of an empty slice".into(),
        ));
    }
    let frame = cfg.frame_samples(rate);
    let hop = cfg.hop_samples(rate);
    if frame == 0 || hop == 0 {
        return Err(Error::Config(format!(
            "sample rate {rate} gives an empty frame or hop"
        )));
    }
    if frame > cfg.fft_size {
        return Err(Error::Config(format!(
            "frame of {frame} samples exceeds FFT size {}",
            cfg.fft_size
        )));
    }

    let mut emphasized = Vec::with_capacity(slice.len().max(frame));
    emphasized.push(slice[0]);
    for t in 1..slice.len() {
        emphasized.push(slice[t] - cfg.pre_emphasis * slice[t - 1]);
    }
    if emphasized.len() < frame {
        emphasized.resize(frame, 0.0);
    }

    let frame_count = (emphasized.len() - frame) / hop + 1;
    let window = window_weights(cfg.window, frame);
    let filters = mel_filterbank(cfg, rate);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let bins = cfg.fft_size / 2 + 1;

    let mut frames = Vec::with_capacity(frame_count);
    for f in 0..frame_count {
        let start = f * hop;
        let mut buffer: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for i in 0..frame {
            buffer[i] = Complex::new(emphasized[start + i] * window[i], 0.0);
        }
        fft.process(&mut buffer);
        let magnitude: Vec<f64> = buffer[..bins].iter().map(|c| c.norm()).collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|filter| {
                let energy: f64 = filter.iter().zip(&magnitude).map(|(w, m)| w * m).sum();
                energy.max(LOG_FLOOR).ln()
            })
            .collect();
        frames.push(dct_ii(&log_mel, cfg.coefficient_count));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, ms: u64, rate: u32) -> Vec<f64> {
        let n = (rate as u64 * ms / 1000) as usize;
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() * 0.5)
            .collect()
    }

    #[test]
    fn frame_count_for_one_second() {
        let frames = compute(&tone(440.0, 1000, 16000), 16000, &MfccConfig::default()).unwrap();
        assert_eq!(frames.len(), 98);
        assert_eq!(frames[0].len(), 40);
    }

    #[test]
    fn short_slice_yields_single_frame() {
        let frames = compute(&tone(440.0, 30, 16000), 16000, &MfccConfig::default()).unwrap();
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn sub_frame_slice_is_padded_to_one_frame() {
        let frames = compute(&tone(440.0, 10, 16000), 16000, &MfccConfig::default()).unwrap();
        assert_eq!(frames.len(), 1);
    }

    #[test]
    fn frame_count_formula_holds_across_lengths() {
        let cfg = MfccConfig::default();
        for ms in [25u64, 26, 35, 99, 100, 250, 333] {
            let slice = tone(300.0, ms, 16000);
            let frames = compute(&slice, 16000, &cfg).unwrap();
            let expected = ((ms.saturating_sub(25)) / 10 + 1) as usize;
            assert_eq!(frames.len(), expected.max(1), "length {ms} ms");
        }
    }

    #[test]
    fn silence_gives_identical_frames() {
        let frames = compute(&vec![0.0; 16000], 16000, &MfccConfig::default()).unwrap();
        for frame in &frames[1..] {
            assert_eq!(frame, &frames[0]);
        }
    }

    #[test]
    fn rejects_empty_slice() {
        assert!(matches!(
            compute(&[], 16000, &MfccConfig::default()).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn rejects_invalid_configs() {
        let cfg = MfccConfig {
            hop_ms: 25,
            ..MfccConfig::default()
        };
        assert!(matches!(
            compute(&[0.0; 512], 16000, &cfg).unwrap_err(),
            Error::Config(_)
        ));
        let cfg = MfccConfig {
            coefficient_count: 41,
            ..MfccConfig::default()
        };
        assert!(compute(&[0.0; 512], 16000, &cfg).is_err());
        let cfg = MfccConfig::default();
        assert!(compute(&[0.0; 2000], 48000, &cfg).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let c = dct_ii(&x, 4);
        let energy_in: f64 = x.iter().map(|v| v * v).sum();
        let energy_out: f64 = c.iter().map(|v| v * v).sum();
        assert!((energy_in - energy_out).abs() < 1e-9);
    }

    #[test]
    fn extraction_is_deterministic() {
        let slice = tone(523.25, 200, 16000);
        let a = compute(&slice, 16000, &MfccConfig::default()).unwrap();
        let b = compute(&slice, 16000, &MfccConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
