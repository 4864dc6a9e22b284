//! Audio loading, saving, and span-based segmentation.
//!
//! Two on-disk forms are supported and picked by extension: `.wav` (16-bit
//! PCM mono) and raw little-endian f64 samples with a `<path>.rate` sidecar
//! holding the sample rate in Hz as ASCII.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::alignment::AlignmentTable;

#[derive(Clone, Debug)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<AudioSignal> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio signal is empty".into()));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
        })
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }
}

pub fn load_audio(path: &Path) -> Result<AudioSignal> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => load_wav(path),
        _ => load_raw(path),
    }
}

pub fn save_audio(signal: &AudioSignal, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => save_wav(signal, path),
        _ => save_raw(signal, path),
    }
}

fn load_wav(path: &Path) -> Result<AudioSignal> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::InvalidInput(format!(
            "{}: expected 16-bit integer PCM",
            path.display()
        )));
    }
    let samples: Vec<f64> = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    AudioSignal::new(samples, spec.sample_rate)
}

fn save_wav(signal: &AudioSignal, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    for &sample in &signal.samples {
        let clamped = (sample.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(clamped)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn rate_sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".rate");
    std::path::PathBuf::from(name)
}

fn load_raw(path: &Path) -> Result<AudioSignal> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidInput(format!(
            "{}: raw f64 file length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    let samples: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sidecar = rate_sidecar(path);
    let rate_text = fs::read_to_string(&sidecar)?;
    let sample_rate: u32 = rate_text.trim().parse().map_err(|_| {
        Error::InvalidInput(format!(
            "{}: sidecar does not contain an integer rate",
            sidecar.display()
        ))
    })?;
    AudioSignal::new(samples, sample_rate)
}

fn save_raw(signal: &AudioSignal, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.samples.len() * 8);
    for &sample in &signal.samples {
        bytes.extend_from_slice(&sample.to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(rate_sidecar(path), format!("{}\n", signal.sample_rate))?;
    Ok(())
}

/// Cuts the signal into one sample slice per span. A span (s, e) in 10 ms
/// units covers samples [s·rate/100, (e+1)·rate/100).
pub fn segment_audio(signal: &AudioSignal, table: &AlignmentTable) -> Result<Vec<Vec<f64>>> {
    let rate = signal.sample_rate as u64;
    let mut slices = Vec::with_capacity(table.spans.len());
    for span in &table.spans {
        let begin = (span.start * rate / 100) as usize;
        let end = ((span.end + 1) * rate / 100) as usize;
        if end > signal.samples.len() {
            return Err(Error::Validation(format!(
                "span ({}, {}) needs samples up to {end} but the signal has {}",
                span.start,
                span.end,
                signal.samples.len()
            )));
        }
        slices.push(signal.samples[begin..end].to_vec());
    }
    Ok(slices)
}
