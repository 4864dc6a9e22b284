//! Synthetic dataset generation.
//!
//! Each utterance carries its class twice over: the text contains a
//! class-unique cue word, and the audio plays a class-specific tone during
//! word spans. Either modality alone suffices to classify, which is what the
//! training sanity checks rely on.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::alignment::{AlignmentTable, Span, END_TOKEN, SILENCE_TOKEN, START_TOKEN};
use crate::features::audio::{save_audio, AudioSignal};

const CLASS_NAMES: [&str; 8] = [
    "neutral",
    "happy",
    "sad",
    "angry",
    "excited",
    "frustrated",
    "surprised",
    "calm",
];

const FILLER_WORDS: [&str; 8] = ["the", "a", "is", "it", "so", "well", "oh", "really"];

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub class_count: usize,
    pub per_class: usize,
    pub sample_rate: u32,
    pub words_min: usize,
    pub words_max: usize,
    pub word_units_min: u64,
    pub word_units_max: u64,
    pub silence_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            class_count: 4,
            per_class: 50,
            sample_rate: 16000,
            words_min: 3,
            words_max: 6,
            word_units_min: 12,
            word_units_max: 40,
            silence_probability: 0.3,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.per_class == 0 {
            return Err(Error::Config(
                "class count and per-class count must be positive".into(),
            ));
        }
        if self.words_min == 0 || self.words_max < self.words_min {
            return Err(Error::Config(format!(
                "word count range {}..={} is empty",
                self.words_min, self.words_max
            )));
        }
        if self.word_units_min < 3 || self.word_units_max < self.word_units_min {
            return Err(Error::Config(format!(
                "word duration range {}..={} units is invalid (minimum 3)",
                self.word_units_min, self.word_units_max
            )));
        }
        if self.sample_rate < 4000 {
            return Err(Error::Config("sample rate below 4 kHz".into()));
        }
        Ok(())
    }
}

pub fn class_name(index: usize) -> String {
    CLASS_NAMES
        .get(index)
        .map(|n| n.to_string())
        .unwrap_or_else(|| format!("class{index}"))
}

pub fn cue_word(class: usize) -> String {
    format!("{}cue", class_name(class))
}

fn class_tone_hz(class: usize) -> f64 {
    260.0 + 140.0 * class as f64
}

struct Utterance {
    table: AlignmentTable,
    words: Vec<(u64, u64)>,
    class: usize,
}

fn generate_utterance(cfg: &SynthConfig, class: usize, rng: &mut ChaCha8Rng) -> Utterance {
    let word_count = rng.gen_range(cfg.words_min..=cfg.words_max);
    let cue_position = rng.gen_range(0..word_count);
    let mut spans = Vec::new();
    let mut cursor: u64 = 0;
    let push = |spans: &mut Vec<Span>, cursor: &mut u64, units: u64, word: &str| {
        spans.push(Span::new(*cursor, *cursor + units - 1, word));
        *cursor += units;
    };
    push(&mut spans, &mut cursor, rng.gen_range(5..=20), START_TOKEN);
    let mut words = Vec::new();
    for i in 0..word_count {
        let word = if i == cue_position {
            cue_word(class)
        } else {
            FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())].to_string()
        };
        let units = rng.gen_range(cfg.word_units_min..=cfg.word_units_max);
        words.push((cursor, cursor + units - 1));
        push(&mut spans, &mut cursor, units, &word);
        if i + 1 < word_count && rng.gen_bool(cfg.silence_probability) {
            push(
                &mut spans,
                &mut cursor,
                rng.gen_range(5..=15),
                SILENCE_TOKEN,
            );
        }
    }
    push(&mut spans, &mut cursor, rng.gen_range(5..=20), END_TOKEN);
    Utterance {
        table: AlignmentTable { spans },
        words,
        class,
    }
}

fn render_audio(utt: &Utterance, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> AudioSignal {
    let rate = cfg.sample_rate;
    let total_units = utt.table.spans.last().unwrap().end + 1;
    let total_samples = (total_units * rate as u64 / 100) as usize;
    let mut samples: Vec<f64> = (0..total_samples)
        .map(|_| rng.gen_range(-0.01..0.01))
        .collect();
    let tone = class_tone_hz(utt.class).min(rate as f64 / 2.0 - 100.0);
    for &(start, end) in &utt.words {
        let begin = (start * rate as u64 / 100) as usize;
        let stop = ((end + 1) * rate as u64 / 100) as usize;
        for (i, sample) in samples[begin..stop].iter_mut().enumerate() {
            *sample += 0.4 * (2.0 * PI * tone * i as f64 / rate as f64).sin();
        }
    }
    AudioSignal {
        samples,
        sample_rate: rate,
    }
}

/// Writes WAV, alignment, and manifest files under `out_dir` and returns the
/// manifest path. Identical seeds give byte-identical outputs.
pub fn synthesize_dataset(out_dir: &Path, cfg: &SynthConfig, seed: u64) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = String::new();
    let total = cfg.class_count * cfg.per_class;
    for index in 0..total {
        let class = index % cfg.class_count;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let utt = generate_utterance(cfg, class, &mut rng);
        let audio = render_audio(&utt, cfg, &mut rng);
        let id = format!("utt{index:04}");
        let wav_name = format!("{id}.wav");
        let align_name = format!("{id}.align");
        save_audio(&audio, &out_dir.join(&wav_name))?;
        fs::write(out_dir.join(&align_name), utt.table.to_text())?;
        manifest.push_str(&format!(
            "{id}\t{wav_name}\t{align_name}\t{}\n",
            class_name(class)
        ));
    }
    let manifest_path = out_dir.join("manifest.tsv");
    fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}
