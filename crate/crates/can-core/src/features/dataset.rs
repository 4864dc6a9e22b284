//! Manifest-driven preprocessing: from audio + alignment files to the
//! aligned token ids and padded MFCC segment stacks the model consumes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::alignment::{
    absorb_special_tokens, apply_overlap, parse_alignment, AlignmentTable, Span,
};
use crate::features::audio::{load_audio, segment_audio};
use crate::features::mfcc::{self, MfccConfig};
use crate::features::segments::{build_segment_tensor, SegmentedAudioFeatures};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// How the audio is cut into L segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segmentation {
    /// Word-aligned spans from the alignment table.
    Aligned,
    /// L equal-length pieces over the same time range; the word count and
    /// every tensor shape stay identical to the aligned mode.
    Equal,
}

impl Segmentation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Segmentation::Aligned => "aligned",
            Segmentation::Equal => "equal",
        }
    }

    pub fn parse(text: &str) -> Result<Segmentation> {
        match text {
            "aligned" => Ok(Segmentation::Aligned),
            "equal" => Ok(Segmentation::Equal),
            other => Err(Error::Config(format!(
                "unknown segmentation mode '{other}' (expected aligned or equal)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub audio: PathBuf,
    pub align: PathBuf,
    pub label: String,
}

/// Reads a manifest: one `id<TAB>audio<TAB>align<TAB>label` record per line,
/// paths relative to the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            audio: base.join(fields[1]),
            align: base.join(fields[2]),
            label: fields[3].to_string(),
        });
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: manifest has no records",
            path.display()
        )));
    }
    Ok(entries)
}

/// Token-to-id mapping. Id 0 is the unknown token; the rest are the corpus
/// words in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Vocabulary {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words, index }
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id_of(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Scans every alignment file in the manifest and returns the vocabulary
/// (unknown token first, then sorted words) and the sorted class labels.
pub fn scan_manifest(entries: &[ManifestEntry]) -> Result<(Vocabulary, Vec<String>)> {
    let mut words: Vec<String> = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for entry in entries {
        let table = parse_alignment(&fs::read_to_string(&entry.align)?)?;
        let absorbed = absorb_special_tokens(&table)?;
        for span in &absorbed.spans {
            words.push(span.word.clone());
        }
        classes.push(entry.label.clone());
    }
    words.sort();
    words.dedup();
    classes.sort();
    classes.dedup();
    let mut vocab_words = vec![UNKNOWN_TOKEN.to_string()];
    vocab_words.extend(words.into_iter().filter(|w| w != UNKNOWN_TOKEN));
    Ok((Vocabulary::from_words(vocab_words), classes))
}

pub fn class_index(classes: &[String], label: &str) -> Result<usize> {
    classes
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| Error::Config(format!("label '{label}' not among known classes")))
}

/// One utterance ready for the model: aligned token ids and the padded MFCC
/// segment stack, with the same L on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedUtterance {
    pub id: String,
    pub words: Vec<String>,
    pub token_ids: Vec<usize>,
    pub label: usize,
    pub segments: SegmentedAudioFeatures,
}

#[derive(Clone, Debug)]
pub struct PrepareConfig {
    pub mfcc: MfccConfig,
    pub overlap_ratio: f64,
    pub segmentation: Segmentation,
}

impl Default for PrepareConfig {
    fn default() -> PrepareConfig {
        PrepareConfig {
            mfcc: MfccConfig::default(),
            overlap_ratio: 0.1,
            segmentation: Segmentation::Aligned,
        }
    }
}

/// Replaces word spans with L equal-length pieces over the same time range,
/// keeping the words attached in order.
fn equalize_spans(table: &AlignmentTable) -> AlignmentTable {
    let count = table.spans.len() as u64;
    let first = table.spans[0].start;
    let last = table.spans[table.spans.len() - 1].end;
    let total = last - first + 1;
    let spans = table
        .spans
        .iter()
        .enumerate()
        .map(|(i, span)| {
            let i = i as u64;
            let start = first + i * total / count;
            let end = first + (i + 1) * total / count - 1;
            Span::new(start, end, &span.word)
        })
        .collect();
    AlignmentTable { spans }
}

pub fn prepare_utterance(
    entry: &ManifestEntry,
    vocab: &Vocabulary,
    classes: &[String],
    cfg: &PrepareConfig,
) -> Result<PreparedUtterance> {
    let table = parse_alignment(&fs::read_to_string(&entry.align)?)?;
    let mut words_table = absorb_special_tokens(&table)?;
    if cfg.segmentation == Segmentation::Equal {
        words_table = equalize_spans(&words_table);
    }
    let overlapped = apply_overlap(&words_table, cfg.overlap_ratio)?;
    let audio = load_audio(&entry.audio)?;
    let slices = segment_audio(&audio, &overlapped)?;
    let frames = slices
        .iter()
        .map(|slice| mfcc::compute(slice, audio.sample_rate, &cfg.mfcc))
        .collect::<Result<Vec<_>>>()?;
    let segments = build_segment_tensor(&frames)?;
    let words: Vec<String> = words_table.spans.iter().map(|s| s.word.clone()).collect();
    let token_ids: Vec<usize> = words.iter().map(|w| vocab.id_of(w)).collect();
    Ok(PreparedUtterance {
        id: entry.id.clone(),
        words,
        token_ids,
        label: class_index(classes, &entry.label)?,
        segments,
    })
}

pub fn prepare_all_sequential(
    entries: &[ManifestEntry],
    vocab: &Vocabulary,
    classes: &[String],
    cfg: &PrepareConfig,
) -> Result<Vec<PreparedUtterance>> {
    entries
        .iter()
        .map(|e| prepare_utterance(e, vocab, classes, cfg))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn prepare_all_parallel(
    entries: &[ManifestEntry],
    vocab: &Vocabulary,
    classes: &[String],
    cfg: &PrepareConfig,
) -> Result<Vec<PreparedUtterance>> {
    entries
        .par_iter()
        .map(|e| prepare_utterance(e, vocab, classes, cfg))
        .collect()
}

/// Preprocesses the whole manifest, on all cores when the `parallel` feature
/// is enabled. Output order always matches the manifest order.
pub fn prepare_all(
    entries: &[ManifestEntry],
    vocab: &Vocabulary,
    classes: &[String],
    cfg: &PrepareConfig,
) -> Result<Vec<PreparedUtterance>> {
    #[cfg(feature = "parallel")]
    {
        prepare_all_parallel(entries, vocab, classes, cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        prepare_all_sequential(entries, vocab, classes, cfg)
    }
}
