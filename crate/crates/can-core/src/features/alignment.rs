//! Word-level alignment tables: parsing, special-token absorption, and
//! boundary overlap.
//!
//! Tables arrive as plain text, one span per line, `start<TAB>end<TAB>word`,
//! with times in 10 ms units. Raw tables tile their time range exactly;
//! [`apply_overlap`] deliberately widens interior boundaries afterwards, so
//! only parsing enforces the tiling shape.

use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
pub const SILENCE_TOKEN: &str = "<sil>";

pub fn is_special(word: &str) -> bool {
    word == START_TOKEN || word == END_TOKEN || word == SILENCE_TOKEN
}

/// One aligned span: inclusive start/end in 10 ms units plus the token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: u64,
    pub end: u64,
    pub word: String,
}

impl Span {
    pub fn new(start: u64, end: u64, word: &str) -> Span {
        Span {
            start,
            end,
            word: word.to_string(),
        }
    }

    /// Duration in 10 ms units (inclusive bounds).
    pub fn units(&self) -> u64 {
        self.end - self.start + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentTable {
    pub spans: Vec<Span>,
}

impl AlignmentTable {
    pub fn word_count(&self) -> usize {
        self.spans.iter().filter(|s| !is_special(&s.word)).count()
    }

    /// Serializes back to the line format; numeric fields survive a
    /// parse/serialize round trip exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for span in &self.spans {
            out.push_str(&format!("{}\t{}\t{}\n", span.start, span.end, span.word));
        }
        out
    }
}

/// Parses alignment text. A single leading header line is tolerated; every
/// other line must be `start end word` with integer times. Raw spans must
/// tile: each span's start is the previous end plus one.
pub fn parse_alignment(text: &str) -> Result<AlignmentTable> {
    let mut spans: Vec<Span> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let start: u64 = match fields[0].parse() {
            Ok(v) => v,
            Err(_) if line_no == 1 && spans.is_empty() => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("start '{}' is not an integer", fields[0]),
                })
            }
        };
        let end: u64 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("end '{}' is not an integer", fields[1]),
        })?;
        spans.push(Span::new(start, end, fields[2]));
    }
    if spans.is_empty() {
        return Err(Error::InvalidInput("alignment table has no spans".into()));
    }
    for (i, span) in spans.iter().enumerate() {
        if span.end < span.start {
            return Err(Error::Validation(format!(
                "span {} ({}, {}) ends before it starts",
                i, span.start, span.end
            )));
        }
        if i > 0 && span.start != spans[i - 1].end + 1 {
            return Err(Error::Validation(format!(
                "span {} starts at {} but the previous span ends at {}",
                i,
                span.start,
                spans[i - 1].end
            )));
        }
    }
    Ok(AlignmentTable { spans })
}

/// Removes special tokens, handing their time to neighboring words. A run
/// with words on both sides splits at its midpoint (odd unit to the right
/// word); a run at either sentence edge is absorbed whole by its only
/// neighbor. The output tiles the original time range.
pub fn absorb_special_tokens(table: &AlignmentTable) -> Result<AlignmentTable> {
    if table.word_count() == 0 {
        return Err(Error::InvalidInput(
            "alignment table contains only special tokens".into(),
        ));
    }
    let spans = &table.spans;
    let mut words: Vec<Span> = Vec::new();
    let mut leading_start: Option<u64> = None;
    let mut carry_left: u64 = 0;
    let mut i = 0;
    while i < spans.len() {
        if is_special(&spans[i].word) {
            let run_start = spans[i].start;
            let mut run_end = spans[i].end;
            while i + 1 < spans.len() && is_special(&spans[i + 1].word) {
                i += 1;
                run_end = spans[i].end;
            }
            let units = run_end - run_start + 1;
            let has_right = i + 1 < spans.len();
            match words.last_mut() {
                Some(left) if has_right => {
                    left.end += units / 2;
                    carry_left = units - units / 2;
                }
                Some(left) => left.end = run_end,
                None => leading_start = Some(run_start),
            }
        } else {
            let mut span = spans[i].clone();
            if let Some(start) = leading_start.take() {
                span.start = start;
            }
            span.start -= carry_left;
            carry_left = 0;
            words.push(span);
        }
        i += 1;
    }
    Ok(AlignmentTable { spans: words })
}

/// Widens each interior boundary so consecutive spans share an overlapping
/// region of `round(ratio × shorter span length)` units, split evenly across
/// the boundary. Span order survives and the utterance range is never
/// exceeded.
pub fn apply_overlap(table: &AlignmentTable, ratio: f64) -> Result<AlignmentTable> {
    if !(0.0..0.5).contains(&ratio) {
        return Err(Error::InvalidInput(format!(
            "overlap ratio {ratio} outside [0, 0.5)"
        )));
    }
    let mut spans = table.spans.clone();
    if spans.is_empty() {
        return Ok(AlignmentTable { spans });
    }
    let first_start = spans[0].start;
    let last_end = spans[spans.len() - 1].end;
    for i in 0..spans.len() - 1 {
        let shorter = spans[i].units().min(spans[i + 1].units());
        let overlap = (ratio * shorter as f64).round() as u64;
        let pull_left = overlap / 2;
        let push_right = overlap - pull_left;
        spans[i].end = (spans[i].end + push_right).min(last_end);
        spans[i + 1].start = spans[i + 1]
            .start
            .saturating_sub(pull_left)
            .max(first_start);
    }
    Ok(AlignmentTable { spans })
}
