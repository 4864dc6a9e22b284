//! Padded per-segment feature stacks and their binary cache format.
//!
//! Cache layout, all integers little-endian: magic `CANF`, u32 version,
//! u64 segment count L, u64 padded frame count T′, u64 coefficient count
//! D_f, then L·T′·D_f f64 features row-major, then L u64 valid-frame
//! counts.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CANF";
const VERSION: u32 = 1;

/// The padded L × T′ × D_f feature stack for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedAudioFeatures {
    pub features: Vec<f64>,
    pub segment_count: usize,
    pub max_frames: usize,
    pub coeff_count: usize,
    pub valid_frames: Vec<usize>,
}

impl SegmentedAudioFeatures {
    /// Row-major [T′ × D_f] view of one segment.
    pub fn segment(&self, i: usize) -> &[f64] {
        let stride = self.max_frames * self.coeff_count;
        &self.features[i * stride..(i + 1) * stride]
    }

    /// Drops the padding rows of one segment.
    pub fn unpadded(&self, i: usize) -> Vec<Vec<f64>> {
        let seg = self.segment(i);
        (0..self.valid_frames[i])
            .map(|f| seg[f * self.coeff_count..(f + 1) * self.coeff_count].to_vec())
            .collect()
    }
}

/// Stacks per-segment frame lists into one zero-padded tensor. T′ is the
/// longest segment's frame count.
pub fn build_segment_tensor(segments: &[Vec<Vec<f64>>]) -> Result<SegmentedAudioFeatures> {
    if segments.is_empty() {
        return Err(Error::InvalidInput("no segments to stack".into()));
    }
    let coeff_count = segments
        .iter()
        .flat_map(|s| s.first())
        .map(|f| f.len())
        .next()
        .ok_or_else(|| Error::InvalidInput("all segments are empty".into()))?;
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(Error::InvalidInput(format!("segment {i} has no frames")));
        }
        if seg.iter().any(|f| f.len() != coeff_count) {
            return Err(Error::Dimension(format!(
                "segment {i} frame width differs from {coeff_count}"
            )));
        }
    }
    let max_frames = segments.iter().map(|s| s.len()).max().unwrap();
    let mut features = vec![0.0; segments.len() * max_frames * coeff_count];
    for (i, seg) in segments.iter().enumerate() {
        for (f, frame) in seg.iter().enumerate() {
            let base = (i * max_frames + f) * coeff_count;
            features[base..base + coeff_count].copy_from_slice(frame);
        }
    }
    Ok(SegmentedAudioFeatures {
        features,
        segment_count: segments.len(),
        max_frames,
        coeff_count,
        valid_frames: segments.iter().map(|s| s.len()).collect(),
    })
}

pub fn write_cache(features: &SegmentedAudioFeatures, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(features.segment_count as u64).to_le_bytes());
    bytes.extend_from_slice(&(features.max_frames as u64).to_le_bytes());
    bytes.extend_from_slice(&(features.coeff_count as u64).to_le_bytes());
    for v in &features.features {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &features.valid_frames {
        bytes.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<SegmentedAudioFeatures> {
    let bytes = fs::read(path)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("{}: cache file truncated", path.display()),
            });
        }
        let slice = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };
    if take(4)? != MAGIC {
        return Err(Error::Parse {
            line: 0,
            message: format!("{}: bad magic", path.display()),
        });
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!("{}: unsupported cache version {version}", path.display()),
        });
    }
    let read_u64 = |cursor: &mut usize| -> Result<u64> {
        if *cursor + 8 > bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("{}: cache file truncated", path.display()),
            });
        }
        let v = u64::from_le_bytes(bytes[*cursor..*cursor + 8].try_into().unwrap());
        *cursor += 8;
        Ok(v)
    };
    let segment_count = read_u64(&mut cursor)? as usize;
    let max_frames = read_u64(&mut cursor)? as usize;
    let coeff_count = read_u64(&mut cursor)? as usize;
    let value_count = segment_count * max_frames * coeff_count;
    let needed = value_count * 8 + segment_count * 8;
    if cursor + needed != bytes.len() {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{}: expected {} payload bytes, found {}",
                path.display(),
                needed,
                bytes.len() - cursor
            ),
        });
    }
    let mut features = Vec::with_capacity(value_count);
    for _ in 0..value_count {
        features.push(f64::from_le_bytes(
            bytes[cursor..cursor + 8].try_into().unwrap(),
        ));
        cursor += 8;
    }
    let mut valid_frames = Vec::with_capacity(segment_count);
    for _ in 0..segment_count {
        valid_frames.push(read_u64(&mut cursor)? as usize);
    }
    if valid_frames.iter().any(|&v| v == 0 || v > max_frames) {
        return Err(Error::Validation(format!(
            "{}: valid-frame counts outside 1..={max_frames}",
            path.display()
        )));
    }
    Ok(SegmentedAudioFeatures {
        features,
        segment_count,
        max_frames,
        coeff_count,
        valid_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_segments(rng: &mut ChaCha8Rng, count: usize, width: usize) -> Vec<Vec<Vec<f64>>> {
        (0..count)
            .map(|_| {
                let frames = rng.gen_range(1..7);
                (0..frames)
                    .map(|_| (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pads_to_longest_segment() {
        let segments = vec![vec![vec![1.0, 2.0]; 3], vec![vec![3.0, 4.0]; 5]];
        let stacked = build_segment_tensor(&segments).unwrap();
        assert_eq!(stacked.segment_count, 2);
        assert_eq!(stacked.max_frames, 5);
        assert_eq!(stacked.coeff_count, 2);
        assert_eq!(stacked.valid_frames, vec![3, 5]);
        let first = stacked.segment(0);
        assert_eq!(&first[0..2], &[1.0, 2.0]);
        assert_eq!(&first[6..10], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_segment_needs_no_padding() {
        let segments = vec![vec![vec![1.0], vec![2.0]]];
        let stacked = build_segment_tensor(&segments).unwrap();
        assert_eq!(stacked.max_frames, 2);
        assert_eq!(stacked.features, vec![1.0, 2.0]);
    }

    #[test]
    fn unpadding_recovers_originals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let segments = random_segments(&mut rng, 4, 5);
        let stacked = build_segment_tensor(&segments).unwrap();
        for (i, seg) in segments.iter().enumerate() {
            assert_eq!(&stacked.unpadded(i), seg);
        }
    }

    #[test]
    fn rejects_empty_inputs() {
        assert!(build_segment_tensor(&[]).is_err());
        assert!(build_segment_tensor(&[vec![]]).is_err());
    }

    #[test]
    fn cache_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stacked = build_segment_tensor(&random_segments(&mut rng, 3, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.canf");
        write_cache(&stacked, &path).unwrap();
        let loaded = read_cache(&path).unwrap();
        assert_eq!(loaded, stacked);
    }

    #[test]
    fn cache_rejects_corruption() {
        let stacked = build_segment_tensor(&[vec![vec![1.0, 2.0]]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.canf");
        write_cache(&stacked, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_cache(&path).is_err());
        write_cache(&stacked, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_cache(&path).is_err());
    }
}
