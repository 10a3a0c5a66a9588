//! Fine-tuning split samplers for data-efficiency studies.
//!
//! Two schemes are provided. The sequence sampler draws whole scene
//! sequences, so a small split sees few distinct scenes; one shuffled
//! order is shared by all percents, and each percent takes a prefix of
//! it, which makes the splits nested by construction. The uniform-frame
//! sampler instead takes every k-th frame inside every sequence, so even
//! a tiny split touches every scene. [`diversity_report`] quantifies the
//! difference via the sequence-coverage ratio.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::SceneManifest;
use crate::sampling::mask_seed;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("invalid split spec: {0}")]
    BadSpec(String),
    #[error("manifest has no sequences")]
    EmptyManifest,
    #[error("split would be empty: round({percent} * {sequences}) = 0")]
    EmptySplit { percent: f64, sequences: usize },
    #[error("unknown sequence id {0:?}")]
    UnknownSequence(String),
    #[error("malformed split text at line {line}: {reason}")]
    BadText { line: usize, reason: String },
}

/// What to sample: which fractions, how many repeats of the smallest
/// fractions, and the shuffle seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    /// Fractions of the sequence pool, strictly ascending, each in (0, 1].
    pub percents: Vec<f64>,
    /// Number of independent subsets drawn for the two smallest percents.
    pub subset_count: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            percents: vec![0.05, 0.10, 0.20, 0.50],
            subset_count: 3,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.percents.is_empty() {
            return Err(SplitError::BadSpec("no percents given".into()));
        }
        for w in self.percents.windows(2) {
            if !(w[0] < w[1]) {
                return Err(SplitError::BadSpec(format!(
                    "percents must be strictly ascending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &p in &self.percents {
            if !(p > 0.0 && p <= 1.0) {
                return Err(SplitError::BadSpec(format!(
                    "percent {p} outside (0, 1]"
                )));
            }
        }
        if self.subset_count == 0 {
            return Err(SplitError::BadSpec("subset_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sampled subset: the sequences for one percent at one repeat index.
/// Ids are stored sorted; membership, not order, is the contract.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBlock {
    pub percent: f64,
    pub subset_index: usize,
    pub sequence_ids: Vec<String>,
}

/// All blocks of a sampling run plus the seed and totals needed to
/// reproduce or audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub seed: u64,
    /// Hex SHA-256 of the canonical manifest text the split was drawn from.
    pub manifest_hash: String,
    pub blocks: Vec<SplitBlock>,
}

impl SplitResult {
    /// The subset-0 block for a percent, if present.
    pub fn main_block(&self, percent: f64) -> Option<&SplitBlock> {
        self.blocks
            .iter()
            .find(|b| b.percent == percent && b.subset_index == 0)
    }
}

/// Hex SHA-256 of the canonical manifest serialization.
pub fn manifest_sha256(manifest: &SceneManifest) -> String {
    let digest = Sha256::digest(crate::io::manifest_to_string(manifest).as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Half-up rounding of `p * s`, the advertised split-size rule.
fn split_size(p: f64, s: usize) -> usize {
    (p * s as f64).round() as usize
}

/// Decorrelates subset shuffles from other consumers of the same seed.
const SUBSET_SALT: u64 = 0x5e95_17b1_ab5e_7001;

/// Draw nested sequence splits: one seeded shuffle of the sequence ids,
/// with percent `p` taking the first `round(p * S)` entries. The two
/// smallest percents additionally get `subset_count - 1` repeats, each
/// from an independent shuffle (repeats need not nest).
pub fn sample_sequence_splits(
    manifest: &SceneManifest,
    spec: &SplitSpec,
) -> Result<SplitResult, SplitError> {
    spec.validate()?;
    let ids: Vec<&str> = manifest.sequence_ids().collect();
    if ids.is_empty() {
        return Err(SplitError::EmptyManifest);
    }
    let s = ids.len();
    for &p in &spec.percents {
        if split_size(p, s) == 0 {
            return Err(SplitError::EmptySplit {
                percent: p,
                sequences: s,
            });
        }
    }

    let shuffled_ids = |seed: u64| -> Vec<String> {
        let mut order: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    };
    let main_order = shuffled_ids(spec.seed);

    let mut blocks = Vec::new();
    for (pi, &p) in spec.percents.iter().enumerate() {
        let take = split_size(p, s);
        let repeats = if pi < 2 { spec.subset_count } else { 1 };
        for si in 0..repeats {
            let order = if si == 0 {
                &main_order
            } else {
                &shuffled_ids(mask_seed(spec.seed ^ SUBSET_SALT, pi, si))
            };
            let mut chosen: Vec<String> = order[..take].to_vec();
            chosen.sort_unstable();
            blocks.push(SplitBlock {
                percent: p,
                subset_index: si,
                sequence_ids: chosen,
            });
        }
    }
    Ok(SplitResult {
        seed: spec.seed,
        manifest_hash: manifest_sha256(manifest),
        blocks,
    })
}

/// A frame-level split: selected frames tagged with their sequence, plus
/// warnings about sequences too short for the requested stride.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSplit {
    pub frames: Vec<(String, PathBuf)>,
    pub warnings: Vec<String>,
}

/// Frame indices selected from a sequence of `len` frames with stride `k`
/// starting at `offset`.
pub(crate) fn uniform_frame_indices(len: usize, k: usize, offset: usize) -> Vec<usize> {
    (offset..len).step_by(k.max(1)).collect()
}

/// Sample every k-th frame of every sequence, k = round(1/p), starting at
/// a seeded offset per sequence. Sequences shorter than the stride still
/// contribute at least one frame and are reported in `warnings`.
pub fn sample_uniform_frame_split(
    manifest: &SceneManifest,
    p: f64,
    seed: u64,
) -> Result<FrameSplit, SplitError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SplitError::BadSpec(format!("percent {p} outside (0, 1]")));
    }
    if manifest.sequences.is_empty() {
        return Err(SplitError::EmptyManifest);
    }
    let k = (1.0 / p).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = FrameSplit {
        frames: Vec::new(),
        warnings: Vec::new(),
    };
    for (id, paths) in &manifest.sequences {
        if paths.is_empty() {
            continue;
        }
        if k > paths.len() {
            split.warnings.push(format!(
                "sequence {:?} has {} frames, fewer than stride {}; keeping one frame",
                id,
                paths.len(),
                k
            ));
        }
        let offset = rng.gen_range(0..k.min(paths.len()));
        for fi in uniform_frame_indices(paths.len(), k, offset) {
            split.frames.push((id.clone(), paths[fi].clone()));
        }
    }
    Ok(split)
}

/// A split as seen by the diversity report: either whole sequences (every
/// frame of each id counts) or an explicit frame list.
#[derive(Debug, Clone, Copy)]
pub enum SplitView<'a> {
    Sequences(&'a [String]),
    Frames(&'a [(String, PathBuf)]),
}

/// Scene-diversity summary of a split against its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityReport {
    pub sequences_touched: usize,
    pub total_frames: usize,
    /// Frame count per touched sequence, in manifest order.
    pub frames_per_sequence: Vec<(String, usize)>,
    /// sequences_touched / total sequences in the manifest.
    pub coverage: f64,
}

/// Count how many distinct scenes a split touches and with how many
/// frames each.
pub fn diversity_report(
    split: SplitView<'_>,
    manifest: &SceneManifest,
) -> Result<DiversityReport, SplitError> {
    let total_sequences = manifest.sequences.len();
    if total_sequences == 0 {
        return Err(SplitError::EmptyManifest);
    }
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut count_of = |id: &str, n: usize| -> Result<(), SplitError> {
        if manifest.frames_of(id).is_none() {
            return Err(SplitError::UnknownSequence(id.to_string()));
        }
        match counts.iter_mut().find(|(cid, _)| cid == id) {
            Some((_, c)) => *c += n,
            None => counts.push((id.to_string(), n)),
        }
        Ok(())
    };
    match split {
        SplitView::Sequences(ids) => {
            let unique: BTreeSet<&String> = ids.iter().collect();
            for id in unique {
                let frames = manifest
                    .frames_of(id)
                    .ok_or_else(|| SplitError::UnknownSequence(id.clone()))?;
                count_of(id, frames.len())?;
            }
        }
        SplitView::Frames(frames) => {
            for (id, _) in frames {
                count_of(id, 1)?;
            }
        }
    }
    // Manifest order for a stable report.
    let order: Vec<&str> = manifest.sequence_ids().collect();
    counts.sort_by_key(|(id, _)| order.iter().position(|o| *o == id.as_str()));
    let sequences_touched = counts.len();
    let total_frames = counts.iter().map(|(_, c)| c).sum();
    Ok(DiversityReport {
        sequences_touched,
        total_frames,
        frames_per_sequence: counts,
        coverage: sequences_touched as f64 / total_sequences as f64,
    })
}

/// Serialize a split result as structured text: one run header with the
/// seed and totals, then per-block headers with indented sequence ids.
pub fn split_result_to_string(result: &SplitResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "split seed={} manifest=sha256:{}",
        result.seed, result.manifest_hash
    );
    for block in &result.blocks {
        let _ = writeln!(
            out,
            "percent={} subset={} count={}",
            block.percent,
            block.subset_index,
            block.sequence_ids.len()
        );
        for id in &block.sequence_ids {
            let _ = writeln!(out, "  {id}");
        }
    }
    out
}

/// Parse the text produced by [`split_result_to_string`].
pub fn parse_split_result(text: &str) -> Result<SplitResult, SplitError> {
    let bad = |line: usize, reason: &str| SplitError::BadText {
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (first_no, first) = lines.next().ok_or_else(|| bad(1, "empty input"))?;
    let rest = first
        .strip_prefix("split seed=")
        .ok_or_else(|| bad(first_no + 1, "expected `split seed=...` header"))?;
    let (seed_str, hash_part) = rest
        .split_once(" manifest=sha256:")
        .ok_or_else(|| bad(first_no + 1, "missing manifest hash"))?;
    let seed = seed_str
        .parse()
        .map_err(|_| bad(first_no + 1, "bad seed"))?;
    let mut result = SplitResult {
        seed,
        manifest_hash: hash_part.trim().to_string(),
        blocks: Vec::new(),
    };
    let mut declared_counts: Vec<usize> = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(stripped) = line.strip_prefix("  ") {
            let block = result
                .blocks
                .last_mut()
                .ok_or_else(|| bad(no + 1, "sequence id before any block header"))?;
            block.sequence_ids.push(stripped.trim().to_string());
        } else {
            let mut percent = None;
            let mut subset = None;
            let mut count = None;
            for field in line.split_whitespace() {
                let (key, val) = field
                    .split_once('=')
                    .ok_or_else(|| bad(no + 1, "expected key=value fields"))?;
                match key {
                    "percent" => percent = Some(val.parse().map_err(|_| bad(no + 1, "bad percent"))?),
                    "subset" => subset = Some(val.parse().map_err(|_| bad(no + 1, "bad subset"))?),
                    "count" => count = Some(val.parse().map_err(|_| bad(no + 1, "bad count"))?),
                    _ => return Err(bad(no + 1, "unknown field in block header")),
                }
            }
            let (Some(percent), Some(subset), Some(count)) = (percent, subset, count) else {
                return Err(bad(no + 1, "block header needs percent, subset, count"));
            };
            declared_counts.push(count);
            result.blocks.push(SplitBlock {
                percent,
                subset_index: subset,
                sequence_ids: Vec::new(),
            });
        }
    }
    for (bi, (block, declared)) in result.blocks.iter().zip(&declared_counts).enumerate() {
        if block.sequence_ids.is_empty() {
            return Err(bad(0, &format!("block {bi} has no sequence ids")));
        }
        if block.sequence_ids.len() != *declared {
            return Err(bad(
                0,
                &format!(
                    "block {bi} declares {declared} sequence ids but lists {}",
                    block.sequence_ids.len()
                ),
            ));
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn synthetic_manifest(sequences: usize, frames_per: usize) -> SceneManifest {
        SceneManifest {
            sequences: (0..sequences)
                .map(|s| {
                    let id = format!("seq_{s:03}");
                    let paths = (0..frames_per)
                        .map(|f| PathBuf::from(format!("{id}/frame_{f:04}.bin")))
                        .collect();
                    (id, paths)
                })
                .collect(),
        }
    }

    fn as_set(block: &SplitBlock) -> HashSet<&String> {
        block.sequence_ids.iter().collect()
    }

    #[test]
    fn default_spec_on_798_sequences_gives_expected_sizes() {
        let manifest = synthetic_manifest(798, 2);
        let result = sample_sequence_splits(&manifest, &SplitSpec::default()).unwrap();
        // Two smallest percents are tripled, larger ones appear once.
        assert_eq!(result.blocks.len(), 3 + 3 + 1 + 1);
        let sizes: Vec<(f64, usize, usize)> = result
            .blocks
            .iter()
            .map(|b| (b.percent, b.subset_index, b.sequence_ids.len()))
            .collect();
        assert_eq!(
            sizes,
            vec![
                (0.05, 0, 40),
                (0.05, 1, 40),
                (0.05, 2, 40),
                (0.10, 0, 80),
                (0.10, 1, 80),
                (0.10, 2, 80),
                (0.20, 0, 160),
                (0.50, 0, 399),
            ]
        );
    }

    #[test]
    fn main_chain_is_nested_for_many_seeds() {
        let manifest = synthetic_manifest(798, 1);
        for seed in 0..40 {
            let spec = SplitSpec {
                seed,
                ..SplitSpec::default()
            };
            let result = sample_sequence_splits(&manifest, &spec).unwrap();
            let chain: Vec<&SplitBlock> = result
                .blocks
                .iter()
                .filter(|b| b.subset_index == 0)
                .collect();
            for pair in chain.windows(2) {
                assert!(
                    as_set(pair[0]).is_subset(&as_set(pair[1])),
                    "seed {seed}: {}% not nested in {}%",
                    pair[0].percent * 100.0,
                    pair[1].percent * 100.0
                );
            }
        }
    }

    #[test]
    fn repeat_subsets_differ_but_share_sizes() {
        let manifest = synthetic_manifest(100, 1);
        let result = sample_sequence_splits(&manifest, &SplitSpec::default()).unwrap();
        let five: Vec<&SplitBlock> = result.blocks.iter().filter(|b| b.percent == 0.05).collect();
        assert_eq!(five.len(), 3);
        assert!(five.iter().all(|b| b.sequence_ids.len() == 5));
        assert!(
            as_set(five[0]) != as_set(five[1]) || as_set(five[1]) != as_set(five[2]),
            "independent repeats should not all coincide"
        );
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let manifest = synthetic_manifest(60, 3);
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        let a = sample_sequence_splits(&manifest, &spec).unwrap();
        let b = sample_sequence_splits(&manifest, &spec).unwrap();
        assert_eq!(a, b);
        let c = sample_sequence_splits(
            &manifest,
            &SplitSpec {
                seed: 10,
                ..spec.clone()
            },
        )
        .unwrap();
        assert_ne!(
            a.blocks[0].sequence_ids, c.blocks[0].sequence_ids,
            "different seeds should shuffle differently"
        );
    }

    #[test]
    fn full_percent_takes_every_sequence_sorted() {
        let manifest = synthetic_manifest(17, 1);
        let spec = SplitSpec {
            percents: vec![1.0],
            subset_count: 1,
            seed: 4,
        };
        let result = sample_sequence_splits(&manifest, &spec).unwrap();
        assert_eq!(result.blocks.len(), 1);
        let expected: Vec<String> = (0..17).map(|s| format!("seq_{s:03}")).collect();
        assert_eq!(result.blocks[0].sequence_ids, expected);
    }

    #[test]
    fn undersized_percent_is_rejected() {
        let manifest = synthetic_manifest(3, 1);
        let spec = SplitSpec {
            percents: vec![0.05, 0.5],
            subset_count: 1,
            seed: 0,
        };
        let err = sample_sequence_splits(&manifest, &spec).unwrap_err();
        assert!(matches!(err, SplitError::EmptySplit { .. }));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let manifest = synthetic_manifest(10, 1);
        for spec in [
            SplitSpec {
                percents: vec![],
                subset_count: 1,
                seed: 0,
            },
            SplitSpec {
                percents: vec![0.2, 0.1],
                subset_count: 1,
                seed: 0,
            },
            SplitSpec {
                percents: vec![0.1, 0.1],
                subset_count: 1,
                seed: 0,
            },
            SplitSpec {
                percents: vec![0.0, 0.5],
                subset_count: 1,
                seed: 0,
            },
            SplitSpec {
                percents: vec![0.5, 1.5],
                subset_count: 1,
                seed: 0,
            },
            SplitSpec {
                percents: vec![0.5],
                subset_count: 0,
                seed: 0,
            },
        ] {
            assert!(
                matches!(sample_sequence_splits(&manifest, &spec), Err(SplitError::BadSpec(_))),
                "spec {spec:?} should be rejected"
            );
        }
    }

    #[test]
    fn stride_indices_match_the_every_kth_rule() {
        assert_eq!(uniform_frame_indices(8, 2, 0), vec![0, 2, 4, 6]);
        assert_eq!(uniform_frame_indices(8, 2, 1), vec![1, 3, 5, 7]);
        assert_eq!(uniform_frame_indices(200, 20, 7).len(), 10);
        assert_eq!(uniform_frame_indices(3, 20, 1), vec![1]);
    }

    #[test]
    fn uniform_split_keeps_half_the_frames_at_p_half() {
        let manifest = synthetic_manifest(5, 8);
        let split = sample_uniform_frame_split(&manifest, 0.5, 3).unwrap();
        assert_eq!(split.frames.len(), 5 * 4);
        assert!(split.warnings.is_empty());
        for (id, _) in &split.frames {
            assert!(manifest.frames_of(id).is_some());
        }
        // Within each sequence the picked frames step by exactly two.
        for s in 0..5 {
            let id = format!("seq_{s:03}");
            let picked: Vec<&PathBuf> = split
                .frames
                .iter()
                .filter(|(fid, _)| *fid == id)
                .map(|(_, p)| p)
                .collect();
            assert_eq!(picked.len(), 4);
            let all = manifest.frames_of(&id).unwrap();
            let indices: Vec<usize> = picked
                .iter()
                .map(|p| all.iter().position(|a| a == *p).unwrap())
                .collect();
            for pair in indices.windows(2) {
                assert_eq!(pair[1] - pair[0], 2);
            }
            assert!(indices[0] < 2);
        }
    }

    #[test]
    fn uniform_split_is_deterministic() {
        let manifest = synthetic_manifest(6, 30);
        let a = sample_uniform_frame_split(&manifest, 0.1, 42).unwrap();
        let b = sample_uniform_frame_split(&manifest, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_uniform_frame_split(&manifest, 0.1, 43).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn short_sequences_still_contribute_one_frame_with_warning() {
        let mut manifest = synthetic_manifest(2, 3);
        manifest.sequences[1].1.truncate(2);
        let split = sample_uniform_frame_split(&manifest, 0.05, 0).unwrap();
        assert_eq!(split.warnings.len(), 2, "both sequences are shorter than k=20");
        assert_eq!(split.frames.len(), 2);
        let ids: HashSet<&String> = split.frames.iter().map(|(id, _)| id).collect();
        assert_eq!(ids.len(), 2);
    }

    #[test]
    fn bad_uniform_percent_is_rejected() {
        let manifest = synthetic_manifest(2, 2);
        assert!(sample_uniform_frame_split(&manifest, 0.0, 0).is_err());
        assert!(sample_uniform_frame_split(&manifest, 1.5, 0).is_err());
    }

    #[test]
    fn sequence_split_coverage_equals_its_percent() {
        let manifest = synthetic_manifest(100, 20);
        let spec = SplitSpec {
            percents: vec![0.05],
            subset_count: 1,
            seed: 8,
        };
        let result = sample_sequence_splits(&manifest, &spec).unwrap();
        let ids = &result.blocks[0].sequence_ids;
        let report = diversity_report(SplitView::Sequences(ids), &manifest).unwrap();
        assert_eq!(report.sequences_touched, 5);
        assert_eq!(report.total_frames, 5 * 20);
        assert!((report.coverage - 0.05).abs() < 1e-12);
        for (_, c) in &report.frames_per_sequence {
            assert_eq!(*c, 20);
        }
    }

    #[test]
    fn uniform_split_touches_every_sequence() {
        let manifest = synthetic_manifest(100, 20);
        let split = sample_uniform_frame_split(&manifest, 0.05, 8).unwrap();
        let report = diversity_report(SplitView::Frames(&split.frames), &manifest).unwrap();
        assert_eq!(report.sequences_touched, 100);
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.total_frames, 100);
    }

    #[test]
    fn matched_budget_coverage_comparison() {
        // Same manifest, same fraction: both schemes keep ~the same number
        // of frames, but scene coverage differs by a factor of 1/p.
        let manifest = synthetic_manifest(100, 20);
        let p = 0.05;
        let seq = sample_sequence_splits(
            &manifest,
            &SplitSpec {
                percents: vec![p],
                subset_count: 1,
                seed: 1,
            },
        )
        .unwrap();
        let seq_report =
            diversity_report(SplitView::Sequences(&seq.blocks[0].sequence_ids), &manifest).unwrap();
        let uni = sample_uniform_frame_split(&manifest, p, 1).unwrap();
        let uni_report = diversity_report(SplitView::Frames(&uni.frames), &manifest).unwrap();
        assert_eq!(seq_report.total_frames, uni_report.total_frames);
        assert!(
            seq_report.coverage < uni_report.coverage,
            "sequence split must touch strictly fewer scenes at the same budget"
        );
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let manifest = synthetic_manifest(3, 2);
        let ids = vec!["seq_999".to_string()];
        assert!(matches!(
            diversity_report(SplitView::Sequences(&ids), &manifest),
            Err(SplitError::UnknownSequence(_))
        ));
        let frames = vec![("nope".to_string(), PathBuf::from("x.bin"))];
        assert!(matches!(
            diversity_report(SplitView::Frames(&frames), &manifest),
            Err(SplitError::UnknownSequence(_))
        ));
    }

    #[test]
    fn split_text_round_trips() {
        let manifest = synthetic_manifest(40, 2);
        let spec = SplitSpec {
            percents: vec![0.1, 0.5],
            subset_count: 2,
            seed: 77,
        };
        let result = sample_sequence_splits(&manifest, &spec).unwrap();
        let text = split_result_to_string(&result);
        assert!(text.starts_with(&format!(
            "split seed=77 manifest=sha256:{}",
            result.manifest_hash
        )));
        let back = parse_split_result(&text).unwrap();
        assert_eq!(back, result);
        assert_eq!(split_result_to_string(&back), text);
    }

    #[test]
    fn malformed_split_text_is_rejected() {
        assert!(parse_split_result("").is_err());
        assert!(parse_split_result("bogus header\n").is_err());
        assert!(
            parse_split_result("split seed=1 manifest=sha256:ab\n  orphan_id\n").is_err(),
            "id lines before any block header are invalid"
        );
        assert!(
            parse_split_result("split seed=1 manifest=sha256:ab\npercent=0.1 subset=0 count=1\n")
                .is_err(),
            "a block without ids is invalid"
        );
        assert!(parse_split_result(
            "split seed=1 manifest=sha256:ab\npercent=0.1 subset=0 count=1 extra=9\n  a\n"
        )
        .is_err());
        assert!(
            parse_split_result(
                "split seed=1 manifest=sha256:ab\npercent=0.1 subset=0 count=3\n  a\n  b\n"
            )
            .is_err(),
            "declared count must match the number of listed ids"
        );
    }

    #[test]
    fn manifest_hash_tracks_content() {
        let a = synthetic_manifest(3, 2);
        let b = synthetic_manifest(3, 3);
        assert_eq!(manifest_sha256(&a).len(), 64);
        assert_eq!(manifest_sha256(&a), manifest_sha256(&a));
        assert_ne!(manifest_sha256(&a), manifest_sha256(&b));
    }
}
