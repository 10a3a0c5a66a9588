//! The three training losses as plain scalar functions.
//!
//! These are the reference implementations; the tape ops in
//! [`crate::nn::tape`] compute the same quantities differentiably and are
//! tested against these values.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("point set is empty")]
    EmptySet,
    #[error("got {preds} reconstructions but {targets} target sets")]
    CountMismatch { preds: usize, targets: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// A scalar loss that may be vacuously zero because its masked set was
/// empty; the flag keeps the joint loss composable without special cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    /// False when there was nothing to average over.
    pub active: bool,
}

impl MaskedLoss {
    pub fn inactive() -> Self {
        MaskedLoss {
            value: 0.0,
            active: false,
        }
    }
}

/// Mean softmax cross-entropy of the true window-relative class over all
/// jigsaw-masked voxels; zero-with-flag when there are none.
pub fn mvj_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<MaskedLoss, LossError> {
    if logits.len() != labels.len() {
        return Err(LossError::CountMismatch {
            preds: logits.len(),
            targets: labels.len(),
        });
    }
    if logits.is_empty() {
        return Ok(MaskedLoss::inactive());
    }
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(LossError::LabelOutOfRange {
                label,
                classes: row.len(),
            });
        }
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(MaskedLoss {
        value: total / logits.len() as f64,
        active: true,
    })
}

/// Symmetric squared-distance set loss: mean over predicted points of the
/// squared distance to their nearest target, plus the same in the other
/// direction. The two means are taken over their own set sizes.
pub fn chamfer_l2(pred: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64, LossError> {
    if pred.is_empty() || target.is_empty() {
        return Err(LossError::EmptySet);
    }
    let sq = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dz = a[2] - b[2];
        dx * dx + dy * dy + dz * dz
    };
    let fwd: f64 = pred
        .iter()
        .map(|p| target.iter().map(|t| sq(p, t)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / pred.len() as f64;
    let bwd: f64 = target
        .iter()
        .map(|t| pred.iter().map(|p| sq(p, t)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / target.len() as f64;
    Ok(fwd + bwd)
}

/// Mean per-voxel set loss over all shape-masked voxels; zero-with-flag
/// when there are none.
pub fn mvr_loss(
    recons: &[Vec<[f64; 3]>],
    targets: &[Vec<[f64; 3]>],
) -> Result<MaskedLoss, LossError> {
    if recons.len() != targets.len() {
        return Err(LossError::CountMismatch {
            preds: recons.len(),
            targets: targets.len(),
        });
    }
    if recons.is_empty() {
        return Ok(MaskedLoss::inactive());
    }
    let mut total = 0.0;
    for (r, t) in recons.iter().zip(targets) {
        total += chamfer_l2(r, t)?;
    }
    Ok(MaskedLoss {
        value: total / recons.len() as f64,
        active: true,
    })
}

/// Weighted sum of the two task losses: `α·mvj + β·mvr`.
pub fn joint_loss(mvj: f64, mvr: f64, alpha: f64, beta: f64) -> f64 {
    alpha * mvj + beta * mvr
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = vec![vec![0.7; 144]; 5];
        let labels = vec![0, 13, 71, 100, 143];
        let l = mvj_loss(&logits, &labels).unwrap();
        assert!(l.active);
        assert!((l.value - (144f64).ln()).abs() < 1e-12);
        assert!((l.value - 4.9698).abs() < 1e-3);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let margins = [5.0, 10.0, 20.0];
        let mut last = f64::INFINITY;
        for m in margins {
            let mut row = vec![0.0; 4];
            row[2] = m;
            let l = mvj_loss(&[row].to_vec(), &[2]).unwrap().value;
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-8, "margin-20 loss {last}");
    }

    #[test]
    fn three_row_case_matches_hand_computation() {
        let logits = vec![
            vec![1.0, 2.0, 3.0],
            vec![0.0, 0.0, 0.0],
            vec![-1.0, 4.0, 0.5],
        ];
        let labels = vec![2, 1, 0];
        // Hand-computed per row: lse − logit[label].
        let lse = |r: &[f64]| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        let want = ((lse(&logits[0]) - 3.0) + (lse(&logits[1]) - 0.0) + (lse(&logits[2]) + 1.0))
            / 3.0;
        let got = mvj_loss(&logits, &labels).unwrap().value;
        assert!((got - want).abs() < 1e-12);
        // Independent spot value for row 1: ln 3.
        assert!((lse(&logits[1]) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_jigsaw_set_is_inactive_zero() {
        let l = mvj_loss(&[], &[]).unwrap();
        assert_eq!(l, MaskedLoss::inactive());
    }

    #[test]
    fn chamfer_identical_sets_is_zero() {
        let s = vec![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0], [3.0, -2.0, 0.0]];
        assert_eq!(chamfer_l2(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_analytic_singletons() {
        let a = vec![[0.0, 0.0, 0.0]];
        let b = vec![[1.0, 0.0, 0.0]];
        assert!((chamfer_l2(&a, &b).unwrap() - 2.0).abs() < 1e-15);

        let two = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let one = vec![[0.0, 0.0, 0.0]];
        assert!((chamfer_l2(&two, &one).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chamfer_is_duplicate_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut randset = |n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect()
        };
        let pred = randset(6);
        let target = randset(4);
        let doubled: Vec<[f64; 3]> = target.iter().chain(target.iter()).copied().collect();
        let base = chamfer_l2(&pred, &target).unwrap();
        let dup = chamfer_l2(&pred, &doubled).unwrap();
        assert!((base - dup).abs() < 1e-12);
    }

    #[test]
    fn chamfer_symmetric_for_equal_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut randset = |n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect()
        };
        let a = randset(5);
        let b = randset(5);
        assert_eq!(chamfer_l2(&a, &b).unwrap(), chamfer_l2(&b, &a).unwrap());
    }

    #[test]
    fn chamfer_rejects_empty() {
        let s = vec![[0.0, 0.0, 0.0]];
        assert!(matches!(chamfer_l2(&[], &s), Err(LossError::EmptySet)));
        assert!(matches!(chamfer_l2(&s, &[]), Err(LossError::EmptySet)));
    }

    #[test]
    fn mvr_is_mean_of_per_voxel_values() {
        let r1 = vec![[0.0, 0.0, 0.0]];
        let t1 = vec![[1.0, 0.0, 0.0]]; // chamfer 2
        let r2 = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let t2 = vec![[0.0, 0.0, 0.0]]; // chamfer 0.5
        let l = mvr_loss(&[r1.clone(), r2.clone()], &[t1, t2]).unwrap();
        assert!((l.value - 1.25).abs() < 1e-15);

        let zero = mvr_loss(&[r1.clone()], &[r1]).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.active);
        assert_eq!(mvr_loss(&[], &[]).unwrap(), MaskedLoss::inactive());
        assert!(mvr_loss(&[r2], &[]).is_err());
    }

    #[test]
    fn mvr_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut randset = |n: usize| -> Vec<[f64; 3]> {
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect()
        };
        let recons: Vec<Vec<[f64; 3]>> = (0..5).map(|_| randset(7)).collect();
        let targets: Vec<Vec<[f64; 3]>> = (0..5).map(|_| randset(3)).collect();

        // Exhaustive oracle written independently of chamfer_l2.
        let oracle: f64 = recons
            .iter()
            .zip(&targets)
            .map(|(r, t)| {
                let d2 = |a: &[f64; 3], b: &[f64; 3]| {
                    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
                };
                let mut fwd = 0.0;
                for p in r {
                    let mut best = f64::INFINITY;
                    for q in t {
                        let d = d2(p, q);
                        if d < best {
                            best = d;
                        }
                    }
                    fwd += best;
                }
                let mut bwd = 0.0;
                for q in t {
                    let mut best = f64::INFINITY;
                    for p in r {
                        let d = d2(p, q);
                        if d < best {
                            best = d;
                        }
                    }
                    bwd += best;
                }
                fwd / r.len() as f64 + bwd / t.len() as f64
            })
            .sum::<f64>()
            / 5.0;
        let got = mvr_loss(&recons, &targets).unwrap().value;
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_composes_linearly() {
        assert_eq!(joint_loss(2.0, 0.5, 1.0, 1.0), 2.5);
        assert_eq!(joint_loss(2.0, 0.5, 1.0, 0.0), 2.0);
        assert_eq!(joint_loss(2.0, 0.5, 0.0, 1.0), 0.5);
        assert_eq!(joint_loss(3.0, 4.0, 0.1, 0.05), 0.5);
    }
}
