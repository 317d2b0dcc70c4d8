//! Per-class and macro-averaged F1 over the three stance labels.
//!
//! Precision, recall and F1 treat every 0/0 quotient as 0. The macro average
//! is always taken over all three classes, whether or not a class occurs in
//! the gold labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StanceLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{preds} predictions but {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_f1: BTreeMap<StanceLabel, f64>,
    pub macro_f1: f64,
    /// Rows are gold labels, columns predictions, both in [`StanceLabel::ALL`] order.
    pub confusion: [[usize; 3]; 3],
    pub n: usize,
    pub invalid_count: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions (label, was_invalid) against gold labels, position by position.
pub fn evaluate(preds: &[(StanceLabel, bool)], golds: &[StanceLabel]) -> Result<EvalReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = [[0usize; 3]; 3];
    for ((pred, _), gold) in preds.iter().zip(golds) {
        confusion[gold.index()][pred.index()] += 1;
    }
    let per_class_f1: BTreeMap<_, _> = StanceLabel::ALL
        .iter()
        .map(|&label| {
            let c = label.index();
            let tp = confusion[c][c];
            let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (label, f1)
        })
        .collect();
    let macro_f1 = per_class_f1.values().sum::<f64>() / 3.0;
    Ok(EvalReport {
        per_class_f1,
        macro_f1,
        confusion,
        n: preds.len(),
        invalid_count: preds.iter().filter(|(_, invalid)| *invalid).count(),
    })
}

impl EvalReport {
    pub fn f1(&self, label: StanceLabel) -> f64 {
        self.per_class_f1.get(&label).copied().unwrap_or(0.0)
    }

    /// Plain-text table for terminal output.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8}", "class", "F1");
        for label in StanceLabel::ALL {
            let _ = writeln!(out, "{:<10} {:>8.4}", label.verbalizer(), self.f1(label));
        }
        let _ = writeln!(out, "{:<10} {:>8.4}", "macro", self.macro_f1);
        let _ = writeln!(out);
        let _ = writeln!(out, "confusion (rows gold, cols predicted)");
        let _ = write!(out, "{:<10}", "");
        for label in StanceLabel::ALL {
            let _ = write!(out, " {:>9}", label.verbalizer());
        }
        let _ = writeln!(out);
        for gold in StanceLabel::ALL {
            let _ = write!(out, "{:<10}", gold.verbalizer());
            for count in self.confusion[gold.index()] {
                let _ = write!(out, " {count:>9}");
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out, "n = {}, invalid generations = {}", self.n, self.invalid_count);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use StanceLabel::*;

    fn valid(labels: &[StanceLabel]) -> Vec<(StanceLabel, bool)> {
        labels.iter().map(|&l| (l, false)).collect()
    }

    #[test]
    fn perfect_predictions() {
        let golds = [Positive, Neutral, Neutral, Negative];
        let r = evaluate(&valid(&golds), &golds).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(r.confusion[g][p], 0);
                }
            }
        }
    }

    #[test]
    fn perfect_on_single_class_still_averages_three() {
        let golds = [Positive, Positive];
        let r = evaluate(&valid(&golds), &golds).unwrap();
        // absent classes contribute 0 under the 0/0 convention
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_wrong() {
        let golds = [Positive, Negative, Neutral];
        let preds = [Negative, Neutral, Positive];
        let r = evaluate(&valid(&preds), &golds).unwrap();
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn hand_derived_example() {
        // Pos: tp1 fp0 fn1 -> P=1 R=1/2 F=2/3; Neg: tp1 fp1 fn0 -> 2/3; Neu: 1
        let golds = [Positive, Positive, Negative, Neutral];
        let preds = [Positive, Negative, Negative, Neutral];
        let r = evaluate(&valid(&preds), &golds).unwrap();
        assert!((r.f1(Positive) - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1(Negative) - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1(Neutral) - 1.0).abs() < 1e-12);
        assert!((r.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            evaluate(&valid(&[Positive]), &[]).unwrap_err(),
            EvalError::LengthMismatch { preds: 1, golds: 0 }
        );
        assert_eq!(evaluate(&[], &[]).unwrap_err(), EvalError::Empty);
    }

    #[test]
    fn invalid_count_and_table() {
        let r = evaluate(&[(Neutral, true), (Positive, false)], &[Neutral, Negative]).unwrap();
        assert_eq!(r.invalid_count, 1);
        let table = r.render_table();
        assert!(table.contains("macro"));
        assert!(table.contains("invalid generations = 1"));
    }

    #[test]
    fn report_serializes_with_label_keys() {
        let r = evaluate(&valid(&[Positive]), &[Positive]).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["per_class_f1"]["positive"], 1.0);
        let back: EvalReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    fn label() -> impl Strategy<Value = StanceLabel> {
        (0usize..3).prop_map(|i| StanceLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn permutation_invariance(
            pairs in prop::collection::vec((label(), label()), 1..40),
            seed in any::<u64>(),
        ) {
            let (golds, preds): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let base = evaluate(&valid(&preds), &golds).unwrap();
            let mut shuffled = pairs.clone();
            // deterministic Fisher-Yates driven by an LCG
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let (g2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(evaluate(&valid(&p2), &g2).unwrap(), base);
        }

        #[test]
        fn label_symmetry(
            pairs in prop::collection::vec((label(), label()), 1..40),
            perm_idx in 0usize..6,
        ) {
            const PERMS: [[usize; 3]; 6] = [[0,1,2],[0,2,1],[1,0,2],[1,2,0],[2,0,1],[2,1,0]];
            let perm = PERMS[perm_idx];
            let map = |l: StanceLabel| StanceLabel::from_index(perm[l.index()]).unwrap();
            let (golds, preds): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let base = evaluate(&valid(&preds), &golds).unwrap();
            let g2: Vec<_> = golds.iter().map(|&l| map(l)).collect();
            let p2: Vec<_> = preds.iter().map(|&l| map(l)).collect();
            let permuted = evaluate(&valid(&p2), &g2).unwrap();
            for l in StanceLabel::ALL {
                prop_assert!((permuted.f1(map(l)) - base.f1(l)).abs() < 1e-12);
            }
            prop_assert!((permuted.macro_f1 - base.macro_f1).abs() < 1e-12);
        }

        #[test]
        fn bounded_and_consistent(pairs in prop::collection::vec((label(), label(), any::<bool>()), 1..40)) {
            let golds: Vec<_> = pairs.iter().map(|p| p.0).collect();
            let preds: Vec<_> = pairs.iter().map(|p| (p.1, p.2)).collect();
            let r = evaluate(&preds, &golds).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            let mean = r.per_class_f1.values().sum::<f64>() / 3.0;
            prop_assert!((mean - r.macro_f1).abs() <= 1e-12);
            prop_assert_eq!(r.confusion.iter().flatten().sum::<usize>(), r.n);
            prop_assert!(r.invalid_count <= r.n);
        }
    }
}
