//! Strict entity-level scoring.
//!
//! A predicted span counts only when class, start and end all equal a gold
//! span of the same sentence. Scores are percentages; micro-averaged figures
//! pool the counts of every class.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tags::{EntityClass, EntitySpan};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(
            self.true_positives,
            self.true_positives + self.false_positives,
        )
    }

    pub fn recall(&self) -> f64 {
        ratio(
            self.true_positives,
            self.true_positives + self.false_negatives,
        )
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    fn add(&mut self, other: &Counts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    per_class: Vec<(EntityClass, Counts)>,
    micro: Counts,
}

/// One line of a rendered report, values rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn class(&self, class: EntityClass) -> Counts {
        self.per_class
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, counts)| *counts)
            .unwrap_or_default()
    }

    pub fn micro(&self) -> Counts {
        self.micro
    }

    /// Per-entity rows (group, drug, brand, drug_n) followed by `micro`.
    pub fn rows(&self) -> Vec<ReportRow> {
        EntityClass::REPORT_ORDER
            .iter()
            .map(|&c| (c.name(), self.class(c)))
            .chain(std::iter::once(("micro", self.micro)))
            .map(|(label, c)| ReportRow {
                label: label.to_string(),
                true_positives: c.true_positives,
                false_positives: c.false_positives,
                false_negatives: c.false_negatives,
                precision: round2(c.precision()),
                recall: round2(c.recall()),
                f1: round2(c.f1()),
            })
            .collect()
    }

    /// Plain-text table: one row per entity class plus the micro average.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "Entity", "Precision", "Recall", "F1 Score", "TP", "FP", "FN"
        );
        for row in self.rows() {
            if row.label == "micro" {
                let _ = writeln!(out, "{}", "-".repeat(59));
            }
            let _ = writeln!(
                out,
                "{:<8} {:>9.2} {:>9.2} {:>9.2} {:>6} {:>6} {:>6}",
                row.label,
                row.precision,
                row.recall,
                row.f1,
                row.true_positives,
                row.false_positives,
                row.false_negatives
            );
        }
        out
    }
}

/// Scores predicted spans against gold spans, sentence by sentence.
pub fn evaluate_strict(
    gold: &[Vec<EntitySpan>],
    predicted: &[Vec<EntitySpan>],
) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "sentence count mismatch: {} gold vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut per_class: HashMap<EntityClass, Counts> = HashMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        let mut unmatched: Vec<Option<&EntitySpan>> = g.iter().map(Some).collect();
        for span in p {
            let hit = unmatched
                .iter_mut()
                .find(|slot| slot.is_some_and(|s| s == span));
            let counts = per_class.entry(span.class).or_default();
            match hit {
                Some(slot) => {
                    *slot = None;
                    counts.true_positives += 1;
                }
                None => counts.false_positives += 1,
            }
        }
        for span in unmatched.into_iter().flatten() {
            per_class.entry(span.class).or_default().false_negatives += 1;
        }
    }
    let mut micro = Counts::default();
    let per_class: Vec<_> = EntityClass::REPORT_ORDER
        .iter()
        .map(|c| {
            let counts = per_class.get(c).copied().unwrap_or_default();
            micro.add(&counts);
            (*c, counts)
        })
        .collect();
    Ok(EvalReport { per_class, micro })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EntityClass::*;

    fn example_gold() -> Vec<EntitySpan> {
        vec![
            EntitySpan::new(Drug, 0, 0),
            EntitySpan::new(Brand, 4, 4),
            EntitySpan::new(Group, 6, 8),
        ]
    }

    #[test]
    fn perfect_match() {
        let gold = vec![example_gold()];
        let report = evaluate_strict(&gold, &gold).unwrap();
        for class in [Drug, Brand, Group] {
            assert_eq!(report.class(class).f1(), 100.0);
        }
        assert_eq!(report.micro().precision(), 100.0);
        assert_eq!(report.micro().f1(), 100.0);
        // unsupported class reports zeros
        let drug_n = report.class(DrugN);
        assert_eq!(
            (drug_n.precision(), drug_n.recall(), drug_n.f1()),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn boundary_mismatch_is_fp_and_fn() {
        let gold = vec![vec![
            EntitySpan::new(Drug, 0, 0),
            EntitySpan::new(Group, 6, 8),
        ]];
        let pred = vec![vec![
            EntitySpan::new(Drug, 0, 0),
            EntitySpan::new(Group, 6, 7),
        ]];
        let micro = evaluate_strict(&gold, &pred).unwrap().micro();
        assert_eq!(
            (micro.precision(), micro.recall(), micro.f1()),
            (50.0, 50.0, 50.0)
        );
    }

    #[test]
    fn class_mismatch_scores_zero() {
        let gold = vec![vec![EntitySpan::new(Drug, 0, 0)]];
        let pred = vec![vec![EntitySpan::new(Brand, 0, 0)]];
        let report = evaluate_strict(&gold, &pred).unwrap();
        let micro = report.micro();
        assert_eq!(
            (micro.precision(), micro.recall(), micro.f1()),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(report.class(Brand).false_positives, 1);
        assert_eq!(report.class(Drug).false_negatives, 1);
    }

    #[test]
    fn duplicate_predictions_match_once() {
        let gold = vec![vec![EntitySpan::new(Drug, 1, 2)]];
        let pred = vec![vec![
            EntitySpan::new(Drug, 1, 2),
            EntitySpan::new(Drug, 1, 2),
        ]];
        let c = evaluate_strict(&gold, &pred).unwrap().class(Drug);
        assert_eq!(
            (c.true_positives, c.false_positives, c.false_negatives),
            (1, 1, 0)
        );
    }

    #[test]
    fn mismatched_sentence_counts() {
        assert!(evaluate_strict(&[vec![]], &[]).is_err());
    }

    #[test]
    fn rendered_layout() {
        let gold = vec![example_gold()];
        let report = evaluate_strict(&gold, &gold).unwrap();
        let labels: Vec<_> = report.rows().into_iter().map(|r| r.label).collect();
        assert_eq!(labels, ["group", "drug", "brand", "drug_n", "micro"]);
        let table = report.render_table();
        assert!(table.contains("drug_n        0.00      0.00      0.00"));
        assert!(table.contains("micro       100.00    100.00    100.00"));
    }

    fn arb_span() -> impl Strategy<Value = EntitySpan> {
        (0usize..4, 0usize..6, 0usize..3)
            .prop_map(|(c, s, l)| EntitySpan::new(EntityClass::ALL[c], s, s + l))
    }

    fn arb_doc() -> impl Strategy<Value = Vec<Vec<EntitySpan>>> {
        prop::collection::vec(prop::collection::vec(arb_span(), 0..4), 1..6)
    }

    proptest! {
        #[test]
        fn counting_identities(gold in arb_doc(), pred in arb_doc()) {
            let n = gold.len().min(pred.len());
            let (gold, pred) = (&gold[..n], &pred[..n]);
            let report = evaluate_strict(gold, pred).unwrap();
            for class in EntityClass::ALL {
                let c = report.class(class);
                let n_gold = gold.iter().flatten().filter(|s| s.class == class).count();
                let n_pred = pred.iter().flatten().filter(|s| s.class == class).count();
                prop_assert_eq!(c.true_positives + c.false_negatives, n_gold);
                prop_assert_eq!(c.true_positives + c.false_positives, n_pred);
            }
        }

        #[test]
        fn self_evaluation_is_perfect(gold in arb_doc()) {
            prop_assume!(gold.iter().any(|s| !s.is_empty()));
            prop_assert_eq!(evaluate_strict(&gold, &gold).unwrap().micro().f1(), 100.0);
        }

        #[test]
        fn sentence_order_invariant(gold in arb_doc(), pred in arb_doc(), rot in 0usize..6) {
            let n = gold.len().min(pred.len());
            let (mut g, mut p) = (gold[..n].to_vec(), pred[..n].to_vec());
            let a = evaluate_strict(&g, &p).unwrap().micro();
            g.rotate_left(rot % n);
            p.rotate_left(rot % n);
            g.reverse();
            p.reverse();
            prop_assert_eq!(evaluate_strict(&g, &p).unwrap().micro(), a);
        }
    }
}
