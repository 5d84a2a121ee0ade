//! Token-level precision, recall and F1 for the cause and effect classes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::CausalTag;

/// Counts indexed `[gold][predicted]` in `O, C, E` order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; 3]; 3],
}

impl Confusion {
    pub fn record(&mut self, gold: CausalTag, predicted: CausalTag) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn record_all(&mut self, gold: &[CausalTag], predicted: &[CausalTag]) {
        for (&g, &p) in gold.iter().zip(predicted) {
            self.record(g, p);
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        for g in 0..3 {
            for p in 0..3 {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn class(&self, tag: CausalTag) -> ClassMetrics {
        let c = tag.index();
        let tp = self.counts[c][c];
        let gold: u64 = self.counts[c].iter().sum();
        let predicted: u64 = self.counts.iter().map(|row| row[c]).sum();
        let absent = gold == 0;
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (precision, recall) = if absent {
            (0.0, 0.0)
        } else {
            (ratio(tp, predicted), ratio(tp, gold))
        };
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            true_positives: tp,
            gold,
            predicted,
            absent_from_gold: absent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub gold: u64,
    pub predicted: u64,
    /// The class never occurs in the gold tags; its scores are reported as 0.
    pub absent_from_gold: bool,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn macro_f1(f1_cause: f64, f1_effect: f64) -> f64 {
    (f1_cause + f1_effect) / 2.0
}

/// Rounds half away from zero at `decimals` places. Values within 1e-9 of a
/// tie count as the tie, so decimal inputs like `0.90965` (stored slightly
/// below) round up as written.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x.abs() * scale;
    let rounded = (scaled + 0.5 + 1e-9 * scale).floor();
    rounded.copysign(x) / scale
}

/// Four-decimal rendering used in reports.
pub fn fmt4(x: f64) -> String {
    format!("{:.4}", round_half_up(x, 4))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cause: ClassMetrics,
    pub effect: ClassMetrics,
    pub macro_f1: f64,
    pub confusion: Confusion,
    pub sentences: usize,
    pub tokens: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, sentences: usize) -> Self {
        let cause = confusion.class(CausalTag::C);
        let effect = confusion.class(CausalTag::E);
        Self {
            macro_f1: macro_f1(cause.f1, effect.f1),
            cause,
            effect,
            confusion,
            sentences,
            tokens: confusion.total(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>9} {:>9} {:>9} {:>7}", "class", "precision", "recall", "f1", "gold")?;
        for (name, m) in [("C", &self.cause), ("E", &self.effect)] {
            let flag = if m.absent_from_gold { "  (absent from gold)" } else { "" };
            writeln!(
                f,
                "{:<6} {:>9} {:>9} {:>9} {:>7}{flag}",
                name,
                fmt4(m.precision),
                fmt4(m.recall),
                fmt4(m.f1),
                m.gold
            )?;
        }
        writeln!(f, "{:<6} {:>29}", "macro", fmt4(self.macro_f1))?;
        writeln!(f, "confusion (rows gold, cols predicted: O C E)")?;
        for (tag, row) in CausalTag::ALL.iter().zip(&self.confusion.counts) {
            writeln!(f, "{:<6} {:>7} {:>7} {:>7}", tag, row[0], row[1], row[2])?;
        }
        write!(f, "{} sentences, {} tokens", self.sentences, self.tokens)
    }
}
