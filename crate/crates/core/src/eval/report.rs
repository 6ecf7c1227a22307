use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::MaskSpec;

/// Reference totals printed under every report for context.
pub const REFERENCE_SCRIPT_ACCURACY: f64 = 0.98;
pub const REFERENCE_CHARACTER_ACCURACY: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub script: String,
    pub samples: usize,
    pub script_accuracy: f64,
    pub character_accuracy: f64,
}

/// One classified evaluation sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub script: usize,
    pub script_correct: bool,
    pub character_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
    /// How `total` combines the rows.
    pub total_weighting: String,
    pub mask: MaskSpec,
    pub mean_mask_coverage: f64,
    pub samples_per_item: usize,
    pub seed: u64,
    pub generator: String,
    pub classifier: String,
    pub reference_script_accuracy: f64,
    pub reference_character_accuracy: f64,
}

/// The sample-weighted mean of `rows`.
pub fn weighted_total(rows: &[ReportRow]) -> ReportRow {
    let samples: usize = rows.iter().map(|r| r.samples).sum();
    let mean = |f: fn(&ReportRow) -> f64| {
        if samples == 0 {
            0.0
        } else {
            rows.iter().map(|r| r.samples as f64 * f(r)).sum::<f64>() / samples as f64
        }
    };
    ReportRow {
        script: "Total".into(),
        samples,
        script_accuracy: mean(|r| r.script_accuracy),
        character_accuracy: mean(|r| r.character_accuracy),
    }
}

/// Rows per script (in vocabulary order, omitting scripts with no samples)
/// from individual outcomes.
pub fn rows_from_outcomes(outcomes: &[Outcome], scripts: &[String]) -> Vec<ReportRow> {
    scripts
        .iter()
        .enumerate()
        .filter_map(|(id, name)| {
            let mine: Vec<_> = outcomes.iter().filter(|o| o.script == id).collect();
            (!mine.is_empty()).then(|| {
                let n = mine.len() as f64;
                ReportRow {
                    script: name.clone(),
                    samples: mine.len(),
                    script_accuracy: mine.iter().filter(|o| o.script_correct).count() as f64 / n,
                    character_accuracy: mine.iter().filter(|o| o.character_correct).count() as f64 / n,
                }
            })
        })
        .collect()
}

impl EvalReport {
    /// A text table with one column pair per script plus the total.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<&ReportRow> = self.rows.iter().collect();
        cols.push(&self.total);
        let width = cols.iter().map(|r| r.script.chars().count()).max().unwrap_or(5).max(9) + 2;
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "");
        for r in &cols {
            let _ = write!(out, "{:>width$}", r.script);
        }
        out.push('\n');
        for (label, f) in [
            ("Script", (|r: &ReportRow| r.script_accuracy) as fn(&ReportRow) -> f64),
            ("Character", |r: &ReportRow| r.character_accuracy),
        ] {
            let _ = write!(out, "{label:<12}");
            for r in &cols {
                let _ = write!(out, "{:>width$.3}", f(r));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<12}", "Samples");
        for r in &cols {
            let _ = write!(out, "{:>width$}", r.samples);
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "\nTotal is {}; mean mask coverage {:.3}; {} sample(s) per item; seed {}.",
            self.total_weighting, self.mean_mask_coverage, self.samples_per_item, self.seed
        );
        let _ = writeln!(out, "Generator: {}  Classifier: {}", self.generator, self.classifier);
        let _ = writeln!(
            out,
            "Reference (published full-scale model, not comparable): script {:.2}, character {:.2}.",
            self.reference_script_accuracy, self.reference_character_accuracy
        );
        out
    }
}
