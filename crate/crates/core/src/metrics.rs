//! Binary confusion matrices and the precision / recall / F1 family.
//!
//! Class order throughout is `[troll, non_troll]`; rows are gold labels and
//! columns are predictions.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Label;
use crate::error::{Error, Result};

pub const CLASSES: [Label; 2] = [Label::Troll, Label::NonTroll];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

fn class_index(label: Label) -> usize {
    match label {
        Label::Troll => 0,
        Label::NonTroll => 1,
    }
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn from_labels(gold: &[Label], pred: &[Label]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Input(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        if gold.is_empty() {
            return Err(Error::Input("no samples to evaluate".into()));
        }
        let mut cm = ConfusionMatrix::default();
        for (&g, &p) in gold.iter().zip(pred) {
            cm.counts[class_index(g)][class_index(p)] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Gold-label count of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c][0] + self.counts[c][1]
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts[0][c] + self.counts[1][c]
    }

    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        format!(
            "gold\\pred,troll,non_troll\ntroll,{},{}\nnon_troll,{},{}\n",
            c[0][0], c[0][1], c[1][0], c[1][1]
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::Format(format!("confusion csv: {why}"));
        let mut lines = text.lines();
        if lines.next() != Some("gold\\pred,troll,non_troll") {
            return Err(bad("unexpected header"));
        }
        let mut counts = [[0u64; 2]; 2];
        for (row, expected) in counts.iter_mut().zip(["troll", "non_troll"]) {
            let line = lines.next().ok_or_else(|| bad("missing row"))?;
            let mut fields = line.split(',');
            if fields.next() != Some(expected) {
                return Err(bad("rows must be troll then non_troll"));
            }
            for cell in row.iter_mut() {
                *cell = fields
                    .next()
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| bad("invalid count"))?;
            }
        }
        Ok(ConfusionMatrix { counts })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Indexed like [`CLASSES`].
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Set when some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EvalReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let total = cm.total();
        if total == 0 {
            return Err(Error::Input("confusion matrix is empty".into()));
        }
        let mut degenerate = false;
        let mut classes = [ClassMetrics::default(); 2];
        for (c, m) in classes.iter_mut().enumerate() {
            let tp = cm.counts[c][c] as f64;
            let support = cm.support(c);
            let precision = ratio(tp, cm.predicted(c) as f64, &mut degenerate);
            let recall = ratio(tp, support as f64, &mut degenerate);
            if precision + recall == 0.0 {
                degenerate = true;
            }
            *m = ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
            };
        }
        let n = total as f64;
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            classes.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / n
        };
        Ok(EvalReport {
            confusion: *cm,
            accuracy: cm.trace() as f64 / n,
            weighted_precision: weighted(|m| m.precision),
            weighted_recall: weighted(|m| m.recall),
            weighted_f1: weighted(|m| m.f1),
            classes,
            degenerate,
        })
    }

    pub fn from_labels(gold: &[Label], pred: &[Label]) -> Result<Self> {
        Self::from_confusion(&ConfusionMatrix::from_labels(gold, pred)?)
    }

    fn cells(&self) -> [f64; 10] {
        let [t, n] = &self.classes;
        [
            t.precision,
            t.recall,
            t.f1,
            n.precision,
            n.recall,
            n.f1,
            self.accuracy,
            self.weighted_precision,
            self.weighted_recall,
            self.weighted_f1,
        ]
    }
}

/// Two decimals, halves rounded away from zero.
pub fn round2(x: f64) -> String {
    format!("{:.2}", (x * 100.0).round() / 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(Error::config(format!("unknown table format `{other}`"))),
        }
    }
}

const COLUMNS: [&str; 11] = [
    "Model",
    "Troll P",
    "Troll R",
    "Troll F1",
    "Non-troll P",
    "Non-troll R",
    "Non-troll F1",
    "Acc",
    "W(avg) P",
    "W(avg) R",
    "W(avg) F1",
];

/// One row per named report, laid out like the usual per-class plus
/// weighted-average results table.
pub fn render_table(reports: &[(String, EvalReport)], format: TableFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to render".into()));
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let _ = writeln!(out, "{}", COLUMNS.join(","));
            for (name, r) in reports {
                let cells: Vec<String> = r.cells().iter().map(|&v| round2(v)).collect();
                let _ = writeln!(out, "{},{}", csv_field(name), cells.join(","));
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(COLUMNS.len() - 1));
            for (name, r) in reports {
                let cells: Vec<String> = r.cells().iter().map(|&v| round2(v)).collect();
                let _ = writeln!(out, "| {} | {} |", name, cells.join(" | "));
            }
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const HEATMAP_CELL: usize = 64;

/// Grey level of each cell: `round(255 · count / max_count)`.
pub fn heatmap_levels(cm: &ConfusionMatrix) -> [[u8; 2]; 2] {
    let max = cm.max_count();
    let mut levels = [[0u8; 2]; 2];
    for (r, row) in levels.iter_mut().enumerate() {
        for (c, level) in row.iter_mut().enumerate() {
            *level = if max == 0 {
                0
            } else {
                (255.0 * cm.counts[r][c] as f64 / max as f64).round() as u8
            };
        }
    }
    levels
}

/// Binary PGM (P5) with one 64×64 block per cell.
pub fn heatmap_pgm(cm: &ConfusionMatrix) -> Vec<u8> {
    let levels = heatmap_levels(cm);
    let side = 2 * HEATMAP_CELL;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            out.push(levels[y / HEATMAP_CELL][x / HEATMAP_CELL]);
        }
    }
    out
}

/// Writes `confusion.csv` and `heatmap.pgm` into `dir`.
pub fn export_heatmap(cm: &ConfusionMatrix, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("confusion.csv");
    std::fs::write(&csv, cm.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let pgm = dir.join("heatmap.pgm");
    std::fs::write(&pgm, heatmap_pgm(cm)).map_err(|e| Error::io(&pgm, e))?;
    Ok(())
}
