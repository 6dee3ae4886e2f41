use std::fmt;

use serde::Serialize;

use super::HarnessError;
use crate::evaluation::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDelta {
    pub level: usize,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b - a` when both sides are present.
    pub delta: Option<f64>,
}

impl LevelDelta {
    fn new(level: usize, a: Option<f64>, b: Option<f64>) -> Self {
        let delta = a.zip(b).map(|(a, b)| b - a);
        Self { level, a, b, delta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub dataset: String,
    pub mode_a: String,
    pub mode_b: String,
    pub f1_macro: Vec<LevelDelta>,
    /// Decay rows start at level 2.
    pub decay: Vec<LevelDelta>,
    pub decay_avg: LevelDelta,
}

/// Side-by-side F1-macro and decay of two reports over the same taxonomy.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison, HarnessError> {
    if a.level_sizes.len() != b.level_sizes.len() {
        return Err(HarnessError::DatasetMismatch(format!(
            "{} levels vs {} levels",
            a.level_sizes.len(),
            b.level_sizes.len()
        )));
    }
    if a.taxonomy_fingerprint != b.taxonomy_fingerprint || a.level_sizes != b.level_sizes {
        return Err(HarnessError::DatasetMismatch(format!(
            "taxonomy {} {:?} vs {} {:?}",
            a.taxonomy_fingerprint, a.level_sizes, b.taxonomy_fingerprint, b.level_sizes
        )));
    }
    if a.dataset != b.dataset {
        return Err(HarnessError::DatasetMismatch(format!("{:?} vs {:?}", a.dataset, b.dataset)));
    }
    let depth = a.level_sizes.len();
    Ok(Comparison {
        dataset: a.dataset.clone(),
        mode_a: a.mode.clone(),
        mode_b: b.mode.clone(),
        f1_macro: (0..depth)
            .map(|i| LevelDelta::new(i + 1, a.per_level_f1_macro.get(i).copied(), b.per_level_f1_macro.get(i).copied()))
            .collect(),
        decay: (1..depth)
            .map(|i| LevelDelta::new(i + 1, a.decay_per_level.get(i - 1).copied(), b.decay_per_level.get(i - 1).copied()))
            .collect(),
        decay_avg: LevelDelta::new(0, a.decay_avg, b.decay_avg),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"))
}

fn signed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:+.4}"))
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset {}: A = {}, B = {}", self.dataset, self.mode_a, self.mode_b)?;
        writeln!(f, "{:<10} {:<6} {:>8} {:>8} {:>8}", "metric", "level", "A", "B", "B-A")?;
        for d in &self.f1_macro {
            writeln!(f, "{:<10} {:<6} {:>8} {:>8} {:>8}", "f1_macro", d.level, cell(d.a), cell(d.b), signed(d.delta))?;
        }
        for d in &self.decay {
            writeln!(f, "{:<10} {:<6} {:>8} {:>8} {:>8}", "decay", d.level, cell(d.a), cell(d.b), signed(d.delta))?;
        }
        let d = &self.decay_avg;
        writeln!(f, "{:<10} {:<6} {:>8} {:>8} {:>8}", "decay_avg", "-", cell(d.a), cell(d.b), signed(d.delta))
    }
}
