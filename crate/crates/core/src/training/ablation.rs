//! The on/off grid over the two distillation terms.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train_baseline, train_student, train_teacher, TrainConfig, TrainLog};
use crate::data::DatasetManifest;
use crate::error::{FddmError, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: &'static str,
    pub alpha: f64,
    pub beta: f64,
}

/// Baseline, CPM only, CSA only and both, using `cfg`'s nonzero weights.
pub fn ablation_cells(cfg: &TrainConfig) -> [AblationCell; 4] {
    let cell = |name, alpha, beta| AblationCell { name, alpha, beta };
    [
        cell("baseline", 0.0, 0.0),
        cell("cpm_only", cfg.alpha, 0.0),
        cell("csa_only", 0.0, cfg.beta),
        cell("full", cfg.alpha, cfg.beta),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    /// Logs of the four cells, in row order.
    pub logs: Vec<TrainLog>,
}

/// Trains a teacher, then the four cells.
pub fn run_ablation(
    train: &DatasetManifest,
    test: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<AblationResult> {
    let teacher = train_teacher(train, None, cfg)?;
    run_ablation_with_teacher(train, test, &teacher.checkpoint, cfg)
}

/// The four cells against a given teacher, one thread per cell. The
/// baseline cell is a plain single-modal run; the others are students.
pub fn run_ablation_with_teacher(
    train: &DatasetManifest,
    test: &DatasetManifest,
    teacher: &Checkpoint,
    cfg: &TrainConfig,
) -> Result<AblationResult> {
    cfg.validate()?;
    let cells = ablation_cells(cfg);
    let results: Vec<Result<(AblationRow, TrainLog)>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|cell| {
                s.spawn(move || {
                    let cell_cfg = TrainConfig {
                        alpha: cell.alpha,
                        beta: cell.beta,
                        eval_every: 0,
                        ..cfg.clone()
                    };
                    let out = if cell.alpha == 0.0 && cell.beta == 0.0 {
                        train_baseline(train, None, &cell_cfg)?
                    } else {
                        train_student(train, train, teacher, None, &cell_cfg)?
                    };
                    let report = evaluate(out.params(), test, crate::data::Modality::Oct)?;
                    Ok((
                        AblationRow {
                            name: cell.name.to_string(),
                            alpha: cell.alpha,
                            beta: cell.beta,
                            report,
                        },
                        out.log,
                    ))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(FddmError::Data("ablation worker panicked".into())))
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(4);
    let mut logs = Vec::with_capacity(4);
    for r in results {
        let (row, log) = r?;
        rows.push(row);
        logs.push(log);
    }
    Ok(AblationResult { rows, logs })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl AblationResult {
    pub const CSV_HEADER: &'static str = "cell,alpha,beta,MAP,MAP_majority,MAP_minority,F1,AUC";

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let rep = &r.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{}",
                r.name,
                r.alpha,
                r.beta,
                cell(rep.overall.map),
                cell(rep.majority_map),
                cell(rep.minority_map),
                rep.overall.f1,
                cell(rep.overall.auc)
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rows).expect("rows serialize");
        s.push('\n');
        s
    }
}

impl fmt::Display for AblationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct =
            |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        writeln!(
            f,
            "{:<10} {:>6} {:>6} | {:>8} {:>9} {:>9} | {:>7} {:>7}",
            "cell", "alpha", "beta", "MAP", "majority", "minority", "F1", "AUC"
        )?;
        for r in &self.rows {
            let rep = &r.report;
            writeln!(
                f,
                "{:<10} {:>6} {:>6} | {:>8} {:>9} {:>9} | {:>7} {:>7}",
                r.name,
                r.alpha,
                r.beta,
                pct(rep.overall.map),
                pct(rep.majority_map),
                pct(rep.minority_map),
                pct(Some(rep.overall.f1)),
                pct(rep.overall.auc)
            )?;
        }
        Ok(())
    }
}
