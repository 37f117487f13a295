//! Training logs, serialized as one JSON object per line with a `kind`
//! tag: every step, then per-epoch summaries, then run totals.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FddmError, Result};
use crate::eval::EvalReport;
use crate::losses::SkipReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Baseline,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_cls: f64,
    pub l_cpm: f64,
    pub l_csa: f64,
    pub l_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpm_skip: Option<SkipReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csa_skip: Option<SkipReason>,
    #[serde(default)]
    pub csa_dropped_zero_norm: usize,
    /// Records of the batch the trained model saw.
    pub records: Vec<String>,
    /// Fundus records fed to the frozen teacher (students only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_records: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub map: Option<f64>,
    pub f1: f64,
    pub auc: Option<f64>,
    pub majority_map: Option<f64>,
    pub minority_map: Option<f64>,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        EvalSummary {
            map: r.overall.map,
            f1: r.overall.f1,
            auc: r.overall.auc,
            majority_map: r.majority_map,
            minority_map: r.minority_map,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_l_cls: f64,
    pub mean_l_cpm: f64,
    pub mean_l_csa: f64,
    pub mean_l_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

/// Counters over the whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogTotals {
    pub steps: usize,
    pub cpm_skipped_steps: usize,
    pub csa_skipped_steps: usize,
    /// Steps where neither distillation term contributed.
    pub no_distill_steps: usize,
    pub csa_dropped_zero_norm: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub role: Role,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    pub totals: LogTotals,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Step(StepRecord),
    Epoch(EpochSummary),
    Run {
        role: Role,
        totals: LogTotals,
        warnings: Vec<String>,
    },
}

impl TrainLog {
    pub(crate) fn new(role: Role) -> Self {
        TrainLog {
            role,
            steps: Vec::new(),
            epochs: Vec::new(),
            totals: LogTotals::default(),
            warnings: Vec::new(),
        }
    }

    pub(crate) fn push_step(&mut self, record: StepRecord, no_distill: bool) {
        let t = &mut self.totals;
        let skipped = |s: Option<SkipReason>| {
            matches!(
                s,
                Some(SkipReason::NoOverlap | SkipReason::InsufficientClasses)
            )
        };
        t.cpm_skipped_steps += usize::from(skipped(record.cpm_skip));
        t.csa_skipped_steps += usize::from(skipped(record.csa_skip));
        t.no_distill_steps += usize::from(no_distill && self.role == Role::Student);
        t.csa_dropped_zero_norm += record.csa_dropped_zero_norm;
        self.steps.push(record);
    }

    pub(crate) fn close_epoch(
        &mut self,
        epoch: usize,
        first_step: usize,
        eval: Option<EvalSummary>,
    ) {
        let steps = &self.steps[first_step..];
        let n = steps.len().max(1) as f64;
        let mean = |f: fn(&StepRecord) -> f64| steps.iter().map(f).sum::<f64>() / n;
        self.epochs.push(EpochSummary {
            epoch,
            steps: steps.len(),
            mean_l_cls: mean(|s| s.l_cls),
            mean_l_cpm: mean(|s| s.l_cpm),
            mean_l_csa: mean(|s| s.l_csa),
            mean_l_total: mean(|s| s.l_total),
            eval,
        });
    }

    pub(crate) fn finish(&mut self) {
        self.totals.steps = self.steps.len();
    }

    pub fn final_eval(&self) -> Option<&EvalSummary> {
        self.epochs.last().and_then(|e| e.eval.as_ref())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let lines = self
            .steps
            .iter()
            .cloned()
            .map(LogLine::Step)
            .chain(self.epochs.iter().cloned().map(LogLine::Epoch))
            .chain(std::iter::once(LogLine::Run {
                role: self.role,
                totals: self.totals.clone(),
                warnings: self.warnings.clone(),
            }));
        for line in lines {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut steps = Vec::new();
        let mut epochs = Vec::new();
        let mut run = None;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| FddmError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| FddmError::Parse {
                line: i + 1,
                message: e.to_string(),
            })? {
                LogLine::Step(s) => steps.push(s),
                LogLine::Epoch(e) => epochs.push(e),
                LogLine::Run {
                    role,
                    totals,
                    warnings,
                } => run = Some((role, totals, warnings)),
            }
        }
        let (role, totals, warnings) =
            run.ok_or_else(|| FddmError::Data("training log has no run summary line".into()))?;
        Ok(TrainLog {
            role,
            steps,
            epochs,
            totals,
            warnings,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| FddmError::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
            .map_err(|e| FddmError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| FddmError::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut log = TrainLog::new(Role::Student);
        log.push_step(
            StepRecord {
                step: 0,
                epoch: 0,
                l_cls: 0.7,
                l_cpm: 0.0,
                l_csa: 0.1,
                l_total: 0.8,
                cpm_skip: Some(SkipReason::NoOverlap),
                csa_skip: None,
                csa_dropped_zero_norm: 1,
                records: vec!["a".into()],
                teacher_records: Some(vec!["b".into()]),
            },
            false,
        );
        log.close_epoch(0, 0, None);
        log.finish();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"kind\":\"step\",\"step\":0,"));
        assert_eq!(text.lines().count(), 3);
        let back = TrainLog::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.totals.cpm_skipped_steps, 1);
    }
}
