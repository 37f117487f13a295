//! Per-image inference, eye-level ensembling and reporting.
//!
//! An eye is positive for a class when any of its images is: the eye score
//! is the maximum image probability and the decision threshold is 0.5.
//! Aggregates are unweighted means over classes; classes whose metric is
//! undefined on the evaluation set are left out of that aggregate and
//! flagged in the report.

mod metrics;

pub use metrics::{average_precision, roc_auc, threshold_metrics, Confusion, ThresholdMetrics};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, ImageRecord, Modality};
use crate::error::{FddmError, Result};
use crate::model::{forward, ModelParams};
use crate::numeric::{sigmoid, Matrix};

pub const DECISION_THRESHOLD: f64 = 0.5;
/// Classes above this share of images are "majority" classes.
pub const MAJORITY_FRACTION: f64 = 0.10;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePredictions {
    pub record_ids: Vec<String>,
    pub eye_ids: Vec<String>,
    /// One row of per-class probabilities per image.
    pub probs: Matrix,
}

/// `σ(logits)` for every record of `modality`, in manifest order.
pub fn predict_images(
    params: &ModelParams,
    manifest: &DatasetManifest,
    modality: Modality,
) -> Result<ImagePredictions> {
    if manifest.num_classes != params.config.num_classes {
        return Err(FddmError::config(
            "num_classes",
            format!(
                "dataset has {} classes, model has {}",
                manifest.num_classes, params.config.num_classes
            ),
        ));
    }
    let records: Vec<&ImageRecord> = manifest.records_of(modality).collect();
    if let Some(r) = records
        .iter()
        .find(|r| r.features.len() != params.config.input_dim)
    {
        return Err(FddmError::config(
            "input_dim",
            format!(
                "record `{}` has {} features, model expects {}",
                r.record_id,
                r.features.len(),
                params.config.input_dim
            ),
        ));
    }
    let (x, _) = DatasetManifest::matrices(&records, manifest.num_classes)?;
    let probs = if records.is_empty() {
        Matrix::zeros(0, manifest.num_classes)
    } else {
        forward(params, &x)?.logits.map(sigmoid)
    };
    Ok(ImagePredictions {
        record_ids: records.iter().map(|r| r.record_id.clone()).collect(),
        eye_ids: records.iter().map(|r| r.eye_id.clone()).collect(),
        probs,
    })
}

/// All image probabilities of one eye plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeImages {
    pub eye_id: String,
    pub probs: Vec<Vec<f64>>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyePrediction {
    pub eye_id: String,
    pub scores: Vec<f64>,
    pub decisions: Vec<bool>,
    pub truth: Vec<bool>,
}

/// Groups image predictions by eye, in order of first appearance.
pub fn group_by_eye(
    preds: &ImagePredictions,
    manifest: &DatasetManifest,
) -> Result<Vec<EyeImages>> {
    let truth_of: HashMap<&str, &[u8]> = manifest
        .records
        .iter()
        .map(|r| (r.eye_id.as_str(), r.labels.as_slice()))
        .collect();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut eyes: Vec<EyeImages> = Vec::new();
    for (i, eye) in preds.eye_ids.iter().enumerate() {
        let slot = *index.entry(eye).or_insert_with(|| {
            eyes.push(EyeImages {
                eye_id: eye.clone(),
                probs: Vec::new(),
                truth: Vec::new(),
            });
            eyes.len() - 1
        });
        eyes[slot].probs.push(preds.probs.row(i).to_vec());
    }
    for e in &mut eyes {
        let labels = truth_of
            .get(e.eye_id.as_str())
            .ok_or_else(|| FddmError::Data(format!("eye `{}` is not in the manifest", e.eye_id)))?;
        e.truth = labels.iter().map(|&l| l == 1).collect();
    }
    Ok(eyes)
}

/// Any-positive ensemble: per class, the eye score is the maximum over its
/// images and the decision is `score ≥ 0.5`.
pub fn ensemble_eye(eyes: &[EyeImages]) -> Result<Vec<EyePrediction>> {
    eyes.iter()
        .map(|e| {
            let first = e
                .probs
                .first()
                .ok_or_else(|| FddmError::Data(format!("eye `{}` has no images", e.eye_id)))?;
            let mut scores = first.clone();
            for p in &e.probs[1..] {
                if p.len() != scores.len() {
                    return Err(FddmError::Shape(format!(
                        "eye `{}` has ragged probabilities",
                        e.eye_id
                    )));
                }
                for (s, &v) in scores.iter_mut().zip(p) {
                    *s = s.max(v);
                }
            }
            Ok(EyePrediction {
                eye_id: e.eye_id.clone(),
                decisions: scores.iter().map(|&s| s >= DECISION_THRESHOLD).collect(),
                scores,
                truth: e.truth.clone(),
            })
        })
        .collect()
}

/// Class indices split by image share within `modality`: strictly more
/// than 10% is majority, everything else minority.
pub fn majority_minority_split(
    manifest: &DatasetManifest,
    modality: Modality,
) -> (Vec<usize>, Vec<usize>) {
    let fractions = class_image_fractions(manifest, modality);
    (0..manifest.num_classes).partition(|&c| fractions[c] > MAJORITY_FRACTION)
}

fn class_image_fractions(manifest: &DatasetManifest, modality: Modality) -> Vec<f64> {
    let mut counts = vec![0usize; manifest.num_classes];
    let mut total = 0usize;
    for r in manifest.records_of(modality) {
        total += 1;
        for (k, &l) in counts.iter_mut().zip(&r.labels) {
            *k += usize::from(l);
        }
    }
    counts
        .into_iter()
        .map(|k| {
            if total == 0 {
                0.0
            } else {
                k as f64 / total as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub positive_eyes: usize,
    pub image_fraction: f64,
    pub majority: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub map: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub modality: Modality,
    pub num_eyes: usize,
    pub num_images: usize,
    pub classes: Vec<ClassReport>,
    pub overall: Aggregates,
    pub majority_map: Option<f64>,
    pub minority_map: Option<f64>,
    pub flags: Vec<String>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn make_report(
    eyes: &[EyePrediction],
    manifest: &DatasetManifest,
    modality: Modality,
) -> Result<EvalReport> {
    let c_count = manifest.num_classes;
    if let Some(e) = eyes
        .iter()
        .find(|e| e.scores.len() != c_count || e.truth.len() != c_count)
    {
        return Err(FddmError::Shape(format!(
            "eye `{}` has {} scores for {c_count} classes",
            e.eye_id,
            e.scores.len()
        )));
    }
    let fractions = class_image_fractions(manifest, modality);
    let mut flags = Vec::new();
    let mut classes = Vec::with_capacity(c_count);
    for c in 0..c_count {
        let scores: Vec<f64> = eyes.iter().map(|e| e.scores[c]).collect();
        let truth: Vec<bool> = eyes.iter().map(|e| e.truth[c]).collect();
        let decisions: Vec<bool> = eyes.iter().map(|e| e.decisions[c]).collect();
        let name = manifest.class_names[c].clone();
        let ap = average_precision(&scores, &truth);
        let auc = roc_auc(&scores, &truth);
        let t = threshold_metrics(&decisions, &truth);
        let mut class_flags = Vec::new();
        if ap.is_none() {
            class_flags.push("ap_undefined_no_positives".to_string());
        }
        if auc.is_none() {
            class_flags.push("auc_undefined_single_class".to_string());
        }
        class_flags.extend(t.undefined.iter().map(|m| format!("{m}_zero_denominator")));
        flags.extend(class_flags.iter().map(|f| format!("{name}: {f}")));
        classes.push(ClassReport {
            name,
            ap,
            auc,
            sensitivity: t.sensitivity,
            specificity: t.specificity,
            f1: t.f1,
            positive_eyes: truth.iter().filter(|&&t| t).count(),
            image_fraction: fractions[c],
            majority: fractions[c] > MAJORITY_FRACTION,
            flags: class_flags,
        });
    }
    let n = c_count as f64;
    let overall = Aggregates {
        map: mean_of(classes.iter().filter_map(|c| c.ap)),
        sensitivity: classes.iter().map(|c| c.sensitivity).sum::<f64>() / n,
        specificity: classes.iter().map(|c| c.specificity).sum::<f64>() / n,
        f1: classes.iter().map(|c| c.f1).sum::<f64>() / n,
        auc: mean_of(classes.iter().filter_map(|c| c.auc)),
    };
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        modality,
        num_eyes: eyes.len(),
        num_images: manifest.records_of(modality).count(),
        majority_map: mean_of(classes.iter().filter(|c| c.majority).filter_map(|c| c.ap)),
        minority_map: mean_of(classes.iter().filter(|c| !c.majority).filter_map(|c| c.ap)),
        classes,
        overall,
        flags,
    })
}

/// Inference, eye ensembling and report in one call.
pub fn evaluate(
    params: &ModelParams,
    manifest: &DatasetManifest,
    modality: Modality,
) -> Result<EvalReport> {
    let preds = predict_images(params, manifest, modality)?;
    let eyes = ensemble_eye(&group_by_eye(&preds, manifest)?)?;
    make_report(&eyes, manifest, modality)
}

/// Column order of the CSV table.
pub const CSV_COLUMNS: [&str; 5] = ["MAP", "Sensitivity", "Specificity", "F1", "AUC"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per class (its AP under the MAP column) and a final
    /// `overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("class,{}\n", CSV_COLUMNS.join(","));
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{}",
                c.name,
                fmt_opt(c.ap),
                c.sensitivity,
                c.specificity,
                c.f1,
                fmt_opt(c.auc)
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "overall,{},{:.6},{:.6},{:.6},{}",
            fmt_opt(o.map),
            o.sensitivity,
            o.specificity,
            o.f1,
            fmt_opt(o.auc)
        );
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| FddmError::io(dir, e))?;
        for (ext, body) in [("json", self.to_json()), ("csv", self.to_csv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| FddmError::io(&path, e))?;
        }
        Ok(())
    }
}
