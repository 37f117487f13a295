//! Two-modality multi-label datasets: records, manifests, synthetic
//! generation, line-delimited JSON files, patient-grouped splits and
//! unpaired batch streams.

mod batch;
mod generate;
mod io;
mod split;

pub use batch::{Batch, BatchStream};
pub use generate::{generate_synthetic, GeneratorConfig, ModalityPair};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DatasetHeader};
pub use split::split_by_patient;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{FddmError, Result};
use crate::numeric::{ClassMask, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "FUNDUS")]
    Fundus,
    #[serde(rename = "OCT")]
    Oct,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Fundus, Modality::Oct];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Fundus => "FUNDUS",
            Modality::Oct => "OCT",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = FddmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FUNDUS" => Ok(Modality::Fundus),
            "OCT" => Ok(Modality::Oct),
            other => Err(FddmError::Input(format!("unknown modality `{other}`"))),
        }
    }
}

/// One image. All records of an eye carry the same labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub record_id: String,
    pub eye_id: String,
    pub patient_id: String,
    pub modality: Modality,
    pub labels: Vec<u8>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Generator config hash or source path.
    pub provenance: Option<String>,
}

impl DatasetManifest {
    /// Builds a manifest, enforcing unique record ids, label widths,
    /// consistent feature widths, finite features and per-eye label
    /// agreement.
    pub fn new(
        records: Vec<ImageRecord>,
        num_classes: usize,
        class_names: Vec<String>,
        provenance: Option<String>,
    ) -> Result<Self> {
        if class_names.len() != num_classes {
            return Err(FddmError::Schema {
                line: 1,
                message: format!(
                    "{} class names for {num_classes} classes",
                    class_names.len()
                ),
            });
        }
        let m = DatasetManifest {
            records,
            num_classes,
            class_names,
            provenance,
        };
        if let Some((idx, message)) = m.first_violation() {
            return Err(FddmError::Schema {
                line: idx + 2,
                message,
            });
        }
        Ok(m)
    }

    /// Index of the first offending record and what is wrong with it.
    fn first_violation(&self) -> Option<(usize, String)> {
        let mut ids = HashSet::new();
        let mut eye_labels: HashMap<&str, &[u8]> = HashMap::new();
        let width = self.records.first().map(|r| r.features.len());
        for (i, r) in self.records.iter().enumerate() {
            if r.labels.len() != self.num_classes {
                return Some((
                    i,
                    format!(
                        "record `{}` has {} labels, expected {}",
                        r.record_id,
                        r.labels.len(),
                        self.num_classes
                    ),
                ));
            }
            if r.labels.iter().any(|&l| l > 1) {
                return Some((i, format!("record `{}` has non-binary labels", r.record_id)));
            }
            if Some(r.features.len()) != width {
                return Some((
                    i,
                    format!("record `{}` has {} features", r.record_id, r.features.len()),
                ));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Some((
                    i,
                    format!("record `{}` has non-finite features", r.record_id),
                ));
            }
            if !ids.insert(r.record_id.as_str()) {
                return Some((i, format!("duplicate record id `{}`", r.record_id)));
            }
            if let Some(prev) = eye_labels.insert(r.eye_id.as_str(), &r.labels) {
                if prev != r.labels.as_slice() {
                    return Some((i, format!("eye `{}` has inconsistent labels", r.eye_id)));
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.features.len())
    }

    pub fn records_of(&self, modality: Modality) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.modality == modality)
    }

    /// Same header, records restricted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&ImageRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn of_modality(&self, modality: Modality) -> DatasetManifest {
        self.filtered(|r| r.modality == modality)
    }

    /// Features and labels of the given records as matrices.
    pub fn matrices(records: &[&ImageRecord], num_classes: usize) -> Result<(Matrix, ClassMask)> {
        let features: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
        let labels: Vec<&[u8]> = records.iter().map(|r| r.labels.as_slice()).collect();
        Ok((
            Matrix::from_rows(&features)?,
            ClassMask::from_labels(&labels, num_classes)?,
        ))
    }

    pub fn summary(&self) -> DatasetSummary {
        let c = self.num_classes;
        let mut eyes: BTreeMap<&str, &[u8]> = BTreeMap::new();
        let mut images = ModalityPair::<Vec<usize>> {
            fundus: vec![0; c],
            oct: vec![0; c],
        };
        let mut totals = ModalityPair { fundus: 0, oct: 0 };
        for r in &self.records {
            eyes.insert(&r.eye_id, &r.labels);
            let (counts, total) = match r.modality {
                Modality::Fundus => (&mut images.fundus, &mut totals.fundus),
                Modality::Oct => (&mut images.oct, &mut totals.oct),
            };
            *total += 1;
            for (k, &l) in counts.iter_mut().zip(&r.labels) {
                *k += usize::from(l);
            }
        }
        let mut eye_counts = vec![0; c];
        for labels in eyes.values() {
            for (k, &l) in eye_counts.iter_mut().zip(labels.iter()) {
                *k += usize::from(l);
            }
        }
        let patients: HashSet<&str> = self.records.iter().map(|r| r.patient_id.as_str()).collect();
        DatasetSummary {
            class_names: self.class_names.clone(),
            patients: patients.len(),
            eyes: eyes.len(),
            eye_counts,
            image_counts: images,
            image_totals: totals,
        }
    }
}

/// Per-class counts laid out like a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub class_names: Vec<String>,
    pub patients: usize,
    pub eyes: usize,
    pub eye_counts: Vec<usize>,
    pub image_counts: ModalityPair<Vec<usize>>,
    pub image_totals: ModalityPair<usize>,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let row = |f: &mut std::fmt::Formatter<'_>, label: &str, counts: &[usize], total: usize| {
            write!(f, "{label:<15}")?;
            for c in counts {
                write!(f, " {c:>8}")?;
            }
            writeln!(f, " {total:>8}")
        };
        write!(f, "{:<15}", "Category")?;
        for name in &self.class_names {
            write!(f, " {:>8}", truncate(name, 8))?;
        }
        writeln!(f, " {:>8}", "Total")?;
        row(f, "Eyes", &self.eye_counts, self.eyes)?;
        row(
            f,
            "Fundus Images",
            &self.image_counts.fundus,
            self.image_totals.fundus,
        )?;
        row(
            f,
            "OCT Images",
            &self.image_counts.oct,
            self.image_totals.oct,
        )?;
        write!(f, "({} patients)", self.patients)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
