//! Synthetic two-modality data.
//!
//! Eye-level labels come from a Gaussian copula: a latent `z ~ N(0, R)` is
//! drawn per eye and class `c` is positive when `z_c < Φ⁻¹(prevalence_c)`.
//! Each class has one signature direction per modality; both share a
//! common component, so the modalities carry overlapping but not identical
//! information. An image's features are the sum of the signatures of its
//! eye's positive classes, scaled by the modality's signal strength, plus
//! isotropic Gaussian noise.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{DatasetManifest, ImageRecord, Modality};
use crate::error::{FddmError, Result};
use crate::seeds::{rng_for, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityPair<T> {
    pub fundus: T,
    pub oct: T,
}

impl<T> ModalityPair<T> {
    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Fundus => &self.fundus,
            Modality::Oct => &self.oct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_patients: usize,
    pub eyes_per_patient: usize,
    pub images_per_eye_per_modality: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub class_prevalence: Vec<f64>,
    /// Symmetric PSD matrix with unit diagonal, row-major `C×C`.
    pub label_correlation: Vec<Vec<f64>>,
    pub modality_signal_strength: ModalityPair<f64>,
    /// Optional per-class multipliers on the signal strength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_signal_scale: Option<ModalityPair<Vec<f64>>>,
    /// Weight of the component shared by both modalities' signatures, in `[0, 1]`.
    pub shared_fraction: f64,
    pub noise_std: f64,
    /// Treat class 0 as "normal": positive exactly when no other class is.
    #[serde(default)]
    pub normal_class: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    /// Six correlated classes spanning frequent and rare labels, 200
    /// patients with two eyes and three images per eye and modality.
    fn default() -> Self {
        let c = 6;
        let mut corr = vec![vec![0.0; c]; c];
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let mut link = |a: usize, b: usize, r: f64| {
            corr[a][b] = r;
            corr[b][a] = r;
        };
        link(0, 3, 0.6);
        link(1, 4, 0.5);
        link(2, 5, 0.6);
        link(0, 1, 0.2);
        GeneratorConfig {
            num_patients: 200,
            eyes_per_patient: 2,
            images_per_eye_per_modality: 3,
            num_classes: c,
            input_dim: 16,
            class_prevalence: vec![0.35, 0.3, 0.25, 0.1, 0.08, 0.06],
            label_correlation: corr,
            modality_signal_strength: ModalityPair {
                fundus: 1.5,
                oct: 1.0,
            },
            class_signal_scale: None,
            shared_fraction: 0.5,
            noise_std: 1.0,
            normal_class: false,
            class_names: None,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        for (field, v) in [
            ("num_patients", self.num_patients),
            ("eyes_per_patient", self.eyes_per_patient),
            (
                "images_per_eye_per_modality",
                self.images_per_eye_per_modality,
            ),
            ("num_classes", self.num_classes),
            ("input_dim", self.input_dim),
        ] {
            if v == 0 {
                return Err(FddmError::config(field, "must be positive"));
            }
        }
        if self.class_prevalence.len() != c {
            return Err(FddmError::config(
                "class_prevalence",
                format!(
                    "has {} entries for {c} classes",
                    self.class_prevalence.len()
                ),
            ));
        }
        if let Some(p) = self
            .class_prevalence
            .iter()
            .find(|p| !(**p > 0.0 && **p < 1.0))
        {
            return Err(FddmError::config(
                "class_prevalence",
                format!("{p} is outside (0, 1)"),
            ));
        }
        if self.label_correlation.len() != c || self.label_correlation.iter().any(|r| r.len() != c)
        {
            return Err(FddmError::config(
                "label_correlation",
                format!("must be {c}x{c}"),
            ));
        }
        for i in 0..c {
            if self.label_correlation[i][i] != 1.0 {
                return Err(FddmError::config("label_correlation", "diagonal must be 1"));
            }
            for j in 0..c {
                let (a, b) = (self.label_correlation[i][j], self.label_correlation[j][i]);
                if !a.is_finite() || a != b {
                    return Err(FddmError::config(
                        "label_correlation",
                        "must be symmetric and finite",
                    ));
                }
            }
        }
        for (m, s) in [
            ("fundus", self.modality_signal_strength.fundus),
            ("oct", self.modality_signal_strength.oct),
        ] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(FddmError::config(
                    "modality_signal_strength",
                    format!("{m} strength {s} must be non-negative"),
                ));
            }
        }
        if let Some(scale) = &self.class_signal_scale {
            for v in [&scale.fundus, &scale.oct] {
                if v.len() != c || v.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err(FddmError::config(
                        "class_signal_scale",
                        format!("needs {c} non-negative entries per modality"),
                    ));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(FddmError::config("shared_fraction", "must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(FddmError::config("noise_std", "must be non-negative"));
        }
        if let Some(names) = &self.class_names {
            if names.len() != c {
                return Err(FddmError::config("class_names", format!("needs {c} names")));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.class_names.clone().unwrap_or_else(|| {
            (0..self.num_classes)
                .map(|i| {
                    if self.normal_class && i == 0 {
                        "normal".to_string()
                    } else {
                        format!("class{i}")
                    }
                })
                .collect()
        })
    }

    /// Stable fingerprint of the config, used as dataset provenance.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        // FNV-1a
        let hash = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
        });
        format!("synthetic:{hash:016x}")
    }

    /// Factor `L` with `L·Lᵀ = R`, via the symmetric eigendecomposition so
    /// that singular PSD matrices are accepted.
    fn correlation_factor(&self) -> Result<DMatrix<f64>> {
        let c = self.num_classes;
        let r = DMatrix::from_fn(c, c, |i, j| self.label_correlation[i][j]);
        let eig = SymmetricEigen::new(r);
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < -1e-9 {
            return Err(FddmError::config(
                "label_correlation",
                format!("not positive semidefinite (smallest eigenvalue {min:.3e})"),
            ));
        }
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
    }
}

fn unit_gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = crate::numeric::norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate_synthetic(config: &GeneratorConfig) -> Result<DatasetManifest> {
    config.validate()?;
    let c = config.num_classes;
    let d = config.input_dim;
    let factor = config.correlation_factor()?;
    let std_normal = Normal::standard();
    let thresholds: Vec<f64> = config
        .class_prevalence
        .iter()
        .map(|&p| std_normal.inverse_cdf(p))
        .collect();

    let mut sig_rng = rng_for(config.seed, Stream::Signatures);
    let (w_shared, w_own) = (
        config.shared_fraction.sqrt(),
        (1.0 - config.shared_fraction).sqrt(),
    );
    let mut signatures = ModalityPair {
        fundus: Vec::with_capacity(c),
        oct: Vec::with_capacity(c),
    };
    for _ in 0..c {
        let shared = unit_gaussian(d, &mut sig_rng);
        for sigs in [&mut signatures.fundus, &mut signatures.oct] {
            let own = unit_gaussian(d, &mut sig_rng);
            let mixed: Vec<f64> = shared
                .iter()
                .zip(&own)
                .map(|(s, o)| w_shared * s + w_own * o)
                .collect();
            let n = crate::numeric::norm(&mixed);
            sigs.push(mixed.into_iter().map(|x| x / n).collect::<Vec<f64>>());
        }
    }

    let mut label_rng = rng_for(config.seed, Stream::Labels);
    let mut noise_rng = rng_for(config.seed, Stream::Noise);
    let mut records = Vec::with_capacity(
        config.num_patients * config.eyes_per_patient * config.images_per_eye_per_modality * 2,
    );
    for p in 0..config.num_patients {
        let patient_id = format!("p{p:04}");
        for e in 0..config.eyes_per_patient {
            let eye_id = format!("{patient_id}-{}", eye_tag(e, config.eyes_per_patient));
            let eps: Vec<f64> = (0..c)
                .map(|_| StandardNormal.sample(&mut label_rng))
                .collect();
            let mut labels: Vec<u8> = (0..c)
                .map(|i| {
                    let z: f64 = (0..c).map(|k| factor[(i, k)] * eps[k]).sum();
                    u8::from(z < thresholds[i])
                })
                .collect();
            if config.normal_class {
                labels[0] = u8::from(labels[1..].iter().all(|&l| l == 0));
            }

            for m in Modality::ALL {
                let strength = *config.modality_signal_strength.get(m);
                let mut clean = vec![0.0; d];
                for (k, &l) in labels.iter().enumerate() {
                    if l == 1 {
                        let scale = config
                            .class_signal_scale
                            .as_ref()
                            .map_or(1.0, |s| s.get(m)[k]);
                        for (x, s) in clean.iter_mut().zip(&signatures.get(m)[k]) {
                            *x += strength * scale * s;
                        }
                    }
                }
                for i in 0..config.images_per_eye_per_modality {
                    let features = clean
                        .iter()
                        .map(|&x| {
                            let n: f64 = StandardNormal.sample(&mut noise_rng);
                            x + config.noise_std * n
                        })
                        .collect();
                    records.push(ImageRecord {
                        record_id: format!("{eye_id}-{}-{i}", m.as_str().to_ascii_lowercase()),
                        eye_id: eye_id.clone(),
                        patient_id: patient_id.clone(),
                        modality: m,
                        labels: labels.clone(),
                        features,
                    });
                }
            }
        }
    }
    DatasetManifest::new(records, c, config.class_names(), Some(config.fingerprint()))
}

fn eye_tag(e: usize, eyes: usize) -> String {
    match (eyes, e) {
        (2, 0) => "L".into(),
        (2, 1) => "R".into(),
        _ => format!("e{e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye_labels(m: &DatasetManifest) -> Vec<Vec<u8>> {
        let mut seen = std::collections::BTreeMap::new();
        for r in &m.records {
            seen.entry(r.eye_id.clone())
                .or_insert_with(|| r.labels.clone());
        }
        seen.into_values().collect()
    }

    fn small(c: usize) -> GeneratorConfig {
        let mut corr = vec![vec![0.0; c]; c];
        for (i, row) in corr.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        GeneratorConfig {
            num_patients: 1000,
            eyes_per_patient: 2,
            images_per_eye_per_modality: 1,
            num_classes: c,
            input_dim: 4,
            class_prevalence: vec![0.3; c],
            label_correlation: corr,
            seed: 5,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_deterministic() {
        let cfg = GeneratorConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200 * 2 * 3 * 2);
        let other = generate_synthetic(&GeneratorConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.records[0].features, other.records[0].features);
    }

    #[test]
    fn noiseless_single_class_images_coincide() {
        let cfg = GeneratorConfig {
            num_patients: 30,
            images_per_eye_per_modality: 3,
            num_classes: 1,
            class_prevalence: vec![0.5],
            label_correlation: vec![vec![1.0]],
            modality_signal_strength: ModalityPair {
                fundus: 1.0,
                oct: 1.0,
            },
            noise_std: 0.0,
            ..small(1)
        };
        let m = generate_synthetic(&cfg).unwrap();
        for modality in Modality::ALL {
            let pos: Vec<_> = m
                .records_of(modality)
                .filter(|r| r.labels[0] == 1)
                .collect();
            assert!(pos.len() > 3);
            assert!(pos.iter().all(|r| r.features == pos[0].features));
            let norm = crate::numeric::norm(&pos[0].features);
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_labels_are_uncorrelated_with_target_prevalence() {
        let m = generate_synthetic(&small(3)).unwrap();
        let eyes = eye_labels(&m);
        assert_eq!(eyes.len(), 2000);
        let n = eyes.len() as f64;
        let mean: Vec<f64> = (0..3)
            .map(|c| eyes.iter().map(|l| f64::from(l[c])).sum::<f64>() / n)
            .collect();
        for &p in &mean {
            assert!((p - 0.3).abs() <= 0.03, "prevalence {p}");
        }
        for a in 0..3 {
            for b in (a + 1)..3 {
                let cov = eyes
                    .iter()
                    .map(|l| (f64::from(l[a]) - mean[a]) * (f64::from(l[b]) - mean[b]))
                    .sum::<f64>()
                    / n;
                let r = cov / (mean[a] * (1.0 - mean[a]) * mean[b] * (1.0 - mean[b])).sqrt();
                assert!(r.abs() < 0.1, "corr({a},{b}) = {r}");
            }
        }
    }

    #[test]
    fn correlated_labels_co_occur() {
        let mut cfg = small(2);
        cfg.label_correlation = vec![vec![1.0, 0.8], vec![0.8, 1.0]];
        let eyes = eye_labels(&generate_synthetic(&cfg).unwrap());
        let both =
            eyes.iter().filter(|l| l[0] == 1 && l[1] == 1).count() as f64 / eyes.len() as f64;
        assert!(both > 0.3 * 0.3 + 0.05, "joint {both}");
    }

    #[test]
    fn rejects_invalid_correlation() {
        let mut cfg = small(3);
        cfg.label_correlation = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        let err = generate_synthetic(&cfg).unwrap_err();
        assert!(
            matches!(&err, FddmError::Config { field, .. } if field == "label_correlation"),
            "{err}"
        );

        cfg.label_correlation = vec![
            vec![1.0, 0.5, 0.0],
            vec![0.4, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert!(generate_synthetic(&cfg).is_err());

        // singular but PSD is accepted
        cfg.label_correlation = vec![
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let eyes = eye_labels(&generate_synthetic(&cfg).unwrap());
        assert!(eyes.iter().all(|l| l[0] == l[1]));
    }

    #[test]
    fn normal_class_complements_diseases() {
        let mut cfg = small(3);
        cfg.normal_class = true;
        let m = generate_synthetic(&cfg).unwrap();
        assert_eq!(m.class_names[0], "normal");
        assert!(m
            .records
            .iter()
            .all(|r| (r.labels[0] == 1) == (r.labels[1] == 0 && r.labels[2] == 0)));
    }
}
