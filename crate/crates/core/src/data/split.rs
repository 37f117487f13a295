use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;

use super::DatasetManifest;
use crate::error::{FddmError, Result};
use crate::seeds::{rng_for, Stream};

/// Splits by patient so no patient lands in both halves.
///
/// Patients are shuffled with `seed` and moved into the test split one at
/// a time until the test share of eyes reaches `test_fraction`.
pub fn split_by_patient(
    manifest: &DatasetManifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(FddmError::Split(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    // first-appearance order keeps the shuffle independent of hashing
    let mut patients: Vec<&str> = Vec::new();
    let mut eyes: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for r in &manifest.records {
        let set = eyes.entry(&r.patient_id).or_insert_with(|| {
            patients.push(&r.patient_id);
            BTreeSet::new()
        });
        set.insert(&r.eye_id);
    }
    if patients.len() < 2 {
        return Err(FddmError::Split(format!(
            "need at least two patients, found {}",
            patients.len()
        )));
    }
    let total_eyes: usize = eyes.values().map(BTreeSet::len).sum();

    patients.shuffle(&mut rng_for(seed, Stream::Split));
    let mut test_patients = BTreeSet::new();
    let mut test_eyes = 0usize;
    for p in &patients {
        if test_eyes as f64 / total_eyes as f64 >= test_fraction {
            break;
        }
        test_eyes += eyes[p].len();
        test_patients.insert(*p);
    }
    if test_patients.len() == patients.len() {
        return Err(FddmError::Split(format!(
            "test fraction {test_fraction} leaves no training patients"
        )));
    }
    let test = manifest.filtered(|r| test_patients.contains(r.patient_id.as_str()));
    let train = manifest.filtered(|r| !test_patients.contains(r.patient_id.as_str()));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig};
    use std::collections::HashSet;

    fn patients(m: &DatasetManifest) -> HashSet<String> {
        m.records.iter().map(|r| r.patient_id.clone()).collect()
    }

    fn manifest(num_patients: usize, seed: u64) -> DatasetManifest {
        generate_synthetic(&GeneratorConfig {
            num_patients,
            images_per_eye_per_modality: 1,
            seed,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ten_patients_two_to_test() {
        let m = manifest(10, 0);
        let (train, test) = split_by_patient(&m, 0.2, 1).unwrap();
        assert_eq!(patients(&test).len(), 2);
        assert_eq!(patients(&train).len(), 8);
        assert_eq!(train.len() + test.len(), m.len());
    }

    #[test]
    fn disjoint_and_deterministic() {
        for seed in 0..100u64 {
            let m = manifest(3 + (seed as usize % 20), seed);
            let frac = 0.1 + (seed % 5) as f64 * 0.1;
            let (train, test) = split_by_patient(&m, frac, seed).unwrap();
            assert!(patients(&train).is_disjoint(&patients(&test)));
            assert!(!train.is_empty() && !test.is_empty());
            let (train2, test2) = split_by_patient(&m, frac, seed).unwrap();
            assert_eq!((train, test), (train2, test2));
        }
    }

    #[test]
    fn errors() {
        let one = manifest(1, 0);
        assert!(matches!(
            split_by_patient(&one, 0.2, 0),
            Err(FddmError::Split(_))
        ));
        let m = manifest(4, 0);
        assert!(split_by_patient(&m, 0.0, 0).is_err());
        assert!(split_by_patient(&m, 1.0, 0).is_err());
    }
}
