use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, ImageRecord, Modality};
use crate::error::{FddmError, Result};
use crate::numeric::{ClassMask, Matrix};
use crate::seeds::{rng_for, Stream};

#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: ClassMask,
    pub record_ids: Vec<String>,
    pub eye_ids: Vec<String>,
    pub epoch: usize,
    /// Position of this batch within its epoch.
    pub index: usize,
}

/// Endless stream of full batches from one modality.
///
/// Every epoch reshuffles the records with the stream's own RNG; a trailing
/// partial batch is dropped. Streams for different modalities never share
/// state, so fundus and OCT batches are drawn independently.
#[derive(Debug)]
pub struct BatchStream<'a> {
    records: Vec<&'a ImageRecord>,
    num_classes: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
    cursor: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        manifest: &'a DatasetManifest,
        modality: Modality,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(FddmError::config("batch_size", "must be positive"));
        }
        let records: Vec<&ImageRecord> = manifest.records_of(modality).collect();
        if records.is_empty() {
            return Err(FddmError::Data(format!("no {modality} records to batch")));
        }
        if records.len() < batch_size {
            return Err(FddmError::Data(format!(
                "{} {modality} records cannot fill a batch of {batch_size}",
                records.len()
            )));
        }
        let stream = match modality {
            Modality::Fundus => Stream::FundusBatches,
            Modality::Oct => Stream::OctBatches,
        };
        let mut s = BatchStream {
            records,
            num_classes: manifest.num_classes,
            batch_size,
            rng: rng_for(seed, stream),
            order: Vec::new(),
            epoch: 0,
            cursor: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.records.len() / self.batch_size
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.records.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor + self.batch_size > self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let picked: Vec<&ImageRecord> = self.order[self.cursor..self.cursor + self.batch_size]
            .iter()
            .map(|&i| self.records[i])
            .collect();
        let index = self.cursor / self.batch_size;
        self.cursor += self.batch_size;
        let (features, labels) =
            DatasetManifest::matrices(&picked, self.num_classes).expect("manifest is validated");
        Some(Batch {
            features,
            labels,
            record_ids: picked.iter().map(|r| r.record_id.clone()).collect(),
            eye_ids: picked.iter().map(|r| r.eye_id.clone()).collect(),
            epoch: self.epoch,
            index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GeneratorConfig};
    use std::collections::HashSet;

    fn manifest_with(oct_records: usize) -> DatasetManifest {
        generate_synthetic(&GeneratorConfig {
            num_patients: oct_records,
            eyes_per_patient: 1,
            images_per_eye_per_modality: 1,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn sixteen_records_two_disjoint_batches() {
        let m = manifest_with(16);
        let mut s = BatchStream::new(&m, Modality::Oct, 8, 0).unwrap();
        assert_eq!(s.batches_per_epoch(), 2);
        let a = s.next().unwrap();
        let b = s.next().unwrap();
        assert_eq!((a.epoch, a.index, b.epoch, b.index), (0, 0, 0, 1));
        let ids: HashSet<_> = a.record_ids.iter().chain(&b.record_ids).collect();
        assert_eq!(ids.len(), 16);
        assert!(a.record_ids.iter().all(|id| id.contains("-oct-")));
        assert_eq!(a.features.shape(), (8, 16));
        assert_eq!(a.labels.num_classes(), 6);
        let c = s.next().unwrap();
        assert_eq!((c.epoch, c.index), (1, 0));
    }

    #[test]
    fn partial_batches_are_dropped() {
        let m = manifest_with(20);
        let s = BatchStream::new(&m, Modality::Fundus, 8, 0).unwrap();
        let first: Vec<_> = s.take(3).collect();
        assert_eq!(first[2].epoch, 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = manifest_with(30);
        let ids = |seed| {
            BatchStream::new(&m, Modality::Oct, 8, seed)
                .unwrap()
                .take(10)
                .flat_map(|b| b.record_ids)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(4), ids(4));
        assert_ne!(ids(4), ids(5));
    }

    #[test]
    fn errors() {
        let m = manifest_with(4);
        assert!(matches!(
            BatchStream::new(&m, Modality::Oct, 8, 0),
            Err(FddmError::Data(_))
        ));
        let fundus_only = m.of_modality(Modality::Fundus);
        assert!(matches!(
            BatchStream::new(&fundus_only, Modality::Oct, 2, 0),
            Err(FddmError::Data(_))
        ));
    }
}
