//! Seed derivation. Each consumer of randomness gets its own ChaCha stream
//! so that, for example, drawing more fundus batches never shifts the OCT
//! batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Labels = 2,
    Signatures = 3,
    Noise = 4,
    Split = 5,
    FundusBatches = 6,
    OctBatches = 7,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seeds a model descends from, carried in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub init_seed: u64,
    pub data_seed: u64,
    /// Lineage of the frozen teacher a student was distilled from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<Box<SeedLineage>>,
}
