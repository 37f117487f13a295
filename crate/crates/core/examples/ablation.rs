//! Runs the four-cell ablation (baseline, CPM only, CSA only, full) on the
//! default synthetic dataset for several seeds and prints mean MAP.

use fddm::data::{generate_synthetic, split_by_patient, GeneratorConfig};
use fddm::training::{run_ablation, AblationResult, TrainConfig};

pub fn run_example(seeds: &[u64], epochs: usize) -> fddm::Result<Vec<AblationResult>> {
    let mut results = Vec::new();
    for &seed in seeds {
        let data = generate_synthetic(&GeneratorConfig {
            seed,
            ..GeneratorConfig::default()
        })?;
        let (train, test) = split_by_patient(&data, 0.2, seed)?;
        let cfg = TrainConfig {
            epochs,
            init_seed: seed,
            data_seed: seed,
            ..TrainConfig::default()
        };
        let result = run_ablation(&train, &test, &cfg)?;
        println!("seed {seed}\n{result}");
        results.push(result);
    }
    let n = results.len() as f64;
    for (i, name) in ["baseline", "cpm_only", "csa_only", "full"]
        .iter()
        .enumerate()
    {
        let mean = results
            .iter()
            .map(|r| r.rows[i].report.overall.map.unwrap_or(0.0))
            .sum::<f64>()
            / n;
        println!("{name:<9} mean MAP {mean:.4}");
    }
    Ok(results)
}

#[allow(dead_code)]
fn main() -> fddm::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(TrainConfig::default().epochs);
    run_example(&[0, 1, 2, 3, 4], epochs)?;
    Ok(())
}
