//! Generates the default synthetic dataset, prints its class table, splits
//! it by patient and writes it to a temporary file and back.

use fddm::data::{
    generate_synthetic, load_dataset, save_dataset, split_by_patient, DatasetManifest,
    GeneratorConfig,
};

pub fn run_example(seed: u64) -> fddm::Result<(DatasetManifest, DatasetManifest)> {
    let cfg = GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    };
    let data = generate_synthetic(&cfg)?;
    println!("{}", data.summary());

    let (train, test) = split_by_patient(&data, 0.2, seed)?;
    println!(
        "train: {} records, test: {} records",
        train.len(),
        test.len()
    );

    let path = std::env::temp_dir().join(format!("fddm-synthetic-{seed}.jsonl"));
    save_dataset(&data, &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, data);
    println!("round-tripped through {}", path.display());
    let _ = std::fs::remove_file(&path);
    Ok((train, test))
}

#[allow(dead_code)]
fn main() -> fddm::Result<()> {
    run_example(0)?;
    Ok(())
}
