//! Trains a fundus teacher, then an OCT student with the full objective
//! and a plain OCT baseline, and compares them on the test split.

use fddm::data::{generate_synthetic, split_by_patient, GeneratorConfig, Modality};
use fddm::eval::{evaluate, EvalReport};
use fddm::training::{train_baseline, train_student, train_teacher, TrainConfig};

pub fn run_example(epochs: usize) -> fddm::Result<(EvalReport, EvalReport)> {
    let data = generate_synthetic(&GeneratorConfig::default())?;
    let (train, test) = split_by_patient(&data, 0.2, 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };

    let teacher = train_teacher(&train, Some(&test), &cfg)?;
    if let Some(e) = teacher.log.final_eval() {
        println!("teacher (fundus) test MAP {:.4}", e.map.unwrap_or(f64::NAN));
    }
    let student = train_student(&train, &train, &teacher.checkpoint, None, &cfg)?;
    let baseline = train_baseline(&train, None, &cfg)?;
    let t = &student.log.totals;
    println!(
        "student: {} steps, CPM skipped {}, CSA skipped {}",
        t.steps, t.cpm_skipped_steps, t.csa_skipped_steps
    );

    let s = evaluate(student.params(), &test, Modality::Oct)?;
    let b = evaluate(baseline.params(), &test, Modality::Oct)?;
    for (name, r) in [("baseline", &b), ("student", &s)] {
        println!(
            "{name:<9} MAP {:.4}  majority {:.4}  minority {:.4}",
            r.overall.map.unwrap_or(f64::NAN),
            r.majority_map.unwrap_or(f64::NAN),
            r.minority_map.unwrap_or(f64::NAN)
        );
    }
    Ok((s, b))
}

#[allow(dead_code)]
fn main() -> fddm::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(TrainConfig::default().epochs);
    run_example(epochs)?;
    Ok(())
}
