//! Finite-difference check of L_CLS, L_CPM, L_CSA and L_OCT against every
//! student parameter, then the same check with a deliberately broken
//! gradient.

use fddm::gradsuite::{gradcheck_suite, GradSuiteRow, LossKind};

fn print(rows: &[GradSuiteRow]) {
    for r in rows {
        println!(
            "{:<6} max rel err {:.2e} {}",
            r.loss.name(),
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
}

pub fn run_example(instances: usize) -> fddm::Result<(Vec<GradSuiteRow>, Vec<GradSuiteRow>)> {
    let good = gradcheck_suite(0, instances, None)?;
    print(&good);
    println!("-- with a corrupted L_CSA gradient:");
    let bad = gradcheck_suite(0, instances, Some(LossKind::Csa))?;
    print(&bad);
    Ok((good, bad))
}

#[allow(dead_code)]
fn main() -> fddm::Result<()> {
    run_example(20)?;
    Ok(())
}
