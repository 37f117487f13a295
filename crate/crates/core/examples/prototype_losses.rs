//! Computes class prototypes, class-logit profiles and both distillation
//! losses by hand on two tiny batches.

use fddm::losses::{build_class_logit_profile, build_prototypes, loss_cpm, loss_csa};
use fddm::numeric::{ClassMask, Matrix};

pub fn run_example() -> fddm::Result<(f64, f64)> {
    // fundus batch: 3 images, 2 features, 3 classes
    let fundus_features = Matrix::from_rows(&[&[1.0, 3.0], &[3.0, 5.0], &[0.0, -1.0]])?;
    let fundus_labels = ClassMask::from_labels(&[[1u8, 0, 0], [1, 1, 0], [0, 0, 1]], 3)?;
    // OCT batch, already projected to the fundus feature width
    let oct_projected = Matrix::from_rows(&[&[0.5, 2.0], &[2.0, 1.0], &[-1.0, 0.0], &[0.2, 0.2]])?;
    let oct_labels = ClassMask::from_labels(&[[1u8, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1]], 3)?;

    let teacher = build_prototypes(&fundus_features, &fundus_labels, None)?;
    let student = build_prototypes(&oct_projected, &oct_labels, None)?;
    println!(
        "teacher prototypes {:?}",
        teacher.prototypes.row_iter().collect::<Vec<_>>()
    );
    let cpm = loss_cpm(&teacher, &student, 4.0)?;
    println!("L_CPM = {:.6} over classes {:?}", cpm.value, cpm.included);

    let fundus_logits =
        Matrix::from_rows(&[&[2.0, -1.0, 0.5], &[0.3, 1.5, -0.7], &[-1.2, 0.4, 2.2]])?;
    let oct_logits = Matrix::from_rows(&[
        &[1.0, 0.2, -0.3],
        &[0.1, 0.9, 0.4],
        &[-0.5, -0.6, 1.8],
        &[0.4, 0.1, 0.9],
    ])?;
    let qf = build_class_logit_profile(&fundus_logits, &fundus_labels)?;
    let qo = build_class_logit_profile(&oct_logits, &oct_labels)?;
    let csa = loss_csa(&qf, &qo, 4.0)?;
    println!("L_CSA = {:.6} over classes {:?}", csa.value, csa.included);
    Ok((cpm.value, csa.value))
}

#[allow(dead_code)]
fn main() -> fddm::Result<()> {
    run_example()?;
    Ok(())
}
