//! Finite-difference checks of every loss against every student
//! parameter on small random instances.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FddmError, Result};
use crate::losses::{
    student_objective, teacher_targets, LossBreakdown, LossWeights, TeacherTargets,
};
use crate::model::{init_params, Activation, BackboneConfig, ModelGrads, ModelParams};
use crate::numeric::{grad_check, ClassMask, Matrix};
use crate::seeds::{rng_for, Stream};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    Cls,
    Cpm,
    Csa,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Cls, LossKind::Cpm, LossKind::Csa, LossKind::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cls => "L_CLS",
            LossKind::Cpm => "L_CPM",
            LossKind::Csa => "L_CSA",
            LossKind::Total => "L_OCT",
        }
    }

    fn pick(self, b: &LossBreakdown) -> (f64, &ModelGrads) {
        match self {
            LossKind::Cls => (b.l_cls, &b.cls_grads),
            LossKind::Cpm => (b.l_cpm, &b.cpm_grads),
            LossKind::Csa => (b.l_csa, &b.csa_grads),
            LossKind::Total => (b.l_total, &b.total_grads),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = FddmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_start_matches("l_") {
            "cls" => Ok(LossKind::Cls),
            "cpm" => Ok(LossKind::Cpm),
            "csa" => Ok(LossKind::Csa),
            "oct" | "total" => Ok(LossKind::Total),
            _ => Err(FddmError::Parameter(format!("unknown loss `{s}`"))),
        }
    }
}

/// Sizes of the random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub batch: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub input_dim: usize,
    pub teacher_feature_dim: usize,
    pub hidden: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            batch: 4,
            classes: 3,
            feature_dim: 5,
            input_dim: 6,
            teacher_feature_dim: 4,
            hidden: 6,
        }
    }
}

/// A student with projector, a fixed OCT batch and fixed teacher targets.
#[derive(Debug, Clone)]
pub struct Instance {
    pub student: ModelParams,
    pub x: Matrix,
    pub labels: ClassMask,
    pub targets: TeacherTargets,
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Labels where every class has a member and at least one sample carries
/// two classes, so both distillation terms are active.
fn random_labels(rng: &mut impl Rng, batch: usize, classes: usize) -> ClassMask {
    let mut rows = vec![vec![0u8; classes]; batch];
    for (i, row) in rows.iter_mut().enumerate() {
        row[i % classes] = 1;
        for v in row.iter_mut() {
            if rng.random_bool(0.3) {
                *v = 1;
            }
        }
    }
    rows[0][1 % classes] = 1;
    ClassMask::from_labels(&rows, classes).expect("binary labels")
}

pub fn random_instance(seed: u64, shape: InstanceShape) -> Result<Instance> {
    let mut rng = rng_for(seed, Stream::Noise);
    let backbone = |feature_dim, projector_dim| BackboneConfig {
        input_dim: shape.input_dim,
        hidden_dims: vec![shape.hidden],
        feature_dim,
        num_classes: shape.classes,
        activation: Activation::Tanh,
        projector_dim,
    };
    let mut student = init_params(
        &backbone(shape.feature_dim, Some(shape.teacher_feature_dim)),
        seed,
    )?;
    // random biases so no coordinate sits at a symmetric point
    student.for_each_mut(|v, is_weight| {
        if !is_weight {
            *v = rng.random_range(-0.5..0.5);
        }
    });
    let teacher = init_params(
        &backbone(shape.teacher_feature_dim, None),
        seed.wrapping_add(1),
    )?;
    let fundus_x = random_matrix(&mut rng, shape.batch, shape.input_dim, 2.0);
    let fundus_labels = random_labels(&mut rng, shape.batch, shape.classes);
    let targets = teacher_targets(&teacher, &fundus_x, &fundus_labels)?;
    Ok(Instance {
        student,
        x: random_matrix(&mut rng, shape.batch, shape.input_dim, 2.0),
        labels: random_labels(&mut rng, shape.batch, shape.classes),
        targets,
    })
}

/// Worst relative error of one loss over all instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteRow {
    pub loss: LossKind,
    pub instances: usize,
    pub parameters: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Checks each loss on `instances` random instances derived from `seed`.
///
/// `corrupt` perturbs the analytic gradient of one loss; it exists to
/// show that the check can fail.
pub fn gradcheck_suite(
    seed: u64,
    instances: usize,
    corrupt: Option<LossKind>,
) -> Result<Vec<GradSuiteRow>> {
    let w = LossWeights::default();
    let mut rows: Vec<GradSuiteRow> = LossKind::ALL
        .iter()
        .map(|&loss| GradSuiteRow {
            loss,
            instances,
            parameters: 0,
            max_rel_error: 0.0,
            passed: true,
        })
        .collect();
    for k in 0..instances {
        let inst = random_instance(
            seed.wrapping_mul(1000).wrapping_add(k as u64),
            InstanceShape::default(),
        )?;
        let theta = inst.student.flatten();
        for row in &mut rows {
            let loss = row.loss;
            let f = |flat: &[f64]| {
                let mut p = inst.student.clone();
                p.assign_flat(flat).expect("same length");
                match student_objective(&p, &inst.x, &inst.labels, &inst.targets, &w) {
                    Ok(b) => {
                        let (value, grads) = loss.pick(&b);
                        let mut g = grads.flatten();
                        if corrupt == Some(loss) {
                            g.iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
                        }
                        (value, g)
                    }
                    Err(_) => (f64::NAN, vec![f64::NAN; flat.len()]),
                }
            };
            let rep = grad_check(f, &theta, GRADCHECK_EPS)?;
            row.parameters = theta.len();
            row.max_rel_error = row.max_rel_error.max(rep.max_rel_error);
            row.passed = row.max_rel_error < GRADCHECK_TOLERANCE;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_activate_both_terms() {
        let inst = random_instance(5, InstanceShape::default()).unwrap();
        let b = student_objective(
            &inst.student,
            &inst.x,
            &inst.labels,
            &inst.targets,
            &LossWeights::default(),
        )
        .unwrap();
        assert!(b.cpm_skip.is_none() && b.csa_skip.is_none());
        assert!(b.l_cpm > 0.0 && b.l_csa > 0.0);
    }

    #[test]
    fn suite_passes_and_corruption_fails() {
        let rows = gradcheck_suite(0, 2, None).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.loss.name()).collect::<Vec<_>>(),
            ["L_CLS", "L_CPM", "L_CSA", "L_OCT"]
        );
        assert!(rows.iter().all(|r| r.passed), "{rows:?}");
        let rows = gradcheck_suite(0, 1, Some(LossKind::Csa)).unwrap();
        let failed: Vec<_> = rows.iter().filter(|r| !r.passed).map(|r| r.loss).collect();
        assert_eq!(failed, vec![LossKind::Csa]);
    }

    #[test]
    fn loss_names_parse() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("nope".parse::<LossKind>().is_err());
    }
}
