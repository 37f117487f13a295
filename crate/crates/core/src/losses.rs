//! The student objective `L_CLS + α·L_CPM + β·L_CSA`.
//!
//! *Class prototype matching* (CPM) compares, class by class, the
//! temperature softmax (over feature dimensions) of the teacher's mean
//! feature vector with that of the student's mean *projected* feature
//! vector, using `KL(teacher ‖ student)`.
//!
//! *Class similarity alignment* (CSA) builds, for each class `c`, the mean
//! logit vector `q^c` over the batch samples labelled `c`. Row `c` of the
//! similarity matrix holds `cos(q^c, q^c')` for every eligible `c'`; its
//! temperature softmax is compared between teacher and student with KL.
//!
//! Both distillation losses average their per-class KL terms over the
//! classes eligible in the current batch, and treat teacher quantities as
//! constants.

use serde::{Deserialize, Serialize};

use crate::error::{FddmError, Result};
use crate::model::{self, ModelGrads, ModelParams};
use crate::numeric::{
    bce_with_logits, cosine_sim, cosine_sim_grad, kl_div, masked_class_mean,
    masked_class_mean_backward, norm, softmax_kl_grad, softmax_tau, ClassMask, Matrix, NORM_EPS,
};

/// Per-class prototype vectors `e^c` (rows) and which classes had members.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Matrix,
    pub present: Vec<bool>,
}

/// Row `c` is the mean logit vector over samples positive for class `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLogitProfile {
    pub rows: Matrix,
    pub present: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 2.0,
            beta: 1.0,
            tau: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(FddmError::Parameter(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(FddmError::Parameter(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(FddmError::Parameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Why a distillation term contributed nothing this batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// No class present on both sides (CPM).
    NoOverlap,
    /// Fewer than two eligible classes (CSA).
    InsufficientClasses,
    /// The student has no projector and the term's weight is zero.
    Disabled,
}

/// Value of one distillation term and its gradient with respect to the
/// student quantity it was computed from (prototypes or profile rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTerm {
    pub value: f64,
    pub grad: Matrix,
    /// Classes that contributed a KL term.
    pub included: Vec<usize>,
    pub skipped: Option<SkipReason>,
    /// Classes dropped because a logit-profile row had zero norm.
    pub dropped_zero_norm: usize,
}

impl DistillTerm {
    fn empty(rows: usize, cols: usize, reason: SkipReason, dropped_zero_norm: usize) -> Self {
        DistillTerm {
            value: 0.0,
            grad: Matrix::zeros(rows, cols),
            included: Vec::new(),
            skipped: Some(reason),
            dropped_zero_norm,
        }
    }
}

/// Class prototypes: masked class means of `features`, after the
/// projector when one is given (student side).
pub fn build_prototypes(
    features: &Matrix,
    labels: &ClassMask,
    projector: Option<&ModelParams>,
) -> Result<PrototypeSet> {
    let means = match projector {
        Some(student) => {
            let projected = model::project(student, features)?;
            masked_class_mean(&projected.output, labels)?
        }
        None => masked_class_mean(features, labels)?,
    };
    Ok(PrototypeSet {
        prototypes: means.means,
        present: means.present,
    })
}

pub fn build_class_logit_profile(logits: &Matrix, labels: &ClassMask) -> Result<ClassLogitProfile> {
    if logits.cols() != labels.num_classes() {
        return Err(FddmError::Shape(format!(
            "{} logit columns for {} classes",
            logits.cols(),
            labels.num_classes()
        )));
    }
    let means = masked_class_mean(logits, labels)?;
    Ok(ClassLogitProfile {
        rows: means.means,
        present: means.present,
    })
}

/// Class prototype matching loss; gradient is with respect to the student
/// prototype rows.
pub fn loss_cpm(teacher: &PrototypeSet, student: &PrototypeSet, tau: f64) -> Result<DistillTerm> {
    if teacher.prototypes.shape() != student.prototypes.shape() {
        return Err(FddmError::Shape(format!(
            "teacher prototypes {:?} vs student prototypes {:?}",
            teacher.prototypes.shape(),
            student.prototypes.shape()
        )));
    }
    let (c_count, dim) = student.prototypes.shape();
    let included: Vec<usize> = (0..c_count)
        .filter(|&c| teacher.present[c] && student.present[c])
        .collect();
    if included.is_empty() {
        return Ok(DistillTerm::empty(c_count, dim, SkipReason::NoOverlap, 0));
    }

    let scale = 1.0 / included.len() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(c_count, dim);
    for &c in &included {
        let target = softmax_tau(teacher.prototypes.row(c), tau)?;
        let q = softmax_tau(student.prototypes.row(c), tau)?;
        value += kl_div(&target, &q)?;
        for (g, d) in grad
            .row_mut(c)
            .iter_mut()
            .zip(softmax_kl_grad(&target, &q, tau))
        {
            *g = scale * d;
        }
    }
    Ok(DistillTerm {
        value: value * scale,
        grad,
        included,
        skipped: None,
        dropped_zero_norm: 0,
    })
}

/// Class similarity alignment loss; gradient is with respect to the student
/// profile rows.
pub fn loss_csa(
    teacher: &ClassLogitProfile,
    student: &ClassLogitProfile,
    tau: f64,
) -> Result<DistillTerm> {
    if teacher.rows.shape() != student.rows.shape() {
        return Err(FddmError::Shape(format!(
            "teacher profile {:?} vs student profile {:?}",
            teacher.rows.shape(),
            student.rows.shape()
        )));
    }
    let (c_count, width) = student.rows.shape();
    let mut dropped = 0;
    let mut eligible = Vec::new();
    for c in 0..c_count {
        if !(teacher.present[c] && student.present[c]) {
            continue;
        }
        if norm(teacher.rows.row(c)) > NORM_EPS && norm(student.rows.row(c)) > NORM_EPS {
            eligible.push(c);
        } else {
            dropped += 1;
        }
    }
    if eligible.len() < 2 {
        return Ok(DistillTerm::empty(
            c_count,
            width,
            SkipReason::InsufficientClasses,
            dropped,
        ));
    }

    let n = eligible.len();
    let scale = 1.0 / n as f64;
    let sim_row = |rows: &Matrix, c: usize| -> Result<Vec<f64>> {
        eligible
            .iter()
            .map(|&d| cosine_sim(rows.row(c), rows.row(d)))
            .collect()
    };

    let mut value = 0.0;
    let mut grad = Matrix::zeros(c_count, width);
    for &c in &eligible {
        let target = softmax_tau(&sim_row(&teacher.rows, c)?, tau)?;
        let q = softmax_tau(&sim_row(&student.rows, c)?, tau)?;
        value += kl_div(&target, &q)?;
        // d loss / d sim(c, d), then through the cosine into both rows
        let d_sim = softmax_kl_grad(&target, &q, tau);
        for (k, &d) in eligible.iter().enumerate() {
            if d == c {
                // cos(u, u) is constant
                continue;
            }
            let w = scale * d_sim[k];
            let (du, dv) = cosine_sim_grad(student.rows.row(c), student.rows.row(d))?;
            for (g, x) in grad.row_mut(c).iter_mut().zip(du) {
                *g += w * x;
            }
            for (g, x) in grad.row_mut(d).iter_mut().zip(dv) {
                *g += w * x;
            }
        }
    }
    Ok(DistillTerm {
        value: value * scale,
        grad,
        included: eligible,
        skipped: None,
        dropped_zero_norm: dropped,
    })
}

/// A scalar loss with its gradient over student parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grads: ModelGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_cpm: f64,
    pub l_csa: f64,
    pub l_total: f64,
    pub weights: LossWeights,
    pub cls_grads: ModelGrads,
    pub cpm_grads: ModelGrads,
    pub csa_grads: ModelGrads,
    pub total_grads: ModelGrads,
    pub cpm_skip: Option<SkipReason>,
    pub csa_skip: Option<SkipReason>,
    pub csa_dropped_zero_norm: usize,
}

/// Weighted combination. Terms with zero weight are left out of the total
/// gradient entirely rather than added as zeros.
pub fn loss_total(
    cls: LossTerm,
    cpm: LossTerm,
    csa: LossTerm,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    let mut total_grads = cls.grads.clone();
    if w.alpha != 0.0 {
        total_grads.add_scaled(&cpm.grads, w.alpha)?;
    }
    if w.beta != 0.0 {
        total_grads.add_scaled(&csa.grads, w.beta)?;
    }
    Ok(LossBreakdown {
        l_cls: cls.value,
        l_cpm: cpm.value,
        l_csa: csa.value,
        l_total: cls.value + w.alpha * cpm.value + w.beta * csa.value,
        weights: *w,
        cls_grads: cls.grads,
        cpm_grads: cpm.grads,
        csa_grads: csa.grads,
        total_grads,
        cpm_skip: None,
        csa_skip: None,
        csa_dropped_zero_norm: 0,
    })
}

/// Teacher-side quantities for one fundus batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets {
    pub prototypes: PrototypeSet,
    pub profile: ClassLogitProfile,
}

/// Runs the (frozen) teacher on a batch and summarizes it per class.
pub fn teacher_targets(
    teacher: &ModelParams,
    x: &Matrix,
    labels: &ClassMask,
) -> Result<TeacherTargets> {
    let out = model::forward(teacher, x)?;
    Ok(TeacherTargets {
        prototypes: build_prototypes(&out.features, labels, None)?,
        profile: build_class_logit_profile(&out.logits, labels)?,
    })
}

/// Evaluates the full student objective on one OCT batch against teacher
/// targets from an (unpaired) fundus batch, with parameter gradients for
/// every component.
pub fn student_objective(
    student: &ModelParams,
    x: &Matrix,
    labels: &ClassMask,
    targets: &TeacherTargets,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    if labels.num_classes() != student.config.num_classes {
        return Err(FddmError::Shape(format!(
            "{} label columns for a {}-class model",
            labels.num_classes(),
            student.config.num_classes
        )));
    }
    let fw = model::forward(student, x)?;
    let (b, c) = fw.logits.shape();

    let (l_cls, grad_logits) = bce_with_logits(&fw.logits, labels)?;
    let cls = LossTerm {
        value: l_cls,
        grads: model::backward(student, &fw.cache, &grad_logits, None)?,
    };

    let (cpm, cpm_skip) = if student.projector.is_some() {
        let pass = model::project(student, &fw.features)?;
        let means = masked_class_mean(&pass.output, labels)?;
        let protos = PrototypeSet {
            prototypes: means.means,
            present: means.present,
        };
        let term = loss_cpm(&targets.prototypes, &protos, w.tau)?;
        let grad_projected = masked_class_mean_backward(&term.grad, labels)?;
        let (proj_grads, grad_features) = model::project_backward(student, &pass, &grad_projected)?;
        let mut grads = model::backward(
            student,
            &fw.cache,
            &Matrix::zeros(b, c),
            Some(&grad_features),
        )?;
        grads.projector = Some(proj_grads);
        (
            LossTerm {
                value: term.value,
                grads,
            },
            term.skipped,
        )
    } else if w.alpha == 0.0 {
        (
            LossTerm {
                value: 0.0,
                grads: student.zero_grads(),
            },
            Some(SkipReason::Disabled),
        )
    } else {
        return Err(FddmError::Capability(
            "class prototype matching needs a student with a projector".into(),
        ));
    };

    let profile = build_class_logit_profile(&fw.logits, labels)?;
    let term = loss_csa(&targets.profile, &profile, w.tau)?;
    let grad_logits = masked_class_mean_backward(&term.grad, labels)?;
    let csa = LossTerm {
        value: term.value,
        grads: model::backward(student, &fw.cache, &grad_logits, None)?,
    };
    let (csa_skip, dropped) = (term.skipped, term.dropped_zero_norm);

    let mut breakdown = loss_total(cls, cpm, csa, w)?;
    breakdown.cpm_skip = cpm_skip;
    breakdown.csa_skip = csa_skip;
    breakdown.csa_dropped_zero_norm = dropped;
    Ok(breakdown)
}
