//! Teacher pretraining, single-modal baselines and distilled students.
//!
//! Every run is sequential and a pure function of its inputs and seeds.
//! The OCT batch order depends only on `data_seed`, so a student and a
//! baseline sharing seeds see the same OCT batches in the same order.
//! The fundus stream feeding the teacher during student training is a
//! separate shuffle that reshuffles whenever it runs out.

mod ablation;
mod log;

pub use ablation::{
    ablation_cells, run_ablation, run_ablation_with_teacher, AblationCell, AblationResult,
    AblationRow,
};
pub use log::{EpochSummary, EvalSummary, LogLine, LogTotals, Role, StepRecord, TrainLog};

use serde::{Deserialize, Serialize};

use crate::data::{Batch, BatchStream, DatasetManifest, Modality};
use crate::error::{FddmError, Result};
use crate::eval::evaluate;
use crate::losses::{student_objective, teacher_targets, LossWeights};
use crate::model::{
    backward, forward, init_params, sgd_step, Activation, BackboneConfig, Checkpoint, ModelGrads,
    ModelParams, OptimizerState,
};
use crate::numeric::bce_with_logits;
use crate::seeds::SeedLineage;

/// Share of steps without any distillation signal above which a student
/// run records a warning.
pub const NO_DISTILL_WARN_FRACTION: f64 = 0.9;

/// Layer sizes of a backbone; input and class counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden_dims: vec![32],
            feature_dim: 16,
            activation: Activation::Tanh,
        }
    }
}

impl ArchConfig {
    pub fn backbone(&self, input_dim: usize, num_classes: usize) -> BackboneConfig {
        BackboneConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
            num_classes,
            activation: self.activation,
            projector_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub init_seed: u64,
    pub data_seed: u64,
    pub teacher: ArchConfig,
    pub student: ArchConfig,
    /// Evaluate every this many epochs when evaluation data is given; the
    /// last epoch is always evaluated. 0 evaluates only the last epoch.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            epochs: 100,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            tau: w.tau,
            alpha: w.alpha,
            beta: w.beta,
            init_seed: 0,
            data_seed: 0,
            teacher: ArchConfig::default(),
            student: ArchConfig::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(FddmError::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(FddmError::config("batch_size", "must be positive"));
        }
        self.weights().validate().map_err(|e| match e {
            FddmError::Parameter(m) => FddmError::config("alpha/beta/tau", m),
            other => other,
        })?;
        // optimizer hyperparameters are checked by OptimizerState::new
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
        }
    }

    fn lineage(&self, teacher: Option<&SeedLineage>) -> SeedLineage {
        SeedLineage {
            init_seed: self.init_seed,
            data_seed: self.data_seed,
            teacher: teacher.map(|t| Box::new(t.clone())),
        }
    }
}

/// Final parameters (with optimizer state) and the run's log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn params(&self) -> &ModelParams {
        &self.checkpoint.params
    }
}

/// What one optimization step produced.
struct StepResult {
    record: StepRecord,
    grads: ModelGrads,
    /// True when no distillation term contributed.
    no_distill: bool,
}

fn input_dim_of(m: &DatasetManifest, modality: Modality) -> Result<usize> {
    m.records_of(modality)
        .next()
        .map(|r| r.features.len())
        .ok_or_else(|| FddmError::Data(format!("no {modality} records to train on")))
}

/// The loop shared by all roles. `step_fn` computes losses and gradients
/// for one batch of `modality`.
fn run_loop(
    params: &mut ModelParams,
    train: &DatasetManifest,
    modality: Modality,
    eval: Option<&DatasetManifest>,
    cfg: &TrainConfig,
    role: Role,
    mut step_fn: impl FnMut(&ModelParams, &Batch, usize) -> Result<StepResult>,
) -> Result<(OptimizerState, TrainLog)> {
    let mut state = OptimizerState::new(params, cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut stream = BatchStream::new(train, modality, cfg.batch_size, cfg.data_seed)?;
    let per_epoch = stream.batches_per_epoch();
    let mut log = TrainLog::new(role);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let first = log.steps.len();
        for _ in 0..per_epoch {
            let batch = stream.next().expect("batch streams are endless");
            debug_assert_eq!(batch.epoch, epoch);
            let r = step_fn(params, &batch, step)?;
            if !r.record.l_total.is_finite() {
                return Err(FddmError::Training {
                    step,
                    message: format!("loss is {}", r.record.l_total),
                });
            }
            sgd_step(params, &r.grads, &mut state)?;
            log.push_step(r.record, r.no_distill);
            step += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let summary = match eval {
            Some(test) if last || due => {
                let modality = match role {
                    Role::Teacher => Modality::Fundus,
                    Role::Baseline | Role::Student => Modality::Oct,
                };
                Some(EvalSummary::from(&evaluate(params, test, modality)?))
            }
            _ => None,
        };
        log.close_epoch(epoch, first, summary);
    }
    log.finish();
    Ok((state, log))
}

/// Plain BCE step on one batch.
fn cls_step(params: &ModelParams, batch: &Batch, step: usize, epoch: usize) -> Result<StepResult> {
    let fw = forward(params, &batch.features)?;
    let (l_cls, grad_logits) = bce_with_logits(&fw.logits, &batch.labels)?;
    let grads = backward(params, &fw.cache, &grad_logits, None)?;
    Ok(StepResult {
        record: StepRecord {
            step,
            epoch,
            l_cls,
            l_cpm: 0.0,
            l_csa: 0.0,
            l_total: l_cls,
            cpm_skip: None,
            csa_skip: None,
            csa_dropped_zero_norm: 0,
            records: batch.record_ids.clone(),
            teacher_records: None,
        },
        grads,
        no_distill: true,
    })
}

/// Trains the teacher on the fundus records of `train` with `L_CLS` only.
pub fn train_teacher(
    train: &DatasetManifest,
    eval: Option<&DatasetManifest>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let input_dim = input_dim_of(train, Modality::Fundus)?;
    let mut params = init_params(
        &cfg.teacher.backbone(input_dim, train.num_classes),
        cfg.init_seed,
    )?;
    let (state, log) = run_loop(
        &mut params,
        train,
        Modality::Fundus,
        eval,
        cfg,
        Role::Teacher,
        |p, b, s| cls_step(p, b, s, b.epoch),
    )?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(params, Some(state), cfg.lineage(None)),
        log,
    })
}

/// Single-modal OCT model trained with `L_CLS` only, using the student's
/// architecture and seeds.
pub fn train_baseline(
    train: &DatasetManifest,
    eval: Option<&DatasetManifest>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let input_dim = input_dim_of(train, Modality::Oct)?;
    let mut params = init_params(
        &cfg.student.backbone(input_dim, train.num_classes),
        cfg.init_seed,
    )?;
    let (state, log) = run_loop(
        &mut params,
        train,
        Modality::Oct,
        eval,
        cfg,
        Role::Baseline,
        |p, b, s| cls_step(p, b, s, b.epoch),
    )?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(params, Some(state), cfg.lineage(None)),
        log,
    })
}

/// Trains a student on the OCT records of `oct_train` with the full
/// objective against a frozen `teacher` fed from the fundus records of
/// `fundus_train`.
///
/// Each step draws one OCT batch and, independently, one fundus batch. The
/// teacher is only read. The student carries a projector from its feature
/// space to the teacher's.
pub fn train_student(
    oct_train: &DatasetManifest,
    fundus_train: &DatasetManifest,
    teacher: &Checkpoint,
    eval: Option<&DatasetManifest>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let t = &teacher.params;
    let c = oct_train.num_classes;
    if t.config.num_classes != c || fundus_train.num_classes != c {
        return Err(FddmError::config(
            "num_classes",
            format!(
                "teacher has {}, fundus data {}, OCT data {} classes",
                t.config.num_classes, fundus_train.num_classes, c
            ),
        ));
    }
    let fundus_dim = input_dim_of(fundus_train, Modality::Fundus)?;
    if fundus_dim != t.config.input_dim {
        return Err(FddmError::config(
            "input_dim",
            format!(
                "fundus features have {fundus_dim} dims, teacher expects {}",
                t.config.input_dim
            ),
        ));
    }
    let input_dim = input_dim_of(oct_train, Modality::Oct)?;
    let backbone = cfg
        .student
        .backbone(input_dim, c)
        .with_projector(t.config.feature_dim);
    let mut params = init_params(&backbone, cfg.init_seed)?;
    let mut fundus = BatchStream::new(
        fundus_train,
        Modality::Fundus,
        cfg.batch_size,
        cfg.data_seed,
    )?;
    let w = cfg.weights();

    let (state, mut log) = run_loop(
        &mut params,
        oct_train,
        Modality::Oct,
        eval,
        cfg,
        Role::Student,
        |p, b, step| {
            let fb = fundus.next().expect("batch streams are endless");
            let targets = teacher_targets(t, &fb.features, &fb.labels)?;
            let out = student_objective(p, &b.features, &b.labels, &targets, &w)?;
            let cpm_live = w.alpha > 0.0 && out.cpm_skip.is_none();
            let csa_live = w.beta > 0.0 && out.csa_skip.is_none();
            Ok(StepResult {
                record: StepRecord {
                    step,
                    epoch: b.epoch,
                    l_cls: out.l_cls,
                    l_cpm: out.l_cpm,
                    l_csa: out.l_csa,
                    l_total: out.l_total,
                    cpm_skip: out.cpm_skip,
                    csa_skip: out.csa_skip,
                    csa_dropped_zero_norm: out.csa_dropped_zero_norm,
                    records: b.record_ids.clone(),
                    teacher_records: Some(fb.record_ids),
                },
                grads: out.total_grads,
                no_distill: !(cpm_live || csa_live),
            })
        },
    )?;

    let distilling = w.alpha > 0.0 || w.beta > 0.0;
    let total = log.steps.len();
    if distilling
        && total > 0
        && log.totals.no_distill_steps as f64 > NO_DISTILL_WARN_FRACTION * total as f64
    {
        log.warnings.push(format!(
            "{} of {total} steps had no distillation signal; classes rarely overlap between batches",
            log.totals.no_distill_steps
        ));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(params, Some(state), cfg.lineage(Some(&teacher.seeds))),
        log,
    })
}
