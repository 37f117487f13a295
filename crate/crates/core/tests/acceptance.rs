//! Acceptance suite: one check per criterion, each printing a PASS/FAIL
//! line. Exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fddm::data::{
    generate_synthetic, split_by_patient, BatchStream, DatasetManifest, GeneratorConfig, Modality,
};
use fddm::eval::{average_precision, ensemble_eye, roc_auc, EyeImages};
use fddm::gradsuite::{gradcheck_suite, random_instance, InstanceShape, GRADCHECK_TOLERANCE};
use fddm::losses::{
    loss_cpm, loss_csa, student_objective, teacher_targets, ClassLogitProfile, LossWeights,
    PrototypeSet,
};
use fddm::model::{init_params, Activation, BackboneConfig, Projector};
use fddm::numeric::{ClassMask, Matrix};
use fddm::training::{run_ablation, train_baseline, train_student, train_teacher, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn default_split(seed: u64) -> (DatasetManifest, DatasetManifest) {
    let data = generate_synthetic(&GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    })
    .expect("default generator config is valid");
    split_by_patient(&data, 0.2, seed).expect("200 patients split")
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let rows = gradcheck_suite(0, 20, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    for r in &rows {
        ensure(r.passed, || {
            format!("{} max rel err {:e}", r.loss, r.max_rel_error)
        })?;
    }
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "L_CLS/L_CPM/L_CSA/L_OCT on 20 instances, {} params each, worst rel err {worst:.2e} < {GRADCHECK_TOLERANCE:e}, {:.1}s",
        rows[0].parameters,
        elapsed.as_secs_f64()
    ))
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_scale: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    for _ in 0..50 {
        // (a) equal prototypes
        let p = PrototypeSet {
            prototypes: random_matrix(&mut rng, 3, 5),
            present: vec![true; 3],
        };
        let cpm = loss_cpm(&p, &p, 4.0).map_err(|e| e.to_string())?;
        ensure(cpm.value.abs() < 1e-15, || {
            format!("L_CPM of equal prototypes is {:e}", cpm.value)
        })?;

        // (b) equal profiles, then a uniform positive rescale of the student
        let t = ClassLogitProfile {
            rows: random_matrix(&mut rng, 3, 3),
            present: vec![true; 3],
        };
        let csa = loss_csa(&t, &t, 4.0).map_err(|e| e.to_string())?;
        ensure(csa.value.abs() < 1e-15, || {
            format!("L_CSA of equal profiles is {:e}", csa.value)
        })?;
        let s = ClassLogitProfile {
            rows: random_matrix(&mut rng, 3, 3),
            present: vec![true; 3],
        };
        let k = rng.random_range(0.01..100.0);
        let scaled = ClassLogitProfile {
            rows: s.rows.map(|v| v * k),
            present: s.present.clone(),
        };
        let a = loss_csa(&t, &s, 4.0).map_err(|e| e.to_string())?.value;
        let b = loss_csa(&t, &scaled, 4.0).map_err(|e| e.to_string())?.value;
        worst_scale = worst_scale.max((a - b).abs());
    }
    ensure(worst_scale < 1e-10, || {
        format!("L_CSA changed by {worst_scale:e} under rescaling")
    })?;

    // (a) again through the model: student = teacher plus identity projector
    let cfg = BackboneConfig {
        input_dim: 6,
        hidden_dims: vec![7],
        feature_dim: 5,
        num_classes: 3,
        activation: Activation::Tanh,
        projector_dim: None,
    };
    let teacher = init_params(&cfg, 3).unwrap();
    let mut student = teacher.clone();
    student.config.projector_dim = Some(5);
    student.projector = Some(Projector::identity(5));
    let x = random_matrix(&mut rng, 4, 6);
    let y = ClassMask::from_labels(&[[1u8, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1]], 3).unwrap();
    let targets = teacher_targets(&teacher, &x, &y).map_err(|e| e.to_string())?;
    let b = student_objective(&student, &x, &y, &targets, &LossWeights::default())
        .map_err(|e| e.to_string())?;
    ensure(b.l_cpm.abs() < 1e-15 && b.l_csa.abs() < 1e-15, || {
        format!(
            "self-distillation gave L_CPM {:e}, L_CSA {:e}",
            b.l_cpm, b.l_csa
        )
    })?;

    // (c) weighted total at the default weights
    for seed in 0..50 {
        let inst = random_instance(seed, InstanceShape::default()).map_err(|e| e.to_string())?;
        let b = student_objective(
            &inst.student,
            &inst.x,
            &inst.labels,
            &inst.targets,
            &LossWeights::default(),
        )
        .map_err(|e| e.to_string())?;
        worst_total = worst_total.max((b.l_total - (b.l_cls + 2.0 * b.l_cpm + b.l_csa)).abs());
    }
    ensure(worst_total < 1e-10, || {
        format!("L_OCT off by {worst_total:e}")
    })?;
    Ok(format!(
        "nullities exact, rescale drift {worst_scale:.1e}, L_OCT identity drift {worst_total:.1e}"
    ))
}

/// Precision at each positive, ranking by score then original index.
fn ap_rank_walk(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| truth[i]).collect();
    if positives.is_empty() {
        return None;
    }
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let sum: f64 = positives
        .iter()
        .map(|&i| {
            let rank = (0..scores.len()).filter(|&j| ahead(j, i)).count();
            let hits = positives.iter().filter(|&&j| ahead(j, i)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(sum / positives.len() as f64)
}

fn auc_pairs(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in (0..scores.len()).filter(|&i| truth[i]) {
        for j in (0..scores.len()).filter(|&j| !truth[j]) {
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn metric_oracles() -> Outcome {
    let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
    ensure(
        (ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15 && (ap - 0.83333).abs() < 5e-6,
        || format!("AP {ap}"),
    )?;
    let auc = roc_auc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).unwrap();
    ensure(auc == 0.75, || format!("AUC {auc}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut defined = 0;
    for k in 0..1000 {
        let n = rng.random_range(1..=50);
        // every other instance uses coarse scores so ties are common
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                if k % 2 == 0 {
                    (s * 10.0).floor() / 10.0
                } else {
                    s
                }
            })
            .collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        for (got, want) in [
            (
                average_precision(&scores, &truth),
                ap_rank_walk(&scores, &truth),
            ),
            (roc_auc(&scores, &truth), auc_pairs(&scores, &truth)),
        ] {
            match (got, want) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    defined += 1;
                }
                (None, None) => {}
                (a, b) => return Err(format!("definedness differs: {a:?} vs {b:?}")),
            }
        }
    }
    ensure(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!(
        "worked examples exact; {defined} AP/AUC values over 1000 instances, max |Δ| {worst:.1e}"
    ))
}

fn reduction_to_baseline() -> Outcome {
    let (train, _) = default_split(0);
    let cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..TrainConfig::default()
    };
    let teacher = train_teacher(
        &train,
        None,
        &TrainConfig {
            epochs: 1,
            ..cfg.clone()
        },
    )
    .map_err(|e| e.to_string())?
    .checkpoint;
    let mut steps = 0;
    for epochs in 1..=3 {
        let c = TrainConfig {
            epochs,
            ..cfg.clone()
        };
        let s = train_student(&train, &train, &teacher, None, &c).map_err(|e| e.to_string())?;
        let b = train_baseline(&train, None, &c).map_err(|e| e.to_string())?;
        ensure(s.params().backbone_eq(b.params()), || {
            format!("parameters differ after epoch {epochs}")
        })?;
        for (x, y) in s.log.steps.iter().zip(&b.log.steps) {
            ensure(
                x.l_cls.to_bits() == y.l_cls.to_bits() && x.records == y.records,
                || format!("step {} differs", x.step),
            )?;
        }
        steps = s.log.steps.len();
    }
    Ok(format!(
        "encoder and head bitwise equal after each of 3 epochs ({steps} steps)"
    ))
}

fn distillation_benefit() -> Outcome {
    let start = Instant::now();
    let mut maps = Vec::new();
    for seed in 0..5u64 {
        let (train, test) = default_split(seed);
        let cfg = TrainConfig {
            init_seed: seed,
            data_seed: seed,
            ..TrainConfig::default()
        };
        let r = run_ablation(&train, &test, &cfg).map_err(|e| e.to_string())?;
        let map = |name: &str| {
            r.row(name)
                .and_then(|row| row.report.overall.map)
                .unwrap_or(f64::NAN)
        };
        maps.push([
            map("baseline"),
            map("cpm_only"),
            map("csa_only"),
            map("full"),
        ]);
    }
    let elapsed = start.elapsed();
    let mean = |i: usize| maps.iter().map(|m| m[i]).sum::<f64>() / maps.len() as f64;
    let (base, cpm, csa, full) = (mean(0), mean(1), mean(2), mean(3));
    let summary = format!(
        "mean MAP over 5 seeds: baseline {base:.4}, cpm_only {cpm:.4}, csa_only {csa:.4}, full {full:.4}; {:.0}s",
        elapsed.as_secs_f64()
    );
    ensure(full >= base, || format!("full below baseline; {summary}"))?;
    ensure(full >= cpm.max(csa), || {
        format!("full below a single-term cell; {summary}")
    })?;
    ensure(elapsed < Duration::from_secs(600), || {
        format!("over budget; {summary}")
    })?;
    Ok(summary)
}

fn unpaired_contract() -> Outcome {
    let (train, _) = default_split(1);
    let cfg = TrainConfig {
        epochs: 2,
        init_seed: 1,
        data_seed: 1,
        ..TrainConfig::default()
    };
    let teacher = train_teacher(&train, None, &cfg)
        .map_err(|e| e.to_string())?
        .checkpoint;
    let out = train_student(&train, &train, &teacher, None, &cfg).map_err(|e| e.to_string())?;
    let eye_of: HashMap<&str, &str> = train
        .records
        .iter()
        .map(|r| (r.record_id.as_str(), r.eye_id.as_str()))
        .collect();
    let modality_of: HashMap<&str, Modality> = train
        .records
        .iter()
        .map(|r| (r.record_id.as_str(), r.modality))
        .collect();

    // each stream replays its own standalone shuffle
    let fundus_alone: Vec<Vec<String>> = BatchStream::new(&train, Modality::Fundus, 8, 1)
        .map_err(|e| e.to_string())?
        .take(out.log.steps.len())
        .map(|b| b.record_ids)
        .collect();
    let oct_alone: Vec<Vec<String>> = BatchStream::new(&train, Modality::Oct, 8, 1)
        .map_err(|e| e.to_string())?
        .take(out.log.steps.len())
        .map(|b| b.record_ids)
        .collect();
    let mut shared_eyes = 0usize;
    let mut identical_eye_sets = 0usize;
    for (k, s) in out.log.steps.iter().enumerate() {
        let fundus = s
            .teacher_records
            .as_ref()
            .ok_or("step without teacher batch")?;
        ensure(
            fundus == &fundus_alone[k] && s.records == oct_alone[k],
            || format!("step {k} deviates from its stream"),
        )?;
        ensure(
            fundus
                .iter()
                .all(|r| modality_of[r.as_str()] == Modality::Fundus)
                && s.records
                    .iter()
                    .all(|r| modality_of[r.as_str()] == Modality::Oct),
            || format!("step {k} mixes modalities"),
        )?;
        let mut a: Vec<&str> = fundus.iter().map(|r| eye_of[r.as_str()]).collect();
        let mut b: Vec<&str> = s.records.iter().map(|r| eye_of[r.as_str()]).collect();
        shared_eyes += a.iter().filter(|e| b.contains(e)).count();
        a.sort_unstable();
        b.sort_unstable();
        identical_eye_sets += usize::from(a == b);
    }
    let steps = out.log.steps.len();
    let per_step = shared_eyes as f64 / steps as f64;
    ensure(identical_eye_sets == 0, || {
        format!("{identical_eye_sets} steps pair the same eyes")
    })?;
    // independent draws share about 8·8/eyes ≈ 0.2 eyes per step; paired ones share 8
    ensure(per_step < 1.0, || {
        format!("{per_step:.3} shared eyes per step")
    })?;
    Ok(format!(
        "{steps} steps: both streams match standalone shuffles, {per_step:.3} shared eyes per step, no paired batch"
    ))
}

fn eye_ensemble() -> Outcome {
    let pos = [0.5, 0.73, 1.0];
    let neg = [0.0, 0.3, 0.499_999_999];
    let mut cases = 0;
    for n in 1..=4usize {
        for bits in 0..(1u32 << n) {
            let flags: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            for variant in 0..3 {
                let probs: Vec<Vec<f64>> = flags
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| {
                        let v = if f {
                            pos[(i + variant) % 3]
                        } else {
                            neg[(i + variant) % 3]
                        };
                        vec![v, 1.0 - v]
                    })
                    .collect();
                let eye = EyeImages {
                    eye_id: "e".into(),
                    probs: probs.clone(),
                    truth: vec![true, false],
                };
                let out = ensemble_eye(&[eye]).map_err(|e| e.to_string())?;
                let any = flags.iter().any(|&f| f);
                let max = probs.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
                ensure(
                    out[0].decisions[0] == any && out[0].scores[0] == max,
                    || format!("{n} images, flags {flags:?}: got {:?}", out[0]),
                )?;
                let any_second = probs.iter().any(|p| p[1] >= 0.5);
                ensure(out[0].decisions[1] == any_second, || {
                    format!("second class wrong for {flags:?}")
                })?;
                cases += 1;
            }
        }
    }
    Ok(format!(
        "{cases} image-flag combinations for eyes of 1-4 images follow the any-positive rule"
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fddm"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "`fddm {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn cli_determinism() -> Outcome {
    let mut reports = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dir = tmp.path();
        std::fs::write(
            dir.join("run.toml"),
            "[generator]\nnum_patients = 60\n[train]\nepochs = 3\n",
        )
        .map_err(|e| e.to_string())?;
        run_cli(
            dir,
            &[
                "synth",
                "--config",
                "run.toml",
                "--out",
                "data.jsonl",
                "--seed",
                "5",
            ],
        )?;
        run_cli(
            dir,
            &[
                "train-teacher",
                "--config",
                "run.toml",
                "--data",
                "data.jsonl",
                "--out",
                "run",
            ],
        )?;
        run_cli(
            dir,
            &[
                "train-student",
                "--config",
                "run.toml",
                "--data",
                "data.jsonl",
                "--teacher",
                "run/teacher.ckpt.json",
                "--out",
                "run",
            ],
        )?;
        run_cli(
            dir,
            &[
                "eval",
                "--config",
                "run.toml",
                "--checkpoint",
                "run/student.ckpt.json",
                "--data",
                "data.jsonl",
                "--out",
                "run",
            ],
        )?;
        let read = |f: &str| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"));
        reports.push([
            read("data.jsonl")?,
            read("run/teacher.ckpt.json")?,
            read("run/student.ckpt.json")?,
            read("run/student.log.jsonl")?,
            read("run/report.json")?,
            read("run/report.csv")?,
        ]);
    }
    ensure(reports[0] == reports[1], || {
        "pipeline outputs differ between runs".into()
    })?;
    Ok(format!(
        "synth -> train-teacher -> train-student -> eval twice: dataset, checkpoints, log and reports byte-identical ({} byte report)",
        reports[0][4].len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_correctness),
        ("loss identities", loss_identities),
        ("metric oracles", metric_oracles),
        ("reduction to baseline", reduction_to_baseline),
        ("end-to-end distillation benefit", distillation_benefit),
        ("unpaired training contract", unpaired_contract),
        ("eye-level ensemble", eye_ensemble),
        ("pipeline determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} [{name}]: PASS - {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL - {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
