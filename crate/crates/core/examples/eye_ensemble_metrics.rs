//! Eye-level ensembling and the metric suite on hand-made predictions.

use fddm::eval::{
    average_precision, ensemble_eye, roc_auc, threshold_metrics, EyeImages, EyePrediction,
};

pub fn run_example() -> fddm::Result<Vec<EyePrediction>> {
    // two classes; each eye has a different number of images
    let eyes = vec![
        EyeImages {
            eye_id: "p1-L".into(),
            probs: vec![vec![0.2, 0.1], vec![0.9, 0.3]],
            truth: vec![true, false],
        },
        EyeImages {
            eye_id: "p1-R".into(),
            probs: vec![vec![0.42, 0.6]],
            truth: vec![false, true],
        },
        EyeImages {
            eye_id: "p2-L".into(),
            probs: vec![vec![0.1, 0.2], vec![0.3, 0.1], vec![0.45, 0.4]],
            truth: vec![true, false],
        },
        EyeImages {
            eye_id: "p2-R".into(),
            probs: vec![vec![0.05, 0.7]],
            truth: vec![false, true],
        },
    ];
    let preds = ensemble_eye(&eyes)?;
    for p in &preds {
        println!(
            "{}: scores {:?} decisions {:?} truth {:?}",
            p.eye_id, p.scores, p.decisions, p.truth
        );
    }
    for c in 0..2 {
        let scores: Vec<f64> = preds.iter().map(|p| p.scores[c]).collect();
        let truth: Vec<bool> = preds.iter().map(|p| p.truth[c]).collect();
        let decisions: Vec<bool> = preds.iter().map(|p| p.decisions[c]).collect();
        let t = threshold_metrics(&decisions, &truth);
        println!(
            "class {c}: AP {:?} AUC {:?} sensitivity {} specificity {} F1 {:.3}",
            average_precision(&scores, &truth),
            roc_auc(&scores, &truth),
            t.sensitivity,
            t.specificity,
            t.f1
        );
    }
    Ok(preds)
}

#[allow(dead_code)]
fn main() -> fddm::Result<()> {
    run_example()?;
    Ok(())
}
