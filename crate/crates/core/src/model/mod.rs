//! MLP backbone with a linear multi-label head and an optional projector.
//!
//! The encoder maps inputs through `hidden_dims` to `feature_dim`, applying
//! the activation after every layer; its last output is the feature vector
//! `V`. The head is linear, `Z = V·W + b`. Students additionally carry a
//! two-layer projector from their feature space into the teacher's.

mod checkpoint;
mod optim;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use optim::{sgd_step, OptimizerState};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{FddmError, Result};
use crate::numeric::Matrix;
use crate::seeds::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Linear; used by identity test fixtures.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Output width of the projector (the teacher's feature dim). Students only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector_dim: Option<usize>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(FddmError::config("input_dim", "must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(FddmError::config("hidden_dims", "must be non-empty"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(FddmError::config("hidden_dims", "widths must be positive"));
        }
        if self.feature_dim < 2 {
            return Err(FddmError::config("feature_dim", "must be at least 2"));
        }
        if self.num_classes < 2 {
            return Err(FddmError::config("num_classes", "must be at least 2"));
        }
        if self.projector_dim == Some(0) {
            return Err(FddmError::config("projector_dim", "must be positive"));
        }
        Ok(())
    }

    pub fn with_projector(mut self, teacher_feature_dim: usize) -> Self {
        self.projector_dim = Some(teacher_feature_dim);
        self
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }
}

/// Fully connected layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = init_bound(fan_in, fan_out);
        let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite and positive");
        let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        Dense {
            weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized above"),
            bias: vec![0.0; fan_out],
        }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weights)?;
        y.add_row_broadcast(&self.bias)?;
        Ok(y)
    }

    /// Given the layer input and the gradient on its pre-activation output,
    /// returns the parameter gradients and the gradient on the input.
    fn backward(&self, input: &Matrix, grad_out: &Matrix) -> Result<(Dense, Matrix)> {
        let grads = Dense {
            weights: input.t_matmul(grad_out)?,
            bias: grad_out.column_sums(),
        };
        let grad_in = grad_out.matmul_t(&self.weights)?;
        Ok((grads, grad_in))
    }

    fn visit(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.as_slice());
        out.extend_from_slice(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut f64, bool)) {
        self.weights
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| f(w, true));
        self.bias.iter_mut().for_each(|b| f(b, false));
    }

    fn len(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }
}

/// Uniform init bound `sqrt(6 / (fan_in + fan_out))`.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Two-layer MLP: `act(V·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub hidden: Dense,
    pub output: Dense,
    pub activation: Activation,
}

impl Projector {
    /// Linear projector with identity weights, so `project(V) = V`.
    pub fn identity(dim: usize) -> Self {
        let eye = || Dense {
            weights: Matrix::identity(dim),
            bias: vec![0.0; dim],
        };
        Projector {
            hidden: eye(),
            output: eye(),
            activation: Activation::Identity,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: BackboneConfig,
    pub encoder: Vec<Dense>,
    pub head: Dense,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<Projector>,
}

/// Gradients (or any other per-parameter buffer) shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGrads {
    pub encoder: Vec<Dense>,
    pub head: Dense,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<[Dense; 2]>,
}

/// Initializes parameters: uniform weights in `±sqrt(6/(fan_in+fan_out))`,
/// zero biases. Encoder, head and projector draw from one seeded stream in
/// that order, so a config with and without projector share the backbone.
pub fn init_params(config: &BackboneConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng_for(seed, Stream::Init);
    let dims = config.encoder_dims();
    let encoder = dims
        .windows(2)
        .map(|w| Dense::glorot(w[0], w[1], &mut rng))
        .collect();
    let head = Dense::glorot(config.feature_dim, config.num_classes, &mut rng);
    let projector = config.projector_dim.map(|out| Projector {
        hidden: Dense::glorot(config.feature_dim, out, &mut rng),
        output: Dense::glorot(out, out, &mut rng),
        activation: config.activation,
    });
    Ok(ModelParams {
        config: config.clone(),
        encoder,
        head,
        projector,
    })
}

/// Intermediate activations kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k]` the output of encoder layer `k-1`.
    activations: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: Matrix,
    pub logits: Matrix,
    pub cache: ForwardCache,
}

pub fn forward(params: &ModelParams, x: &Matrix) -> Result<ForwardPass> {
    if x.cols() != params.config.input_dim {
        return Err(FddmError::Shape(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            params.config.input_dim
        )));
    }
    if !x.is_finite() {
        return Err(FddmError::Input("input contains non-finite values".into()));
    }
    let act = params.config.activation;
    let mut activations = Vec::with_capacity(params.encoder.len() + 1);
    activations.push(x.clone());
    for layer in &params.encoder {
        let h = layer.forward(activations.last().expect("non-empty"))?;
        activations.push(h.map(|v| act.apply(v)));
    }
    let features = activations.last().expect("non-empty").clone();
    let logits = params.head.forward(&features)?;
    Ok(ForwardPass {
        features,
        logits,
        cache: ForwardCache { activations },
    })
}

/// Back-propagates gradients on the logits and (optionally) directly on the
/// features into encoder and head gradients. The projector slot is left
/// zeroed when the model has one; see [`project_backward`].
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_logits: &Matrix,
    grad_features: Option<&Matrix>,
) -> Result<ModelGrads> {
    let features = cache.activations.last().expect("non-empty");
    let (head, mut grad) = params.head.backward(features, grad_logits)?;
    if let Some(extra) = grad_features {
        grad.add_scaled(extra, 1.0)?;
    }
    let act = params.config.activation;
    let mut encoder = Vec::with_capacity(params.encoder.len());
    for (k, layer) in params.encoder.iter().enumerate().rev() {
        let out = &cache.activations[k + 1];
        let mut pre = grad;
        for (g, &y) in pre.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *g *= act.derivative_from_output(y);
        }
        let (lg, gin) = layer.backward(&cache.activations[k], &pre)?;
        encoder.push(lg);
        grad = gin;
    }
    encoder.reverse();
    Ok(ModelGrads {
        encoder,
        head,
        projector: params.projector.as_ref().map(zero_projector_grads),
    })
}

fn zero_projector_grads(p: &Projector) -> [Dense; 2] {
    [
        Dense::zeros(p.hidden.weights.rows(), p.hidden.weights.cols()),
        Dense::zeros(p.output.weights.rows(), p.output.weights.cols()),
    ]
}

#[derive(Debug, Clone)]
pub struct ProjectPass {
    pub output: Matrix,
    input: Matrix,
    hidden: Matrix,
}

pub fn project(params: &ModelParams, features: &Matrix) -> Result<ProjectPass> {
    let p = params.projector.as_ref().ok_or_else(|| {
        FddmError::Capability("model has no projector (teacher models cannot project)".into())
    })?;
    if features.cols() != params.config.feature_dim {
        return Err(FddmError::Shape(format!(
            "features have {} columns, projector expects {}",
            features.cols(),
            params.config.feature_dim
        )));
    }
    let hidden = p.hidden.forward(features)?.map(|v| p.activation.apply(v));
    let output = p.output.forward(&hidden)?;
    Ok(ProjectPass {
        output,
        input: features.clone(),
        hidden,
    })
}

/// Returns projector gradients and the gradient on the projector input.
pub fn project_backward(
    params: &ModelParams,
    pass: &ProjectPass,
    grad_output: &Matrix,
) -> Result<([Dense; 2], Matrix)> {
    let p = params
        .projector
        .as_ref()
        .ok_or_else(|| FddmError::Capability("model has no projector".into()))?;
    let (g_out, mut grad_hidden) = p.output.backward(&pass.hidden, grad_output)?;
    for (g, &y) in grad_hidden
        .as_mut_slice()
        .iter_mut()
        .zip(pass.hidden.as_slice())
    {
        *g *= p.activation.derivative_from_output(y);
    }
    let (g_hidden, grad_in) = p.hidden.backward(&pass.input, &grad_hidden)?;
    Ok(([g_hidden, g_out], grad_in))
}

impl ModelParams {
    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self
                .encoder
                .iter()
                .map(|l| Dense::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            head: Dense::zeros(self.head.weights.rows(), self.head.weights.cols()),
            projector: self.projector.as_ref().map(zero_projector_grads),
        }
    }

    pub fn num_params(&self) -> usize {
        self.encoder.iter().map(Dense::len).sum::<usize>()
            + self.head.len()
            + self
                .projector
                .as_ref()
                .map_or(0, |p| p.hidden.len() + p.output.len())
    }

    /// All parameters in a fixed order: encoder layers, head, projector;
    /// weights before biases within each layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.encoder.iter().for_each(|l| l.visit(&mut out));
        self.head.visit(&mut out);
        if let Some(p) = &self.projector {
            p.hidden.visit(&mut out);
            p.output.visit(&mut out);
        }
        out
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(FddmError::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut it = values.iter();
        self.for_each_mut(|p, _| *p = *it.next().expect("length checked"));
        Ok(())
    }

    /// Visits every parameter; the flag is true for weights, false for biases.
    pub(crate) fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64, bool)) {
        self.encoder.iter_mut().for_each(|l| l.visit_mut(&mut f));
        self.head.visit_mut(&mut f);
        if let Some(p) = &mut self.projector {
            p.hidden.visit_mut(&mut f);
            p.output.visit_mut(&mut f);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// Parameters shared with a projector-free model of the same backbone.
    pub fn backbone_eq(&self, other: &ModelParams) -> bool {
        self.encoder == other.encoder && self.head == other.head
    }
}

impl ModelGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.encoder.iter().for_each(|l| l.visit(&mut out));
        self.head.visit(&mut out);
        if let Some([h, o]) = &self.projector {
            h.visit(&mut out);
            o.visit(&mut out);
        }
        out
    }

    pub(crate) fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64, bool)) {
        self.encoder.iter_mut().for_each(|l| l.visit_mut(&mut f));
        self.head.visit_mut(&mut f);
        if let Some([h, o]) = &mut self.projector {
            h.visit_mut(&mut f);
            o.visit_mut(&mut f);
        }
    }

    /// `self += scale · other`; shapes must match.
    pub fn add_scaled(&mut self, other: &ModelGrads, scale: f64) -> Result<()> {
        let theirs = other.flatten();
        let mut mine_len = 0;
        self.for_each_mut(|_, _| mine_len += 1);
        if mine_len != theirs.len() {
            return Err(FddmError::Shape(format!(
                "gradient sets of {} and {} entries",
                mine_len,
                theirs.len()
            )));
        }
        let mut it = theirs.into_iter();
        self.for_each_mut(|g, _| *g += scale * it.next().expect("length checked"));
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> BackboneConfig {
        BackboneConfig {
            input_dim: 5,
            hidden_dims: vec![7],
            feature_dim: 4,
            num_classes: 3,
            activation: Activation::Tanh,
            projector_dim: None,
        }
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias_and_bounded_weights() {
        let cfg = config().with_projector(6);
        let a = init_params(&cfg, 42).unwrap();
        let b = init_params(&cfg, 42).unwrap();
        assert_eq!(
            a.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, init_params(&cfg, 43).unwrap());

        assert!(a.encoder.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(a.head.bias.iter().all(|&b| b == 0.0));

        // a wide layer gives >1000 sampled entries
        let wide = BackboneConfig {
            input_dim: 40,
            hidden_dims: vec![30],
            ..config()
        };
        let p = init_params(&wide, 1).unwrap();
        let first = &p.encoder[0].weights;
        assert!(first.as_slice().len() >= 1000);
        let bound = init_bound(40, 30);
        assert!(first.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(first.as_slice().iter().any(|w| w.abs() > 0.9 * bound));
    }

    #[test]
    fn projector_does_not_shift_backbone_init() {
        let plain = init_params(&config(), 9).unwrap();
        let student = init_params(&config().with_projector(6), 9).unwrap();
        assert!(plain.backbone_eq(&student));
    }

    #[test]
    fn config_validation() {
        let bad = [
            BackboneConfig {
                num_classes: 1,
                ..config()
            },
            BackboneConfig {
                feature_dim: 1,
                ..config()
            },
            BackboneConfig {
                hidden_dims: vec![],
                ..config()
            },
            BackboneConfig {
                input_dim: 0,
                ..config()
            },
        ];
        for cfg in bad {
            assert!(matches!(
                init_params(&cfg, 0),
                Err(FddmError::Config { .. })
            ));
        }
    }

    #[test]
    fn zero_network_gives_half_probability() {
        let mut p = init_params(&config(), 0).unwrap();
        let n = p.num_params();
        p.assign_flat(&vec![0.0; n]).unwrap();
        let out = forward(&p, &random_input(3, 5, 1)).unwrap();
        assert!(out.logits.as_slice().iter().all(|&z| z == 0.0));
        assert!(out
            .logits
            .as_slice()
            .iter()
            .all(|&z| crate::numeric::sigmoid(z) == 0.5));
    }

    #[test]
    fn batched_forward_matches_row_by_row() {
        let p = init_params(&config(), 3).unwrap();
        let x = random_input(4, 5, 2);
        let batched = forward(&p, &x).unwrap();
        for i in 0..4 {
            let single = forward(&p, &x.select_rows(&[i])).unwrap();
            for (a, b) in single.logits.row(0).iter().zip(batched.logits.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in single.features.row(0).iter().zip(batched.features.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(forward(&p, &x).unwrap().logits, batched.logits);
        assert!(matches!(
            forward(&p, &random_input(2, 4, 0)),
            Err(FddmError::Shape(_))
        ));
    }

    #[test]
    fn mean_logit_gradient_matches_finite_differences() {
        let cfg = BackboneConfig {
            hidden_dims: vec![6, 5],
            ..config()
        };
        let base = init_params(&cfg, 5).unwrap();
        let x = random_input(4, 5, 6);
        let f = |flat: &[f64]| {
            let mut p = base.clone();
            p.assign_flat(flat).unwrap();
            let out = forward(&p, &x).unwrap();
            let n = out.logits.as_slice().len() as f64;
            let g = Matrix::from_vec(4, 3, vec![1.0 / n; 12]).unwrap();
            let grads = backward(&p, &out.cache, &g, None).unwrap();
            (out.logits.mean(), grads.flatten())
        };
        let rep = grad_check(f, &base.flatten(), 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn projector_identity_shape_and_gradient() {
        let mut p = init_params(&config(), 1).unwrap();
        assert!(matches!(
            project(&p, &random_input(2, 4, 0)),
            Err(FddmError::Capability(_))
        ));
        p.projector = Some(Projector::identity(4));
        let v = random_input(3, 4, 1);
        assert_eq!(project(&p, &v).unwrap().output, v);

        // 16 -> 24
        let wide = BackboneConfig {
            feature_dim: 16,
            ..config()
        }
        .with_projector(24);
        let pw = init_params(&wide, 2).unwrap();
        let out = project(&pw, &random_input(3, 16, 3)).unwrap();
        assert_eq!(out.output.shape(), (3, 24));

        // gradient of a weighted sum of projector outputs w.r.t. all params
        let cfg = config().with_projector(6);
        let base = init_params(&cfg, 8).unwrap();
        let x = random_input(4, 5, 9);
        let w = random_input(4, 6, 10);
        let f = |flat: &[f64]| {
            let mut p = base.clone();
            p.assign_flat(flat).unwrap();
            let fw = forward(&p, &x).unwrap();
            let pp = project(&p, &fw.features).unwrap();
            let val = crate::numeric::dot(pp.output.as_slice(), w.as_slice());
            let (pg, gv) = project_backward(&p, &pp, &w).unwrap();
            let mut grads = backward(&p, &fw.cache, &Matrix::zeros(4, 3), Some(&gv)).unwrap();
            grads.projector = Some(pg);
            (val, grads.flatten())
        };
        let rep = grad_check(f, &base.flatten(), 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn flatten_roundtrip() {
        let mut p = init_params(&config().with_projector(3), 4).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_params());
        let doubled: Vec<f64> = flat.iter().map(|v| 2.0 * v).collect();
        p.assign_flat(&doubled).unwrap();
        assert_eq!(p.flatten(), doubled);
        assert!(p.assign_flat(&[1.0]).is_err());
    }
}
