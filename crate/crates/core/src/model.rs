//! Binary classifiers with real-valued scores: logistic regression and
//! multilayer perceptrons, trained by mini-batch SGD or Adam on binary
//! cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, LabRng};
use crate::scalar::{dot, from_usize, Scalar};

/// Real-valued scoring function `h`; the classifier is `1{h(x) >= 0}`.
///
/// All methods run in inference mode (no dropout).
pub trait ScoringModel<T: Scalar>: Send + Sync {
    fn input_dim(&self) -> usize;

    /// `h(x)` without a dimension check.
    fn score_unchecked(&self, x: &[T]) -> T;

    /// `grad_x h(x)` without a dimension check.
    fn input_gradient_unchecked(&self, x: &[T]) -> Vec<T>;

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn score(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(self.score_unchecked(x))
    }

    fn input_gradient(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self.input_gradient_unchecked(x))
    }

    /// Ties at exactly zero classify as 1.
    fn classify(&self, x: &[T]) -> Result<u8> {
        Ok(label_of(self.score(x)?))
    }

    fn as_linear(&self) -> Option<&LinearModel<T>> {
        None
    }
}

#[inline]
pub fn label_of<T: Scalar>(score: T) -> u8 {
    u8::from(score >= T::zero())
}

/// Fraction of rows whose predicted label matches.
pub fn accuracy<T: Scalar, M: ScoringModel<T> + ?Sized>(
    model: &M,
    data: &Dataset<T>,
) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in data.features().iter().zip(data.labels()) {
        if model.classify(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    /// Whether training updates `bias`. Off for polynomial features that
    /// already carry a constant monomial.
    #[serde(default = "default_true")]
    pub fit_bias: bool,
}

fn default_true() -> bool {
    true
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(weights: Vec<T>, bias: T) -> Result<Self> {
        let model = Self {
            weights,
            bias,
            fit_bias: true,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn zeros(dim: usize, fit_bias: bool) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
            fit_bias,
        }
    }

    /// Uniform fan-in initialization in `(-1/sqrt(n), 1/sqrt(n))`.
    pub fn init_uniform(dim: usize, fit_bias: bool, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("model.input_dim", "must be at least 1"));
        }
        let mut rng = rng::seeded(rng::derive_seed(seed, rng::tag::INIT));
        let bound = T::one() / from_usize::<T>(dim).sqrt();
        let weights = (0..dim)
            .map(|_| uniform_symmetric(&mut rng, bound))
            .collect();
        let bias = if fit_bias {
            uniform_symmetric(&mut rng, bound)
        } else {
            T::zero()
        };
        Ok(Self {
            weights,
            bias,
            fit_bias,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Data("linear model has no weights".into()));
        }
        if !self
            .weights
            .iter()
            .chain(std::iter::once(&self.bias))
            .all(|v| v.is_finite())
        {
            return Err(Error::Data("linear model has non-finite parameters".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> ScoringModel<T> for LinearModel<T> {
    fn input_dim(&self) -> usize {
        self.weights.len()
    }

    fn score_unchecked(&self, x: &[T]) -> T {
        dot(&self.weights, x) + self.bias
    }

    fn input_gradient_unchecked(&self, _x: &[T]) -> Vec<T> {
        self.weights.clone()
    }

    fn as_linear(&self) -> Option<&LinearModel<T>> {
        Some(self)
    }
}

fn uniform_symmetric<T: Scalar>(rng: &mut LabRng, bound: T) -> T {
    (T::sample_unit(rng) * T::lit(2.0) - T::one()) * bound
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    #[inline]
    fn forward_into(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, &b)| dot(row, x) + b),
        );
    }
}

/// Multilayer perceptron with a linear single-output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel<T> {
    pub input_dim: usize,
    pub activation: Activation,
    /// Inverted-dropout rate on hidden activations during training.
    pub dropout_rate: f64,
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// All-zero network with hidden widths `hidden`.
    pub fn zeros(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        dropout_rate: f64,
    ) -> Result<Self> {
        check_shape(input_dim, hidden, dropout_rate)?;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut inputs = input_dim;
        for &w in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(DenseLayer::zeros(inputs, w));
            inputs = w;
        }
        Ok(Self {
            input_dim,
            activation,
            dropout_rate,
            layers,
        })
    }

    /// Weights and biases uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_uniform(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden, activation, dropout_rate)?;
        let mut rng = rng::seeded(rng::derive_seed(seed, rng::tag::INIT));
        for layer in &mut model.layers {
            let bound = T::one() / from_usize::<T>(layer.inputs).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = uniform_symmetric(&mut rng, bound);
            }
        }
        Ok(model)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.input_dim, &self.hidden_widths(), self.dropout_rate)?;
        let mut inputs = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.inputs != inputs
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.biases.len() != layer.outputs
            {
                return Err(Error::Data(format!("layer {i} shapes do not compose")));
            }
            if !layer
                .weights
                .iter()
                .chain(&layer.biases)
                .all(|v| v.is_finite())
            {
                return Err(Error::Data(format!("layer {i} has non-finite parameters")));
            }
            inputs = layer.outputs;
        }
        if inputs != 1 {
            return Err(Error::Data("final layer must have a single output".into()));
        }
        Ok(())
    }

    /// Forward pass recording every layer's pre- and post-activation.
    /// With `dropout` set, hidden activations are masked and rescaled.
    fn forward_cached(
        &self,
        x: &[T],
        dropout: Option<&mut LabRng>,
        cache: &mut ForwardCache<T>,
    ) -> T {
        let depth = self.layers.len();
        cache.pre.resize_with(depth, Vec::new);
        cache.post.resize_with(depth - 1, Vec::new);
        cache.masks.resize_with(depth - 1, Vec::new);
        let keep = 1.0 - self.dropout_rate;
        let scale = T::lit(1.0 / keep);
        let mut rng = dropout.filter(|_| self.dropout_rate > 0.0);
        for l in 0..depth {
            let input: &[T] = if l == 0 { x } else { &cache.post[l - 1] };
            self.layers[l].forward_into(input, &mut cache.pre[l]);
            if l + 1 == depth {
                break;
            }
            let z = &cache.pre[l];
            let post = &mut cache.post[l];
            let mask = &mut cache.masks[l];
            post.clear();
            mask.clear();
            for &zi in z {
                let a = self.activation.apply(zi);
                let m = match rng.as_deref_mut() {
                    Some(r) => {
                        if rand::Rng::random::<f64>(r) < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    }
                    None => T::one(),
                };
                mask.push(m);
                post.push(a * m);
            }
        }
        cache.pre[depth - 1][0]
    }

    /// Reverse pass for upstream derivative `d_score`; accumulates parameter
    /// gradients when `grads` is given and returns `d_score / dx`.
    fn backward(
        &self,
        x: &[T],
        cache: &ForwardCache<T>,
        d_score: T,
        mut grads: Option<&mut [Vec<T>]>,
    ) -> Vec<T> {
        let depth = self.layers.len();
        let mut delta = vec![d_score];
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let input: &[T] = if l == 0 { x } else { &cache.post[l - 1] };
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = (2 * l, 2 * l + 1);
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (gwi, &xi) in g[gw][o * layer.inputs..(o + 1) * layer.inputs]
                        .iter_mut()
                        .zip(input)
                    {
                        *gwi += d * xi;
                    }
                    g[gb][o] += d;
                }
            }
            let mut d_input = vec![T::zero(); layer.inputs];
            for (row, &d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                if d == T::zero() {
                    continue;
                }
                for (di, &w) in d_input.iter_mut().zip(row) {
                    *di += d * w;
                }
            }
            if l == 0 {
                return d_input;
            }
            let z = &cache.pre[l - 1];
            let post = &cache.post[l - 1];
            let mask = &cache.masks[l - 1];
            delta = d_input
                .iter()
                .zip(z.iter().zip(post.iter().zip(mask)))
                .map(|(&di, (&zi, (&pi, &mi)))| {
                    if mi == T::zero() {
                        return T::zero();
                    }
                    let a = pi / mi;
                    di * mi * self.activation.derivative(zi, a)
                })
                .collect();
        }
        unreachable!("loop returns at the input layer")
    }
}

fn check_shape(input_dim: usize, hidden: &[usize], dropout_rate: f64) -> Result<()> {
    if input_dim == 0 {
        return Err(Error::config("model.input_dim", "must be at least 1"));
    }
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::config(
            "model.layers",
            "need at least one hidden layer, all widths positive",
        ));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::config(
            "model.dropout_rate",
            format!("must lie in [0, 1), got {dropout_rate}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Default)]
struct ForwardCache<T> {
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    masks: Vec<Vec<T>>,
}

impl<T: Scalar> ScoringModel<T> for MlpModel<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn score_unchecked(&self, x: &[T]) -> T {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&a, &mut z);
            if l == last {
                return z[0];
            }
            a.clear();
            a.extend(z.iter().map(|&v| self.activation.apply(v)));
        }
        unreachable!("network has an output layer")
    }

    fn input_gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut cache = ForwardCache::default();
        self.forward_cached(x, None, &mut cache);
        self.backward(x, &cache, T::one(), None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model<T> {
    Linear(LinearModel<T>),
    Mlp(MlpModel<T>),
}

impl<T: Scalar> Model<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Linear(m) => m.validate(),
            Model::Mlp(m) => m.validate(),
        }
    }

    /// Mutable parameter slices in a fixed order.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Model::Linear(m) => vec![&mut m.weights[..], std::slice::from_mut(&mut m.bias)],
            Model::Mlp(m) => m
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.weights[..], &mut l.biases[..]])
                .collect(),
        }
    }

    /// Zeroed buffers shaped like [`Model::param_groups_mut`].
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        match self {
            Model::Linear(m) => vec![vec![T::zero(); m.weights.len()], vec![T::zero()]],
            Model::Mlp(m) => m
                .layers
                .iter()
                .flat_map(|l| {
                    [
                        vec![T::zero(); l.weights.len()],
                        vec![T::zero(); l.biases.len()],
                    ]
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.zero_grads().iter().map(Vec::len).sum()
    }

    pub fn dropout_rate(&self) -> f64 {
        match self {
            Model::Linear(_) => 0.0,
            Model::Mlp(m) => m.dropout_rate,
        }
    }

    /// Adds the gradient of the cross-entropy loss at `(x, y)` into `grads`
    /// and returns the loss. Dropout is applied when `dropout` is given.
    fn accumulate(
        &self,
        x: &[T],
        y: u8,
        dropout: Option<&mut LabRng>,
        cache: &mut ForwardCache<T>,
        grads: &mut [Vec<T>],
    ) -> T {
        let target = if y == 1 { T::one() } else { T::zero() };
        match self {
            Model::Linear(m) => {
                let s = m.score_unchecked(x);
                let d = sigmoid(s) - target;
                for (g, &xi) in grads[0].iter_mut().zip(x) {
                    *g += d * xi;
                }
                if m.fit_bias {
                    grads[1][0] += d;
                }
                bce_with_logits(s, target)
            }
            Model::Mlp(m) => {
                let s = m.forward_cached(x, dropout, cache);
                let d = sigmoid(s) - target;
                m.backward(x, cache, d, Some(grads));
                bce_with_logits(s, target)
            }
        }
    }

    /// Short human-readable description of architecture and initialization.
    pub fn describe(&self) -> String {
        match self {
            Model::Linear(m) => format!(
                "linear(n={}, fit_bias={}); init uniform fan-in",
                m.weights.len(),
                m.fit_bias
            ),
            Model::Mlp(m) => format!(
                "mlp(n={}, hidden={:?}, activation={:?}, dropout={}); init uniform fan-in",
                m.input_dim,
                m.hidden_widths(),
                m.activation,
                m.dropout_rate
            ),
        }
    }
}

impl<T: Scalar> ScoringModel<T> for Model<T> {
    fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.input_dim(),
        }
    }

    fn score_unchecked(&self, x: &[T]) -> T {
        match self {
            Model::Linear(m) => m.score_unchecked(x),
            Model::Mlp(m) => m.score_unchecked(x),
        }
    }

    fn input_gradient_unchecked(&self, x: &[T]) -> Vec<T> {
        match self {
            Model::Linear(m) => m.input_gradient_unchecked(x),
            Model::Mlp(m) => m.input_gradient_unchecked(x),
        }
    }

    fn as_linear(&self) -> Option<&LinearModel<T>> {
        match self {
            Model::Linear(m) => Some(m),
            Model::Mlp(_) => None,
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

/// `-y ln sigmoid(s) - (1 - y) ln(1 - sigmoid(s))`, computed as
/// `softplus(s) - y s`.
#[inline]
pub fn bce_with_logits<T: Scalar>(s: T, y: T) -> T {
    s.max(T::zero()) + (-s.abs()).exp().ln_1p() - y * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "TrainingConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "TrainingConfig::default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "TrainingConfig::default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "TrainingConfig::default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "TrainingConfig::default_adam_epsilon")]
    pub adam_epsilon: f64,
}

impl TrainingConfig {
    fn default_learning_rate() -> f64 {
        1e-3
    }
    fn default_batch_size() -> usize {
        128
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_adam_epsilon() -> f64 {
        1e-8
    }

    pub fn new(
        optimizer: OptimizerKind,
        learning_rate: f64,
        batch_size: usize,
        epochs: usize,
    ) -> Self {
        Self {
            optimizer,
            learning_rate,
            batch_size,
            epochs,
            adam_beta1: Self::default_beta1(),
            adam_beta2: Self::default_beta2(),
            adam_epsilon: Self::default_adam_epsilon(),
        }
    }

    /// `learning_rate = 0` is accepted so that a zero-step pass can be run.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "training.learning_rate",
                "must be finite and nonnegative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("training.epochs", "must be at least 1"));
        }
        for (field, b) in [
            ("training.adam_beta1", self.adam_beta1),
            ("training.adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("training.adam_epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Optimizer moments keyed to a model's parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub steps: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: &TrainingConfig, shapes: &[Vec<T>]) -> Self {
        let zeros = || {
            shapes
                .iter()
                .map(|g| vec![T::zero(); g.len()])
                .collect::<Vec<_>>()
        };
        let adam = config.optimizer == OptimizerKind::Adam;
        Self {
            kind: config.optimizer,
            learning_rate: T::lit(config.learning_rate),
            beta1: T::lit(config.adam_beta1),
            beta2: T::lit(config.adam_beta2),
            epsilon: T::lit(config.adam_epsilon),
            steps: 0,
            first_moment: if adam { zeros() } else { Vec::new() },
            second_moment: if adam { zeros() } else { Vec::new() },
        }
    }

    /// One update `params -= lr * direction(grads)`.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, &gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = i32::try_from(self.steps).unwrap_or(i32::MAX);
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((pi, &gi), mi), vi) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
    }
}

/// Mini-batch trainer. Shuffling and dropout draw from separate streams
/// derived from the run seed and the epoch number, so any epoch can be
/// replayed from the parameters and optimizer state alone.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    config: TrainingConfig,
    seed: u64,
    epochs_done: usize,
    optimizer: OptimizerState<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainingConfig, model: &Model<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&config, &model.zero_grads());
        Ok(Self {
            config,
            seed,
            epochs_done: 0,
            optimizer,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.optimizer
    }

    /// One pass over `train`; returns the mean batch loss.
    pub fn train_epoch(&mut self, model: &mut Model<T>, train: &Dataset<T>) -> Result<f64> {
        model.check_dim(&train.features()[0])?;
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(
            rng::derive_seed(self.seed, rng::tag::SHUFFLE),
            epoch as u64,
        ));
        let mut dropout_rng =
            rng::stream(rng::derive_seed(self.seed, rng::tag::DROPOUT), epoch as u64);
        let mut cache = ForwardCache::default();
        let mut grads = model.zero_grads();
        let mut total = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(self.config.batch_size).enumerate() {
            grads.iter_mut().flatten().for_each(|g| *g = T::zero());
            let mut loss = T::zero();
            for &i in chunk {
                let (x, y) = train.row(i);
                loss += model.accumulate(x, y, Some(&mut dropout_rng), &mut cache, &mut grads);
            }
            let inv = T::one() / from_usize::<T>(chunk.len());
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            let loss = (loss * inv).to_f64_lossless();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            let mut params = model.param_groups_mut();
            self.optimizer.step(&mut params, &grads);
            if !params.iter().all(|p| p.iter().all(|v| v.is_finite())) {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            total += loss;
            batches += 1;
        }
        self.epochs_done = epoch;
        Ok(total / batches as f64)
    }
}

/// Format tag written into every checkpoint file.
pub const CHECKPOINT_FORMAT: &str = "evcp-checkpoint/1";

/// Serialized model snapshot. `context` carries caller data (the harness
/// stores preprocessing and the resolved run settings there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub format: String,
    pub epoch: usize,
    pub seed: u64,
    pub model: Model<T>,
    #[serde(default)]
    pub context: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(epoch: usize, seed: u64, model: Model<T>, context: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            epoch,
            seed,
            model,
            context,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "unsupported checkpoint format `{}` in {}",
                ckpt.format,
                path.display()
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}
