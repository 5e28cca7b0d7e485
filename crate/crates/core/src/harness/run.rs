//! Training runs with periodic checkpoint metrics.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig, ModelConfig};
use crate::dataset::{load_csv_raw, split, Dataset, Preprocessor};
use crate::error::{Error, Result};
use crate::geom::AsymptoticCoefficient;
use crate::model::{accuracy, Checkpoint, LinearModel, MlpModel, Model, ScoringModel, Trainer};
use crate::rng;
use crate::vcp::{aggregate, AggregateSettings, AggregateVcp};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dropout rate used for the regularized half of a pair when the config
/// does not set one.
pub const DEFAULT_PAIR_DROPOUT: f64 = 0.5;

/// Preprocessed splits for a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset<f64>,
    pub test: Dataset<f64>,
    pub preprocessor: Preprocessor<f64>,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub synthetic_seed: Option<u64>,
}

/// Loads or generates the data, splits it and fits preprocessing on the
/// training split.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (raw, synthetic_seed) = match &config.dataset {
        DatasetSource::Synthetic(s) => {
            let spec = s.resolve(config.seed);
            (spec.generate::<f64>()?, Some(spec.seed))
        }
        DatasetSource::Csv { path, label_column } => {
            (load_csv_raw::<f64>(path, label_column)?, None)
        }
    };
    let (train_raw, test_raw) = split(
        &raw,
        config.test_fraction,
        rng::derive_seed(config.seed, rng::tag::SPLIT),
    )?;
    let preprocessor = Preprocessor::fit(
        &train_raw,
        config.missing,
        config.standardize,
        config.expansion.map(|e| (e.degree, e.include_bias)),
    )?;
    let train = preprocessor.apply(&train_raw)?;
    let test = preprocessor.apply(&test_raw)?;
    if train.len() < 2 {
        return Err(Error::Data("fewer than two usable training rows".into()));
    }
    Ok(PreparedData {
        input_dim: raw.dim(),
        feature_dim: train.dim(),
        train,
        test,
        preprocessor,
        synthetic_seed,
    })
}

pub fn init_model(config: &ExperimentConfig, feature_dim: usize) -> Result<Model<f64>> {
    match &config.model {
        ModelConfig::Linear { fit_bias } => {
            let constant_term = config.expansion.is_some_and(|e| e.include_bias);
            let fit_bias = fit_bias.unwrap_or(!constant_term);
            Ok(Model::Linear(LinearModel::init_uniform(
                feature_dim,
                fit_bias,
                config.seed,
            )?))
        }
        ModelConfig::Mlp {
            layers,
            activation,
            dropout_rate,
        } => Ok(Model::Mlp(MlpModel::init_uniform(
            feature_dim,
            layers,
            *activation,
            *dropout_rate,
            config.seed,
        )?)),
    }
}

/// Settings resolved before the first checkpoint and echoed in `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub epsilon: f64,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub synthetic_seed: Option<u64>,
    pub model: String,
    pub num_params: usize,
    pub loss: String,
    pub vcp_streams: String,
    pub asymptotic_coefficient: String,
}

/// Metrics at one checkpoint, on the training split unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    /// Test-split accuracy, for overfitting context.
    pub test_acc: f64,
    /// `None` when every margin was infinite.
    pub mean_margin: Option<f64>,
    pub mean_vcp: f64,
    pub vcp_stderr: f64,
    pub excluded_margins: usize,
    pub jensen_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub resolved: ResolvedRun,
    pub checkpoints: Vec<CheckpointMetrics>,
    pub wall_time: f64,
    pub code_version: String,
    #[serde(skip)]
    pub snapshots: Vec<Checkpoint<f64>>,
}

/// A failed run with the checkpoints completed before the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub checkpoints: Vec<CheckpointMetrics>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} completed checkpoints)",
            self.error,
            self.checkpoints.len()
        )
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunError {
    fn from(error: Error) -> Self {
        Self {
            error,
            checkpoints: Vec::new(),
        }
    }
}

/// Aggregate settings for a run. Every checkpoint reuses the same per-point
/// streams, so successive checkpoints see identical perturbation draws.
pub fn vcp_settings(config: &ExperimentConfig, epsilon: f64) -> AggregateSettings<f64> {
    AggregateSettings {
        epsilon,
        region: config.vcp.region,
        samples: config.vcp.samples,
        method: config.vcp.method,
        seed: config.seed,
    }
}

/// Accuracy and margin/probability aggregate of `model` on `train`.
pub fn evaluate<M: ScoringModel<f64> + ?Sized>(
    model: &M,
    train: &Dataset<f64>,
    settings: &AggregateSettings<f64>,
) -> Result<(f64, AggregateVcp<f64>)> {
    Ok((accuracy(model, train)?, aggregate(model, train, settings)?))
}

fn checkpoint_metrics(
    model: &Model<f64>,
    data: &PreparedData,
    settings: &AggregateSettings<f64>,
    epoch: usize,
) -> Result<CheckpointMetrics> {
    let (train_acc, agg) = evaluate(model, &data.train, settings)?;
    Ok(CheckpointMetrics {
        epoch,
        train_acc,
        test_acc: accuracy(model, &data.test)?,
        mean_margin: agg.mean_margin,
        mean_vcp: agg.mean_p,
        vcp_stderr: agg.mean_stderr,
        excluded_margins: agg.excluded_margins,
        jensen_bound: agg.jensen_bound,
    })
}

/// Context stored in every checkpoint file so that it can be re-evaluated
/// without the original config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointContext {
    pub config: ExperimentConfig,
    pub preprocessor: Preprocessor<f64>,
    pub epsilon: f64,
}

impl CheckpointContext {
    /// The run context stored in `ckpt`, if any.
    pub fn from_checkpoint(ckpt: &Checkpoint<f64>) -> Result<Option<Self>> {
        if ckpt.context.is_null() {
            return Ok(None);
        }
        serde_json::from_value(ckpt.context.clone())
            .map(Some)
            .map_err(|e| Error::Data(format!("checkpoint context: {e}")))
    }
}

/// Trains per `config`, recording metrics at epoch 0, every
/// `checkpoint_every` epochs and the final epoch.
pub fn run_experiment(
    config: &ExperimentConfig,
    full: bool,
) -> std::result::Result<RunResult, RunError> {
    let start = Instant::now();
    config.validate(full)?;
    let data = prepare_data(config)?;
    let mut model = init_model(config, data.feature_dim)?;
    let epsilon = config.resolve_epsilon(data.input_dim, data.feature_dim)?;
    let settings = vcp_settings(config, epsilon);
    let resolved = ResolvedRun {
        epsilon,
        input_dim: data.input_dim,
        feature_dim: data.feature_dim,
        train_rows: data.train.len(),
        test_rows: data.test.len(),
        synthetic_seed: data.synthetic_seed,
        model: model.describe(),
        num_params: model.num_params(),
        loss: "binary cross-entropy on sigmoid(score)".into(),
        vcp_streams: "per point, keyed by (seed, point index); shared across checkpoints".into(),
        asymptotic_coefficient: AsymptoticCoefficient::SELECTED.describe().into(),
    };
    let context = serde_json::to_value(CheckpointContext {
        config: config.clone(),
        preprocessor: data.preprocessor.clone(),
        epsilon,
    })
    .expect("context serializes");

    let mut trainer = Trainer::new(config.training.clone(), &model, config.seed)?;
    let mut checkpoints = Vec::new();
    let mut snapshots = Vec::new();
    let mut record = |model: &Model<f64>,
                      epoch: usize,
                      checkpoints: &mut Vec<CheckpointMetrics>|
     -> Result<()> {
        checkpoints.push(checkpoint_metrics(model, &data, &settings, epoch)?);
        snapshots.push(Checkpoint::new(
            epoch,
            config.seed,
            model.clone(),
            context.clone(),
        ));
        Ok(())
    };
    let fail = |error: Error, checkpoints: Vec<CheckpointMetrics>| RunError { error, checkpoints };

    if let Err(e) = record(&model, 0, &mut checkpoints) {
        return Err(fail(e, checkpoints));
    }
    let epochs = config.training.epochs;
    for epoch in 1..=epochs {
        if let Err(e) = trainer.train_epoch(&mut model, &data.train) {
            return Err(fail(e, checkpoints));
        }
        if epoch % config.checkpoint_every == 0 || epoch == epochs {
            if let Err(e) = record(&model, epoch, &mut checkpoints) {
                return Err(fail(e, checkpoints));
            }
        }
    }
    Ok(RunResult {
        config: config.clone(),
        resolved,
        checkpoints,
        wall_time: start.elapsed().as_secs_f64(),
        code_version: CODE_VERSION.to_string(),
        snapshots,
    })
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub plain: RunResult,
    pub regularized: RunResult,
}

/// Two runs identical except for dropout: 0 and the config's rate (or
/// [`DEFAULT_PAIR_DROPOUT`] when the config has none).
pub fn run_pair_regularization(
    config: &ExperimentConfig,
    full: bool,
) -> std::result::Result<PairResult, RunError> {
    let ModelConfig::Mlp { dropout_rate, .. } = &config.model else {
        return Err(Error::config("model", "dropout pairs need an mlp model").into());
    };
    let rate = if *dropout_rate > 0.0 {
        *dropout_rate
    } else {
        DEFAULT_PAIR_DROPOUT
    };
    run_pair_with_rate(config, rate, full)
}

/// Pair with an explicit rate for the regularized run.
pub fn run_pair_with_rate(
    config: &ExperimentConfig,
    rate: f64,
    full: bool,
) -> std::result::Result<PairResult, RunError> {
    if !matches!(config.model, ModelConfig::Mlp { .. }) {
        return Err(Error::config("model", "dropout pairs need an mlp model").into());
    }
    let with_rate = |r: f64| {
        let mut c = config.clone();
        if let ModelConfig::Mlp { dropout_rate, .. } = &mut c.model {
            *dropout_rate = r;
        }
        c
    };
    Ok(PairResult {
        plain: run_experiment(&with_rate(0.0), full)?,
        regularized: run_experiment(&with_rate(rate), full)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::stats::spearman;
    use std::path::Path;

    fn logistic_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
            "dataset": {"synthetic": {"m": 120, "n": 2, "separation": 2.5, "seed": 3}},
            "model": {"linear": {}},
            "training": {"optimizer": "sgd", "learning_rate": 0.01, "batch_size": 16, "epochs": 60},
            "epsilon": {"fixed": 0.5},
            "vcp": {"samples": 200},
            "checkpoint_every": 10,
            "seed": 7
        }"#,
            Path::new("cfg.json"),
        )
        .unwrap()
    }

    #[test]
    fn logistic_run_improves_and_is_deterministic() {
        let c = logistic_config();
        let a = run_experiment(&c, false).unwrap();
        let epochs: Vec<usize> = a.checkpoints.iter().map(|m| m.epoch).collect();
        assert_eq!(epochs, [0, 10, 20, 30, 40, 50, 60]);
        let acc: Vec<f64> = a.checkpoints.iter().map(|m| m.train_acc).collect();
        assert!(acc.last() > acc.first(), "{acc:?}");
        let x: Vec<f64> = epochs.iter().map(|&e| e as f64).collect();
        assert!(spearman(&x, &acc).unwrap_or(0.0) > 0.0, "{acc:?}");
        let b = run_experiment(&c, false).unwrap();
        assert_eq!(a.checkpoints, b.checkpoints);
        assert_eq!(a.snapshots.len(), 7);
        assert_eq!(a.resolved.train_rows, 96);
    }

    #[test]
    fn final_epoch_is_always_recorded() {
        let mut c = logistic_config();
        c.training.epochs = 25;
        let r = run_experiment(&c, false).unwrap();
        let epochs: Vec<usize> = r.checkpoints.iter().map(|m| m.epoch).collect();
        assert_eq!(epochs, [0, 10, 20, 25]);
    }

    #[test]
    fn divergence_keeps_completed_checkpoints() {
        let mut c = logistic_config();
        // Adam steps have size ~lr, so two steps overflow.
        c.training.optimizer = crate::model::OptimizerKind::Adam;
        c.training.learning_rate = 1e308;
        c.checkpoint_every = 1;
        let err = run_experiment(&c, false).unwrap_err();
        assert!(matches!(err.error, Error::Divergence { .. }), "{err}");
        assert!(!err.checkpoints.is_empty());
    }

    #[test]
    fn pair_with_zero_rate_in_both_is_identical() {
        let mut c = logistic_config();
        c.model = ModelConfig::Mlp {
            layers: vec![6],
            activation: Default::default(),
            dropout_rate: 0.0,
        };
        c.training.epochs = 10;
        c.checkpoint_every = 5;
        let degenerate = run_pair_with_rate(&c, 0.0, false).unwrap();
        assert_eq!(
            degenerate.plain.checkpoints,
            degenerate.regularized.checkpoints
        );
        let pair = run_pair_regularization(&c, false).unwrap();
        assert_eq!(pair.plain.checkpoints, degenerate.plain.checkpoints);
        assert_ne!(pair.plain.checkpoints, pair.regularized.checkpoints);
        c.model = ModelConfig::Linear { fit_bias: None };
        assert!(run_pair_regularization(&c, false).is_err());
    }
}
