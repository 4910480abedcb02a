//! Demonstration-based preference inference.
//!
//! A trained weight-conditioned agent is rolled out once per point of a
//! regular grid over the simplex. Each rollout's cumulative reward vector,
//! paired with the weights that produced it, is one training record for a
//! small softmax regression network that maps a demonstration back to the
//! preference weights behind it.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{rollout, AgentError, QAgent};
use crate::datahub::DataWindow;
use crate::env::{EnvConfig, EnvError, PreferenceWeights, RewardVector};
use crate::nn::{Mlp, NnError, Optimizer, OutputActivation, Stepper, TrainSpec};

const GRID_TOLERANCE: f64 = 1e-9;
const DWPI_META_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DwpiError {
    #[error("grid step {0} does not divide 1")]
    InvalidStep(f64),
    #[error("feature `{0}` has zero variance")]
    DegenerateFeature(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Cumulative reward of one demonstration and the weights that generated it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoRecord {
    pub features: RewardVector,
    pub label: PreferenceWeights,
}

/// `[k/n, 1 - k/n]` for `k = 0..=n` where `n = 1/step`.
pub fn weight_grid(step: f64) -> Result<Vec<PreferenceWeights>, DwpiError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(DwpiError::InvalidStep(step));
    }
    let inverse = 1.0 / step;
    let n = inverse.round();
    if (inverse - n).abs() > GRID_TOLERANCE * n.max(1.0) {
        return Err(DwpiError::InvalidStep(step));
    }
    let n = n as usize;
    (0..=n)
        .map(|k| PreferenceWeights::from_cost_weight(k as f64 / n as f64).map_err(DwpiError::from))
        .collect()
}

/// One greedy rollout per grid point on the training day.
pub fn build_dataset(
    agent: &QAgent,
    window: &DataWindow,
    config: &EnvConfig,
    grid: &[PreferenceWeights],
) -> Result<Vec<DemoRecord>, DwpiError> {
    if grid.is_empty() {
        return Err(DwpiError::InsufficientData("empty weight grid".into()));
    }
    grid.iter()
        .map(|&label| {
            let traj = rollout(agent, label, window, config, true, 0)?;
            Ok(DemoRecord {
                features: traj.reward,
                label,
            })
        })
        .collect()
}

/// Per-feature standardization with population statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl FeatureScaler {
    pub fn fit(records: &[DemoRecord]) -> Result<Self, DwpiError> {
        if records.len() < 2 {
            return Err(DwpiError::InsufficientData(format!(
                "need at least 2 records to fit a scaler, got {}",
                records.len()
            )));
        }
        let n = records.len() as f64;
        let mut mean = [0.0; 2];
        for r in records {
            let f = r.features.to_array();
            mean[0] += f[0];
            mean[1] += f[1];
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 2];
        for r in records {
            let f = r.features.to_array();
            var[0] += (f[0] - mean[0]).powi(2);
            var[1] += (f[1] - mean[1]).powi(2);
        }
        let std = [(var[0] / n).sqrt(), (var[1] / n).sqrt()];
        for (s, name) in std.iter().zip(["cum_cost", "cum_comfort"]) {
            if !(*s > 0.0) {
                return Err(DwpiError::DegenerateFeature(name));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: RewardVector) -> [f64; 2] {
        let f = features.to_array();
        [(f[0] - self.mean[0]) / self.std[0], (f[1] - self.mean[1]) / self.std[1]]
    }
}

pub fn fit_scaler(records: &[DemoRecord]) -> Result<FeatureScaler, DwpiError> {
    FeatureScaler::fit(records)
}

pub fn apply_scaler(scaler: &FeatureScaler, features: RewardVector) -> [f64; 2] {
    scaler.apply(features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwpiHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub hidden: Vec<usize>,
}

impl Default for DwpiHyper {
    fn default() -> Self {
        Self {
            epochs: 1500,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            hidden: vec![16, 16, 8],
        }
    }
}

impl DwpiHyper {
    pub fn validate(&self) -> Result<(), DwpiError> {
        self.train_spec()
            .validate()
            .map_err(|e| DwpiError::InvalidHyper(e.to_string()))?;
        if self.hidden.contains(&0) {
            return Err(DwpiError::InvalidHyper("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn train_spec(&self) -> TrainSpec {
        TrainSpec {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(2);
        sizes
    }
}

/// Inference network plus the scaler fitted on its training features.
#[derive(Debug, Clone, PartialEq)]
pub struct DwpiModel {
    pub net: Mlp,
    pub scaler: FeatureScaler,
    /// Full-dataset MSE after the last epoch.
    pub training_mse: f64,
}

/// Fits the inference network on standardized features.
pub fn train_dwpi(records: &[DemoRecord], hyper: &DwpiHyper, seed: u64) -> Result<DwpiModel, DwpiError> {
    hyper.validate()?;
    if records.len() < hyper.batch_size {
        return Err(DwpiError::InsufficientData(format!(
            "{} records for batch size {}",
            records.len(),
            hyper.batch_size
        )));
    }
    let scaler = FeatureScaler::fit(records)?;
    let inputs: Vec<Vec<f64>> = records.iter().map(|r| scaler.apply(r.features).to_vec()).collect();
    let targets: Vec<Vec<f64>> = records.iter().map(|r| r.label.to_array().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(&hyper.layer_sizes(), OutputActivation::Softmax, seed)?;
    let mut stepper = Stepper::new(hyper.optimizer, &net);
    let training_mse = net.fit_with(&inputs, &targets, &hyper.train_spec(), &mut stepper, &mut rng)?;
    Ok(DwpiModel {
        net,
        scaler,
        training_mse,
    })
}

/// Weights behind a demonstration's cumulative reward.
pub fn infer(model: &DwpiModel, features: RewardVector) -> Result<PreferenceWeights, DwpiError> {
    let out = model.net.forward(&model.scaler.apply(features))?;
    Ok(PreferenceWeights::new(out[0], out[1])?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwpiMeta {
    pub schema_version: u32,
    pub scaler: FeatureScaler,
    pub hyper: DwpiHyper,
    pub seed: u64,
    pub training_mse: f64,
}

impl DwpiModel {
    pub fn save(&self, model_path: &Path, meta_path: &Path, hyper: &DwpiHyper, seed: u64) -> Result<(), DwpiError> {
        self.net.save(model_path)?;
        let meta = DwpiMeta {
            schema_version: DWPI_META_VERSION,
            scaler: self.scaler,
            hyper: hyper.clone(),
            seed,
            training_mse: self.training_mse,
        };
        fs::write(meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
        Ok(())
    }

    pub fn load(model_path: &Path, meta_path: &Path) -> Result<(Self, DwpiMeta), DwpiError> {
        let net = Mlp::load(model_path)?;
        let meta: DwpiMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)
            .map_err(|e| DwpiError::Dataset(format!("corrupt model sidecar: {e}")))?;
        if meta.schema_version != DWPI_META_VERSION {
            return Err(DwpiError::Dataset(format!(
                "unsupported sidecar schema_version {}",
                meta.schema_version
            )));
        }
        if net.input_size() != 2 || net.output_size() != 2 || net.output_activation() != OutputActivation::Softmax {
            return Err(DwpiError::Dataset(format!(
                "network shape {:?} is not an inference model",
                net.layer_sizes()
            )));
        }
        Ok((
            Self {
                net,
                scaler: meta.scaler,
                training_mse: meta.training_mse,
            },
            meta,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    cum_cost: f64,
    cum_comfort: f64,
    w_cost: f64,
    w_comf: f64,
}

/// CSV with columns `cum_cost, cum_comfort, w_cost, w_comf`.
pub fn write_dataset(path: &Path, records: &[DemoRecord]) -> Result<(), DwpiError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(DatasetRow {
            cum_cost: r.features.cost,
            cum_comfort: r.features.comfort,
            w_cost: r.label.w_cost(),
            w_comf: r.label.w_comf(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DemoRecord>, DwpiError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in rdr.deserialize() {
        let row: DatasetRow = row?;
        if !(row.cum_cost.is_finite() && row.cum_comfort.is_finite()) {
            return Err(DwpiError::Dataset("non-finite feature".into()));
        }
        records.push(DemoRecord {
            features: RewardVector::new(row.cum_cost, row.cum_comfort),
            label: PreferenceWeights::new(row.w_cost, row.w_comf)?,
        });
    }
    if records.is_empty() {
        return Err(DwpiError::Dataset("dataset is empty".into()));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(cost: f64, comfort: f64, w_cost: f64) -> DemoRecord {
        DemoRecord {
            features: RewardVector::new(cost, comfort),
            label: PreferenceWeights::from_cost_weight(w_cost).unwrap(),
        }
    }

    #[test]
    fn grid_examples() {
        let g = weight_grid(0.5).unwrap();
        let arrays: Vec<_> = g.iter().map(|w| w.to_array()).collect();
        assert_eq!(arrays, vec![[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]);
        let fine = weight_grid(0.01).unwrap();
        assert_eq!(fine.len(), 101);
        assert!(fine.windows(2).all(|p| p[0].w_cost() < p[1].w_cost()));
        assert_eq!(fine[7].w_cost(), 0.07);
        assert!(matches!(weight_grid(0.3), Err(DwpiError::InvalidStep(_))));
        assert!(matches!(weight_grid(0.0), Err(DwpiError::InvalidStep(_))));
        assert!(matches!(weight_grid(1.5), Err(DwpiError::InvalidStep(_))));
        assert_eq!(weight_grid(1.0).unwrap().len(), 2);
    }

    #[test]
    fn scaler_examples() {
        let records = [rec(0.0, 0.0, 0.2), rec(2.0, 2.0, 0.8)];
        let s = fit_scaler(&records).unwrap();
        assert_eq!(s.mean, [1.0, 1.0]);
        assert_eq!(s.std, [1.0, 1.0]);
        assert_eq!(apply_scaler(&s, RewardVector::new(1.0, 1.0)), [0.0, 0.0]);
        let flat = [rec(1.0, 1.0, 0.2), rec(1.0, 1.0, 0.8)];
        assert!(matches!(fit_scaler(&flat), Err(DwpiError::DegenerateFeature("cum_cost"))));
    }

    #[test]
    fn standardized_features_have_unit_moments() {
        let records: Vec<_> = (0..37)
            .map(|i| rec(-3.0 - (i as f64).sin(), (i % 4) as f64, i as f64 / 36.0))
            .collect();
        let s = fit_scaler(&records).unwrap();
        let z: Vec<[f64; 2]> = records.iter().map(|r| s.apply(r.features)).collect();
        for k in 0..2 {
            let mean = z.iter().map(|v| v[k]).sum::<f64>() / z.len() as f64;
            let var = z.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / z.len() as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn training_needs_a_full_batch() {
        let records: Vec<_> = (0..10).map(|i| rec(-(i as f64), i as f64, i as f64 / 9.0)).collect();
        assert!(matches!(
            train_dwpi(&records, &DwpiHyper::default(), 0),
            Err(DwpiError::InsufficientData(_))
        ));
    }

    #[test]
    fn learns_a_smooth_synthetic_mapping() {
        // features move linearly with the weights, so the inverse is easy
        let records: Vec<_> = weight_grid(0.02)
            .unwrap()
            .into_iter()
            .map(|w| DemoRecord {
                features: RewardVector::new(-5.0 - 2.0 * w.w_comf(), 3.0 * w.w_comf()),
                label: w,
            })
            .collect();
        let hyper = DwpiHyper::default();
        let model = train_dwpi(&records, &hyper, 3).unwrap();
        assert!(model.training_mse < 0.01, "mse {}", model.training_mse);
        let again = train_dwpi(&records, &hyper, 3).unwrap();
        assert_eq!(model, again);
        for r in &records {
            let w = infer(&model, r.features).unwrap();
            assert_abs_diff_eq!(w.w_cost() + w.w_comf(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dataset_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.csv");
        let records = vec![rec(-7.25, 3.0, 0.0), rec(-5.125, 0.0, 1.0), rec(-6.1, 2.0, 0.37)];
        write_dataset(&path, &records).unwrap();
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("cum_cost,cum_comfort,w_cost,w_comf\n"));
        assert_eq!(read_dataset(&path).unwrap(), records);
    }
}
