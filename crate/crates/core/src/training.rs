//! Synthetic vehicular data and on-board linear-regression training.
//!
//! Weight vectors carry the bias as their last coordinate, so a model over
//! `d` features has `d + 1` weights.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::TrainingError;
use crate::rng::SimRng;
use crate::types::NodeId;

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleProfile {
    pub node_id: NodeId,
    pub n_samples: usize,
    pub noise_std: f64,
    /// Per-feature mean offset; the non-IID knob.
    pub feature_shift: Vec<f64>,
    pub is_malicious: bool,
}

/// Feature matrix (speed, position, density, time-of-day channels, ...)
/// and congestion-score targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, TrainingError> {
        if features.len() != targets.len() || features.is_empty() {
            return Err(TrainingError::InvalidInput(format!(
                "{} feature rows for {} targets",
                features.len(),
                targets.len()
            )));
        }
        let d = features[0].len();
        if features.iter().any(|row| row.len() != d) {
            return Err(TrainingError::InvalidInput("ragged feature matrix".into()));
        }
        Ok(Dataset { features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalModel {
    pub weights: Vec<f64>,
    pub train_loss: f64,
}

impl LocalModel {
    pub fn zeros(dim: usize) -> Self {
        LocalModel {
            weights: vec![0.0; dim],
            train_loss: f64::NAN,
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        LocalModel {
            weights,
            train_loss: f64::NAN,
        }
    }
}

/// Ground-truth weights (bias last), uniform in [-1, 1].
pub fn generate_ground_truth(dim: usize, rng: &mut SimRng) -> Vec<f64> {
    assert!(dim >= 1, "ground truth needs at least one coordinate");
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Draws `profile.n_samples` rows with standard-normal features shifted by
/// `feature_shift`, and targets `x . w + b + N(0, noise_std^2)`.
pub fn generate_dataset(
    profile: &VehicleProfile,
    ground_truth: &[f64],
    rng: &mut SimRng,
) -> Result<Dataset, TrainingError> {
    if profile.n_samples == 0 {
        return Err(TrainingError::InvalidInput("n_samples must be >= 1".into()));
    }
    if ground_truth.len() < 2 {
        return Err(TrainingError::InvalidInput(
            "ground truth needs a feature and a bias".into(),
        ));
    }
    let d = ground_truth.len() - 1;
    if profile.feature_shift.len() != d {
        return Err(TrainingError::InvalidInput(format!(
            "feature_shift has {} entries for {d} features",
            profile.feature_shift.len()
        )));
    }
    if profile.noise_std.is_nan() || profile.noise_std < 0.0 {
        return Err(TrainingError::InvalidInput("noise_std must be >= 0".into()));
    }
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut features = Vec::with_capacity(profile.n_samples);
    let mut targets = Vec::with_capacity(profile.n_samples);
    for _ in 0..profile.n_samples {
        let row: Vec<f64> = profile.feature_shift.iter().map(|s| unit.sample(rng) + s).collect();
        let clean = predict(ground_truth, &row);
        let noise = if profile.noise_std > 0.0 {
            profile.noise_std * unit.sample(rng)
        } else {
            0.0
        };
        features.push(row);
        targets.push(clean + noise);
    }
    Dataset::new(features, targets)
}

#[inline]
pub fn predict(weights: &[f64], row: &[f64]) -> f64 {
    let d = row.len();
    row.iter().zip(&weights[..d]).map(|(x, w)| x * w).sum::<f64>() + weights[d]
}

/// Mean-squared error of `weights` on `data`.
pub fn local_loss(weights: &[f64], data: &Dataset) -> f64 {
    assert_eq!(
        weights.len(),
        data.n_features() + 1,
        "weight/feature dimension mismatch"
    );
    let n = data.len() as f64;
    data.features
        .iter()
        .zip(&data.targets)
        .map(|(row, y)| (predict(weights, row) - y).powi(2))
        .sum::<f64>()
        / n
}

/// Analytic gradient of [`local_loss`].
pub fn mse_gradient(weights: &[f64], data: &Dataset) -> Vec<f64> {
    let d = data.n_features();
    let n = data.len() as f64;
    let mut grad = vec![0.0; d + 1];
    for (row, y) in data.features.iter().zip(&data.targets) {
        let r = predict(weights, row) - y;
        for (g, x) in grad[..d].iter_mut().zip(row) {
            *g += r * x;
        }
        grad[d] += r;
    }
    grad.iter_mut().for_each(|g| *g *= 2.0 / n);
    grad
}

/// Full-batch gradient descent on MSE.
pub fn train_local(init: &LocalModel, data: &Dataset, epochs: usize, lr: f64) -> Result<LocalModel, TrainingError> {
    if !lr.is_finite() || lr <= 0.0 {
        return Err(TrainingError::InvalidInput(format!(
            "learning rate {lr} must be positive"
        )));
    }
    if epochs == 0 {
        return Err(TrainingError::InvalidInput("epochs must be >= 1".into()));
    }
    if init.weights.len() != data.n_features() + 1 {
        return Err(TrainingError::InvalidInput(format!(
            "model has {} weights for {} features",
            init.weights.len(),
            data.n_features()
        )));
    }
    let mut weights = init.weights.clone();
    let mut loss = local_loss(&weights, data);
    for epoch in 0..epochs {
        let grad = mse_gradient(&weights, data);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        loss = local_loss(&weights, data);
        if !loss.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(TrainingError::Divergence { epoch, loss });
        }
    }
    Ok(LocalModel {
        weights,
        train_loss: loss,
    })
}

/// Kind of access made to a vehicle's private dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataAccess {
    Train,
    Loss,
}

/// An on-board unit: owns its dataset and only ever releases trained
/// weights or scalar losses. Every touch of the data is logged.
#[derive(Debug)]
pub struct Vehicle {
    profile: VehicleProfile,
    data: Dataset,
    accesses: Vec<DataAccess>,
}

impl Vehicle {
    pub fn new(profile: VehicleProfile, data: Dataset) -> Self {
        Vehicle {
            profile,
            data,
            accesses: Vec::new(),
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.profile.node_id
    }

    pub fn profile(&self) -> &VehicleProfile {
        &self.profile
    }

    pub fn n_samples(&self) -> usize {
        self.data.len()
    }

    pub fn train(&mut self, init: &LocalModel, epochs: usize, lr: f64) -> Result<LocalModel, TrainingError> {
        self.accesses.push(DataAccess::Train);
        train_local(init, &self.data, epochs, lr)
    }

    pub fn loss(&mut self, weights: &[f64]) -> f64 {
        self.accesses.push(DataAccess::Loss);
        local_loss(weights, &self.data)
    }

    pub fn accesses(&self) -> &[DataAccess] {
        &self.accesses
    }

    /// Byte patterns of every raw value held on board, for leak audits.
    pub fn raw_value_fingerprints(&self) -> Vec<f64> {
        self.data
            .features
            .iter()
            .flatten()
            .chain(&self.data.targets)
            .copied()
            .collect()
    }
}
