//! Contact patch estimation from a single probe.
//!
//! Two estimators map a [`ProbeObservation`](crate::sensor_sim::ProbeObservation)
//! to per-cell contact probabilities on the grasped face:
//!
//! * [`bayes`]: exhaustive inversion of the forward sensor model over a grid
//!   of candidate displacements. It is given the true bottom shape and noise
//!   levels, so it serves as a reference for what a single probe can reveal.
//! * [`model`]: a feedforward network over temporally pooled signals, trained
//!   with binary cross-entropy. The same network with a single sigmoid output
//!   is the implicit stability classifier.
//!
//! [`iou`] and [`cell_accuracy`] score an estimate against ground truth.

pub mod bayes;
pub mod features;
pub mod model;
pub mod network;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GridSpec, PatchMask, Point2};

pub use bayes::{estimate_bayes, BayesEstimator, BayesPosterior, DisplacementHypothesisGrid};
pub use features::{FeatureEncoder, Modality};
pub use model::{
    implicit_stability, predict, train, train_implicit, ModelConfig, ModelTarget, TrainedModel,
};

/// Default release threshold on contact probability.
pub const DEFAULT_DELTA: f64 = 0.9;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("grid mismatch between estimate and truth")]
    GridMismatch,
    #[error("input error: {0}")]
    Input(String),
    #[error("non-finite training loss at epoch {epoch} (learning rate {learning_rate})")]
    NumericFailure { epoch: usize, learning_rate: f64 },
    #[error("model file error: {0}")]
    ModelFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-cell contact probabilities over the grasped face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEstimate {
    pub grid: GridSpec,
    pub probs: Vec<f64>,
}

impl PatchEstimate {
    pub fn new(grid: GridSpec, probs: Vec<f64>) -> Result<Self, EstimatorError> {
        if probs.len() != grid.len() {
            return Err(EstimatorError::Input(format!(
                "{} probabilities for a grid of {} cells",
                probs.len(),
                grid.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(EstimatorError::Input(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { grid, probs })
    }

    pub fn uniform(grid: GridSpec, p: f64) -> Self {
        Self {
            grid,
            probs: vec![p; grid.len()],
        }
    }

    /// Indicator estimate: 1 on contact cells, 0 elsewhere.
    pub fn from_mask(mask: &PatchMask) -> Self {
        Self {
            grid: mask.grid,
            probs: mask.contact.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn thresholded(&self, delta: f64) -> PatchMask {
        PatchMask {
            grid: self.grid,
            contact: self.probs.iter().map(|&p| p >= delta).collect(),
        }
    }

    pub fn thresholded_points(&self, delta: f64) -> Vec<Point2> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= delta)
            .map(|(i, _)| self.grid.cell_center(i))
            .collect()
    }
}

fn check_grids(est: &PatchEstimate, truth: &PatchMask) -> Result<(), EstimatorError> {
    if est.grid.approx_eq(&truth.grid) && est.probs.len() == truth.contact.len() {
        Ok(())
    } else {
        Err(EstimatorError::GridMismatch)
    }
}

/// `|{p >= delta} ∩ truth| / |{p >= delta} ∪ truth|`; 1 when both sets are
/// empty, 0 when exactly one is.
pub fn iou(est: &PatchEstimate, truth: &PatchMask, delta: f64) -> Result<f64, EstimatorError> {
    check_grids(est, truth)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in est.probs.iter().zip(&truth.contact) {
        let e = p >= delta;
        inter += (e && t) as usize;
        union += (e || t) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Fraction of cells where the thresholded estimate equals the truth.
pub fn cell_accuracy(est: &PatchEstimate, truth: &PatchMask, delta: f64) -> Result<f64, EstimatorError> {
    check_grids(est, truth)?;
    let agree = est
        .probs
        .iter()
        .zip(&truth.contact)
        .filter(|(&p, &t)| (p >= delta) == t)
        .count();
    Ok(agree as f64 / truth.contact.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(Point2::ORIGIN, 1.0, 4, 4).unwrap()
    }

    fn mask(cells: &[usize]) -> PatchMask {
        let mut m = PatchMask::empty(grid());
        for &c in cells {
            m.contact[c] = true;
        }
        m
    }

    #[test]
    fn iou_examples() {
        let truth = mask(&[0, 1, 2, 3]);
        let same = PatchEstimate::from_mask(&truth);
        assert_eq!(iou(&same, &truth, 0.9).unwrap(), 1.0);
        let disjoint = PatchEstimate::from_mask(&mask(&[8, 9]));
        assert_eq!(iou(&disjoint, &truth, 0.9).unwrap(), 0.0);
        let covers = PatchEstimate::from_mask(&mask(&[0, 1, 2, 3, 4, 5, 6, 7]));
        assert_eq!(iou(&covers, &truth, 0.9).unwrap(), 0.5);
        let nothing = PatchEstimate::uniform(grid(), 0.0);
        assert_eq!(iou(&nothing, &mask(&[]), 0.9).unwrap(), 1.0);
        assert_eq!(iou(&nothing, &truth, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_examples() {
        let truth = mask(&[0, 5, 10, 15]);
        let perfect = PatchEstimate::from_mask(&truth);
        assert_eq!(cell_accuracy(&perfect, &truth, 0.9).unwrap(), 1.0);
        let inverted = PatchEstimate {
            grid: grid(),
            probs: perfect.probs.iter().map(|p| 1.0 - p).collect(),
        };
        assert_eq!(cell_accuracy(&inverted, &truth, 0.9).unwrap(), 0.0);
        let mut half = perfect.clone();
        for p in half.probs.iter_mut().take(8) {
            *p = 1.0 - *p;
        }
        assert_eq!(cell_accuracy(&half, &truth, 0.9).unwrap(), 0.5);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let other = GridSpec::new(Point2::ORIGIN, 1.0, 3, 3).unwrap();
        let est = PatchEstimate::uniform(other, 0.5);
        assert!(matches!(iou(&est, &mask(&[]), 0.9), Err(EstimatorError::GridMismatch)));
        assert!(matches!(cell_accuracy(&est, &mask(&[]), 0.9), Err(EstimatorError::GridMismatch)));
    }

    #[test]
    fn estimate_validation() {
        assert!(PatchEstimate::new(grid(), vec![0.5; 15]).is_err());
        let mut probs = vec![0.5; 16];
        probs[3] = 1.5;
        assert!(PatchEstimate::new(grid(), probs).is_err());
        let mut probs = vec![0.5; 16];
        probs[3] = f64::NAN;
        assert!(PatchEstimate::new(grid(), probs).is_err());
    }
}
