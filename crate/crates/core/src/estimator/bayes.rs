//! Grid-Bayes inversion of the sensor model.
//!
//! Every candidate displacement `h` predicts a noise-free signal that is the
//! depth ramp times a fixed linear readout of the unit wrench `v_h`. With
//! independent Gaussian noise the log-likelihood reduces to
//! `z·v_h - v_hᵀ G v_h / 2` where `z` and `G` are computed once per
//! observation, so scoring a hypothesis costs a handful of flops.

use serde::{Deserialize, Serialize};

use super::{EstimatorError, PatchEstimate};
use crate::dataset::DisplacementRange;
use crate::geometry::{ground_truth_patch, GridSpec, Point2, Shape2};
use crate::sensor_sim::{tactile_basis, unit_wrench, ProbeObservation, SensorParams, FT_DIM, TAC_DIM};

/// Sigma floor so noise-free parameter sets still give a proper likelihood.
const MIN_SIGMA: f64 = 1e-9;
/// Hypotheses lighter than this are skipped when accumulating cell marginals.
const NEGLIGIBLE_WEIGHT: f64 = 1e-300;

/// Candidate displacements of the grasped origin in the bottom frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementHypothesisGrid {
    pub offsets: Vec<Point2>,
    pub step: f64,
}

impl DisplacementHypothesisGrid {
    /// Regular lattice with spacing `step` anchored at the range minimum and
    /// extended so the maximum is always included.
    pub fn regular(range: &DisplacementRange, step: f64) -> Result<Self, EstimatorError> {
        if !(step.is_finite() && step > 0.0) {
            return Err(EstimatorError::Config(format!("hypothesis step must be positive, got {step}")));
        }
        range
            .validate()
            .map_err(|e| EstimatorError::Config(e.to_string()))?;
        let axis = |lo: f64, hi: f64| {
            let mut v = Vec::new();
            let mut k = 0usize;
            loop {
                let x = lo + k as f64 * step;
                if x > hi + 1e-9 {
                    break;
                }
                v.push(x.min(hi));
                k += 1;
            }
            if *v.last().unwrap() < hi - 1e-9 {
                v.push(hi);
            }
            v
        };
        let xs = axis(range.x_min, range.x_max);
        let ys = axis(range.y_min, range.y_max);
        let offsets = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Point2::new(x, y)))
            .collect();
        Ok(Self { offsets, step })
    }

    pub fn from_offsets(offsets: Vec<Point2>) -> Self {
        Self { offsets, step: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Normalized posterior over the hypothesis offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesPosterior {
    pub offsets: Vec<Point2>,
    pub weights: Vec<f64>,
}

impl BayesPosterior {
    pub fn map_offset(&self) -> Point2 {
        let best = self
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.offsets[best]
    }
}

/// Precomputed hypothesis patches and wrenches for one top/bottom pair.
#[derive(Clone, Debug)]
pub struct BayesEstimator {
    grid: GridSpec,
    params: SensorParams,
    offsets: Vec<Point2>,
    contact_cells: Vec<Vec<u32>>,
    wrenches: Vec<[f64; 3]>,
    /// Readout rows (Fz, Tx, Ty) -> channel, F/T channels first.
    readout: Vec<[f64; 3]>,
    inv_var: Vec<f64>,
    bias: Vec<f64>,
}

impl BayesEstimator {
    pub fn new(
        top: &Shape2,
        bottom: &Shape2,
        com: Point2,
        grid: &GridSpec,
        hyp: &DisplacementHypothesisGrid,
        params: &SensorParams,
    ) -> Result<Self, EstimatorError> {
        if hyp.is_empty() {
            return Err(EstimatorError::Config("empty hypothesis grid".into()));
        }
        params
            .validate()
            .map_err(|e| EstimatorError::Config(e.to_string()))?;
        let mut contact_cells = Vec::with_capacity(hyp.len());
        let mut wrenches = Vec::with_capacity(hyp.len());
        for &h in &hyp.offsets {
            let patch = ground_truth_patch(top, bottom, h, grid);
            wrenches.push(unit_wrench(&patch, com, params.stiffness_z).as_array());
            contact_cells.push(
                patch
                    .contact
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c)
                    .map(|(i, _)| i as u32)
                    .collect(),
            );
        }

        let mut readout = vec![[0.0; 3]; FT_DIM];
        readout[2] = [1.0, 0.0, 0.0];
        readout[3] = [0.0, 1.0, 0.0];
        readout[4] = [0.0, 0.0, 1.0];
        readout.extend(tactile_basis(params));
        let mut inv_var: Vec<f64> = (0..FT_DIM)
            .map(|ch| params.ft_sigma(ch).max(MIN_SIGMA).powi(-2))
            .collect();
        inv_var.extend(std::iter::repeat_n(params.noise_sigma_tac.max(MIN_SIGMA).powi(-2), TAC_DIM));
        let mut bias = params.ft_bias.to_vec();
        bias.extend(std::iter::repeat_n(0.0, TAC_DIM));

        Ok(Self {
            grid: *grid,
            params: params.clone(),
            offsets: hyp.offsets.clone(),
            contact_cells,
            wrenches,
            readout,
            inv_var,
            bias,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn posterior(&self, obs: &ProbeObservation) -> Result<BayesPosterior, EstimatorError> {
        let steps = self.params.steps();
        if obs.steps() != steps || !obs.is_well_formed() {
            return Err(EstimatorError::Input(format!(
                "observation has {} steps, expected {steps}",
                obs.steps()
            )));
        }
        let mut z = [0.0; 3];
        let mut g = [[0.0; 3]; 3];
        let mut depth2 = 0.0;
        for t in 0..steps {
            let d = self.params.depth(t);
            depth2 += d * d;
            for (ch, row) in self.readout.iter().enumerate() {
                let y = if ch < FT_DIM { obs.ft[t][ch] } else { obs.tac[t][ch - FT_DIM] };
                let r = d * (y - self.bias[ch]) * self.inv_var[ch];
                for k in 0..3 {
                    z[k] += row[k] * r;
                }
            }
        }
        for (ch, row) in self.readout.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    g[a][b] += row[a] * row[b] * self.inv_var[ch] * depth2;
                }
            }
        }
        let log_w: Vec<f64> = self
            .wrenches
            .iter()
            .map(|v| {
                let mut quad = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        quad += v[a] * g[a][b] * v[b];
                    }
                }
                z[0] * v[0] + z[1] * v[1] + z[2] * v[2] - 0.5 * quad
            })
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(BayesPosterior {
            offsets: self.offsets.clone(),
            weights,
        })
    }

    pub fn estimate(&self, obs: &ProbeObservation) -> Result<(PatchEstimate, BayesPosterior), EstimatorError> {
        let post = self.posterior(obs)?;
        let mut probs = vec![0.0; self.grid.len()];
        for (w, cells) in post.weights.iter().zip(&self.contact_cells) {
            if *w < NEGLIGIBLE_WEIGHT {
                continue;
            }
            for &c in cells {
                probs[c as usize] += w;
            }
        }
        probs.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        Ok((
            PatchEstimate {
                grid: self.grid,
                probs,
            },
            post,
        ))
    }
}

/// One-shot convenience wrapper around [`BayesEstimator`].
pub fn estimate_bayes(
    obs: &ProbeObservation,
    top: &Shape2,
    bottom: &Shape2,
    com: Point2,
    grid: &GridSpec,
    hyp: &DisplacementHypothesisGrid,
    params: &SensorParams,
) -> Result<(PatchEstimate, BayesPosterior), EstimatorError> {
    BayesEstimator::new(top, bottom, com, grid, hyp, params)?.estimate(obs)
}
