//! Input channels and temporal pooling for the learned estimators.
//!
//! Each channel's time series is summarized by its mean and its least-squares
//! slope over the press. Under a linear depth ramp these two numbers carry all
//! of the per-channel signal; the encoder then standardizes every feature
//! with statistics fitted on the training set.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::sensor_sim::{ProbeObservation, FT_DIM, TAC_DIM};

pub const POOLED_PER_CHANNEL: usize = 2;
pub const ENCODER_KIND: &str = "temporal-pool(mean,slope)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "FT")]
    Ft,
    #[serde(rename = "Tac")]
    Tac,
    #[serde(rename = "FT+Tac")]
    FtTac,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Ft, Modality::Tac, Modality::FtTac];

    pub fn channels(self) -> usize {
        match self {
            Modality::Ft => FT_DIM,
            Modality::Tac => TAC_DIM,
            Modality::FtTac => FT_DIM + TAC_DIM,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::Ft => "FT",
            Modality::Tac => "Tac",
            Modality::FtTac => "FT+Tac",
        }
    }

    fn step_channels(self, obs: &ProbeObservation, t: usize, out: &mut Vec<f64>) {
        out.clear();
        if matches!(self, Modality::Ft | Modality::FtTac) {
            out.extend_from_slice(&obs.ft[t]);
        }
        if matches!(self, Modality::Tac | Modality::FtTac) {
            out.extend_from_slice(&obs.tac[t]);
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FT" | "ft" => Ok(Modality::Ft),
            "Tac" | "tac" => Ok(Modality::Tac),
            "FT+Tac" | "ft+tac" => Ok(Modality::FtTac),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

/// Raw pooled features, `[mean_0, slope_0, mean_1, slope_1, ...]`.
pub fn pooled_features(obs: &ProbeObservation, modality: Modality) -> Vec<f64> {
    let steps = obs.steps();
    let c = modality.channels();
    let mut sum = vec![0.0; c];
    let mut weighted = vec![0.0; c];
    let t_mean = (steps as f64 - 1.0) / 2.0;
    let mut t_var = 0.0;
    let mut row = Vec::with_capacity(c);
    for t in 0..steps {
        modality.step_channels(obs, t, &mut row);
        let dt = t as f64 - t_mean;
        t_var += dt * dt;
        for (k, &v) in row.iter().enumerate() {
            sum[k] += v;
            weighted[k] += dt * v;
        }
    }
    let n = steps.max(1) as f64;
    let t_var = if t_var > 0.0 { t_var } else { 1.0 };
    let mut out = Vec::with_capacity(c * POOLED_PER_CHANNEL);
    for k in 0..c {
        out.push(sum[k] / n);
        out.push(weighted[k] / t_var);
    }
    out
}

/// Orthonormal projection onto the leading principal directions of the
/// standardized features, each output scaled to unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// One row per component, each of the standardized feature dimension.
    pub components: Vec<Vec<f64>>,
    pub scale: Vec<f64>,
}

impl Projection {
    fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self, EstimatorError> {
        let d = rows[0].len();
        if k == 0 || k > d {
            return Err(EstimatorError::Config(format!(
                "cannot keep {k} principal components of {d} features"
            )));
        }
        let x = DMatrix::from_row_iterator(rows.len(), d, rows.iter().flatten().copied());
        let cov = x.tr_mul(&x) / rows.len() as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Vec::with_capacity(k);
        let mut scale = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // fix the sign so the largest entry is positive
            let big = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if big < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            let sd = eig.eigenvalues[i].max(0.0).sqrt();
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
            components.push(c);
        }
        Ok(Self { components, scale })
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.scale)
            .map(|(c, s)| c.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / s)
            .collect()
    }
}

/// Pooling plus standardization fitted on training data, optionally followed
/// by a principal-component projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub modality: Modality,
    pub steps: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default)]
    pub projection: Option<Projection>,
}

impl FeatureEncoder {
    /// `components == 0` keeps every standardized feature.
    pub fn fit<'a>(
        modality: Modality,
        observations: impl IntoIterator<Item = &'a ProbeObservation>,
        components: usize,
    ) -> Result<Self, EstimatorError> {
        let d = modality.channels() * POOLED_PER_CHANNEL;
        let mut steps = None;
        let mut rows = Vec::new();
        for obs in observations {
            match steps {
                None => steps = Some(obs.steps()),
                Some(s) if s != obs.steps() => {
                    return Err(EstimatorError::Input(format!(
                        "mixed sequence lengths {s} and {}",
                        obs.steps()
                    )))
                }
                _ => {}
            }
            rows.push(pooled_features(obs, modality));
        }
        let steps = steps.ok_or_else(|| EstimatorError::Input("no observations to fit".into()))?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in &rows {
            for k in 0..d {
                var[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|&v| {
                let sd = v.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let projection = if components == 0 {
            None
        } else {
            for r in rows.iter_mut() {
                for k in 0..d {
                    r[k] = (r[k] - mean[k]) / std[k];
                }
            }
            Some(Projection::fit(&rows, components)?)
        };
        Ok(Self {
            modality,
            steps,
            mean,
            std,
            projection,
        })
    }

    /// Length of the encoded vector.
    pub fn dim(&self) -> usize {
        match &self.projection {
            Some(p) => p.components.len(),
            None => self.mean.len(),
        }
    }

    pub fn encode(&self, obs: &ProbeObservation) -> Result<Vec<f64>, EstimatorError> {
        if obs.steps() != self.steps || !obs.is_well_formed() {
            return Err(EstimatorError::Input(format!(
                "expected {} steps of {}+{} channels, got {} steps",
                self.steps,
                FT_DIM,
                TAC_DIM,
                obs.steps()
            )));
        }
        let mut f = pooled_features(obs, self.modality);
        for (k, v) in f.iter_mut().enumerate() {
            *v = (*v - self.mean[k]) / self.std[k];
        }
        Ok(match &self.projection {
            Some(p) => p.apply(&f),
            None => f,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_obs(steps: usize, slope: f64, offset: f64) -> ProbeObservation {
        ProbeObservation {
            tac: (0..steps).map(|t| vec![offset + slope * t as f64; TAC_DIM]).collect(),
            ft: (0..steps).map(|t| [offset + slope * t as f64; FT_DIM]).collect(),
        }
    }

    #[test]
    fn pooling_recovers_mean_and_slope() {
        let obs = ramp_obs(20, 0.5, 2.0);
        let f = pooled_features(&obs, Modality::Ft);
        assert_eq!(f.len(), 12);
        assert!((f[0] - (2.0 + 0.5 * 9.5)).abs() < 1e-12);
        assert!((f[1] - 0.5).abs() < 1e-12);
        assert_eq!(pooled_features(&obs, Modality::Tac).len(), 504);
        assert_eq!(pooled_features(&obs, Modality::FtTac).len(), 516);
    }

    #[test]
    fn encoder_standardizes_and_checks_shape() {
        let obs: Vec<_> = (0..10).map(|k| ramp_obs(20, k as f64, 0.0)).collect();
        let enc = FeatureEncoder::fit(Modality::Ft, &obs, 0).unwrap();
        let encoded: Vec<Vec<f64>> = obs.iter().map(|o| enc.encode(o).unwrap()).collect();
        let m: f64 = encoded.iter().map(|e| e[1]).sum::<f64>() / 10.0;
        let v: f64 = encoded.iter().map(|e| e[1] * e[1]).sum::<f64>() / 10.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        assert!(enc.encode(&ramp_obs(5, 1.0, 0.0)).is_err());
        assert!(FeatureEncoder::fit(Modality::Ft, std::iter::empty(), 0).is_err());
    }

    #[test]
    fn projection_is_whitened_and_orthonormal() {
        let obs: Vec<_> = (0..40)
            .map(|k| {
                let mut o = ramp_obs(6, (k % 7) as f64, (k % 5) as f64);
                o.ft[2][3] += (k * k % 11) as f64;
                o
            })
            .collect();
        let enc = FeatureEncoder::fit(Modality::Ft, &obs, 3).unwrap();
        assert_eq!(enc.dim(), 3);
        let p = enc.projection.as_ref().unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.components[a].iter().zip(&p.components[b]).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        let z: Vec<Vec<f64>> = obs.iter().map(|o| enc.encode(o).unwrap()).collect();
        for k in 0..3 {
            let m: f64 = z.iter().map(|r| r[k]).sum::<f64>() / 40.0;
            let v: f64 = z.iter().map(|r| r[k] * r[k]).sum::<f64>() / 40.0;
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9, "component {k}: {m} {v}");
        }
        assert!(FeatureEncoder::fit(Modality::Ft, &obs, 13).is_err());
    }

    #[test]
    fn modality_names() {
        for m in Modality::ALL {
            assert_eq!(m.label().parse::<Modality>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.label()));
        }
    }
}
