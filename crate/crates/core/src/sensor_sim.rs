//! Synthetic tactile and wrist force/torque signals for a single press.
//!
//! The grasped object is pushed straight down by `press_depth` over
//! `duration` seconds against a stiffness of `stiffness_z`. Pressure is taken
//! as uniform over the contact cells, so the normal force only depends on
//! whether there is contact and the moments about the centre of mass depend on
//! the contact centroid:
//!
//! ```text
//! Fz = -k * depth(t)
//! Tx =  Fz * (cy - com_y)
//! Ty = -Fz * (cx - com_x)
//! ```
//!
//! Marker displacements on the two gels are a fixed linear readout of
//! `(Fz, Tx, Ty)`: a uniform shear from `Fz`, a differential shear between the
//! two fingers from `Tx` and an in-plane rotation field from `Ty`.
//! Gaussian noise is added independently per step and channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sample_contact_displacement, DisplacementRange};
use crate::geometry::{ground_truth_patch, GridSpec, PatchMask, Point2, Shape2};
use crate::rng::derive_seed;

pub const SENSORS: usize = 2;
pub const MARKER_ROWS: usize = 7;
pub const MARKER_COLS: usize = 9;
pub const MARKERS_PER_SENSOR: usize = MARKER_ROWS * MARKER_COLS;
/// Two gels, 63 markers each, XY displacement per marker.
pub const TAC_DIM: usize = SENSORS * MARKERS_PER_SENSOR * 2;
pub const FT_DIM: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor parameter {name}: {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    /// N/mm
    pub stiffness_z: f64,
    /// mm
    pub press_depth: f64,
    /// s
    pub duration: f64,
    /// Hz
    pub rate: f64,
    /// marker units per N
    pub tactile_gain_force: f64,
    /// marker units per N·mm
    pub tactile_gain_moment: f64,
    /// N, applied to Fx, Fy, Fz
    pub noise_sigma_force: f64,
    /// N·mm, applied to Tx, Ty, Tz
    pub noise_sigma_moment: f64,
    /// marker units
    pub noise_sigma_tac: f64,
    /// Constant offset added to every F/T sample (Fx, Fy, Fz, Tx, Ty, Tz).
    pub ft_bias: [f64; FT_DIM],
    pub seed: u64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            stiffness_z: 15.0,
            press_depth: 1.5,
            duration: 2.0,
            rate: 10.0,
            tactile_gain_force: 0.02,
            tactile_gain_moment: 0.004,
            noise_sigma_force: 2.0,
            noise_sigma_moment: 160.0,
            noise_sigma_tac: 2.0,
            ft_bias: [0.0; FT_DIM],
            seed: 0,
        }
    }
}

impl SensorParams {
    /// Same parameters with every noise source switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_sigma_force: 0.0,
            noise_sigma_moment: 0.0,
            noise_sigma_tac: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let positive = [
            ("stiffness_z", self.stiffness_z),
            ("press_depth", self.press_depth),
            ("duration", self.duration),
            ("rate", self.rate),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SensorError::InvalidParam { name, value });
            }
        }
        let non_negative = [
            ("noise_sigma_force", self.noise_sigma_force),
            ("noise_sigma_moment", self.noise_sigma_moment),
            ("noise_sigma_tac", self.noise_sigma_tac),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SensorError::InvalidParam { name, value });
            }
        }
        for (name, value) in [
            ("tactile_gain_force", self.tactile_gain_force),
            ("tactile_gain_moment", self.tactile_gain_moment),
        ] {
            if !value.is_finite() {
                return Err(SensorError::InvalidParam { name, value });
            }
        }
        if let Some(&b) = self.ft_bias.iter().find(|b| !b.is_finite()) {
            return Err(SensorError::InvalidParam {
                name: "ft_bias",
                value: b,
            });
        }
        if self.steps() == 0 {
            return Err(SensorError::InvalidParam {
                name: "duration*rate",
                value: self.duration * self.rate,
            });
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration * self.rate).round().max(0.0) as usize
    }

    /// Commanded depth at step `t`, ramping linearly up to `press_depth` at the last step.
    pub fn depth(&self, t: usize) -> f64 {
        self.press_depth * (t + 1) as f64 / self.steps() as f64
    }

    /// Noise standard deviation of F/T channel `ch`.
    pub fn ft_sigma(&self, ch: usize) -> f64 {
        if ch < 3 {
            self.noise_sigma_force
        } else {
            self.noise_sigma_moment
        }
    }
}

/// Normal force and moments about the CoM projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub fz: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Wrench {
    pub fn scale(self, k: f64) -> Wrench {
        Wrench {
            fz: self.fz * k,
            tx: self.tx * k,
            ty: self.ty * k,
        }
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.fz, self.tx, self.ty]
    }
}

/// Noise-free wrench per millimetre of press depth.
pub fn unit_wrench(patch: &PatchMask, com: Point2, stiffness_z: f64) -> Wrench {
    match patch.contact_centroid() {
        None => Wrench::default(),
        Some(c) => {
            let fz = -stiffness_z;
            Wrench {
                fz,
                tx: fz * (c.y - com.y),
                ty: -fz * (c.x - com.x),
            }
        }
    }
}

/// Normalized position of marker `m` on its gel, both coordinates in [-1, 1].
pub fn marker_position(m: usize) -> (f64, f64) {
    let row = m / MARKER_COLS;
    let col = m % MARKER_COLS;
    (
        -1.0 + 2.0 * col as f64 / (MARKER_COLS - 1) as f64,
        -1.0 + 2.0 * row as f64 / (MARKER_ROWS - 1) as f64,
    )
}

/// Index of the x component of marker `m` on gel `sensor`; y follows at +1.
pub fn tac_index(sensor: usize, m: usize) -> usize {
    (sensor * MARKERS_PER_SENSOR + m) * 2
}

/// Noise-free marker displacements for a wrench.
pub fn tactile_readout(w: Wrench, params: &SensorParams) -> Vec<f64> {
    let mut out = vec![0.0; TAC_DIM];
    let basis = tactile_basis(params);
    for (i, row) in basis.iter().enumerate() {
        out[i] = row[0] * w.fz + row[1] * w.tx + row[2] * w.ty;
    }
    out
}

/// Rows of the linear map (Fz, Tx, Ty) -> marker displacement.
pub fn tactile_basis(params: &SensorParams) -> Vec<[f64; 3]> {
    let g1 = params.tactile_gain_force;
    let g2 = params.tactile_gain_moment;
    let mut rows = vec![[0.0; 3]; TAC_DIM];
    for sensor in 0..SENSORS {
        // The two gels face each other, so their images are mirrored.
        let sign = if sensor == 0 { 1.0 } else { -1.0 };
        for m in 0..MARKERS_PER_SENSOR {
            let (a, b) = marker_position(m);
            let i = tac_index(sensor, m);
            rows[i] = [0.0, 0.0, -sign * g2 * b];
            rows[i + 1] = [g1, sign * g2, sign * g2 * a];
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeObservation {
    /// One marker-displacement vector of length [`TAC_DIM`] per step.
    pub tac: Vec<Vec<f64>>,
    /// (Fx, Fy, Fz, Tx, Ty, Tz) per step.
    pub ft: Vec<[f64; FT_DIM]>,
}

impl ProbeObservation {
    pub fn steps(&self) -> usize {
        self.ft.len()
    }

    pub fn is_well_formed(&self) -> bool {
        self.tac.len() == self.ft.len()
            && self.tac.iter().all(|v| v.len() == TAC_DIM && v.iter().all(|x| x.is_finite()))
            && self.ft.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn final_ft(&self) -> Option<&[f64; FT_DIM]> {
        self.ft.last()
    }

    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.tac {
            v.iter_mut().for_each(|x| *x = f(*x));
        }
        for v in &mut self.ft {
            v.iter_mut().for_each(|x| *x = f(*x));
        }
    }
}

/// Forward model for one press. Deterministic given `stream_seed`.
pub fn simulate_probe(
    patch: &PatchMask,
    com: Point2,
    params: &SensorParams,
    stream_seed: u64,
) -> Result<ProbeObservation, SensorError> {
    params.validate()?;
    let steps = params.steps();
    let unit = unit_wrench(patch, com, params.stiffness_z);
    let basis = tactile_basis(params);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut tac = Vec::with_capacity(steps);
    let mut ft = Vec::with_capacity(steps);
    for t in 0..steps {
        let w = unit.scale(params.depth(t));
        let clean_ft = [0.0, 0.0, w.fz, w.tx, w.ty, 0.0];
        let mut ft_t = [0.0; FT_DIM];
        for ch in 0..FT_DIM {
            ft_t[ch] = clean_ft[ch] + params.ft_bias[ch] + params.ft_sigma(ch) * normal();
        }
        let tac_t: Vec<f64> = basis
            .iter()
            .map(|row| row[0] * w.fz + row[1] * w.tx + row[2] * w.ty + params.noise_sigma_tac * normal())
            .collect();
        ft.push(ft_t);
        tac.push(tac_t);
    }
    Ok(ProbeObservation { tac, ft })
}

/// One row of the signal distribution table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub x: f64,
    pub y: f64,
    pub max_abs_tac_x: f64,
    pub max_abs_tac_y: f64,
    pub tx: f64,
    pub ty: f64,
    pub fz: f64,
}

pub const SIGNAL_COLUMNS: [&str; 7] = ["x", "y", "max_abs_tac_x", "max_abs_tac_y", "tx", "ty", "fz"];

/// Summarize the final step of a probe at displacement `offset`.
pub fn signal_record(offset: Point2, obs: &ProbeObservation) -> SignalRecord {
    let last_tac = obs.tac.last().map(Vec::as_slice).unwrap_or(&[]);
    let max_abs = |comp: usize| {
        last_tac
            .iter()
            .skip(comp)
            .step_by(2)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let ft = obs.final_ft().copied().unwrap_or([0.0; FT_DIM]);
    SignalRecord {
        x: offset.x,
        y: offset.y,
        max_abs_tac_x: max_abs(0),
        max_abs_tac_y: max_abs(1),
        tx: ft[3],
        ty: ft[4],
        fz: ft[2],
    }
}

/// Signal summaries over `n_samples` random contact displacements, in the
/// layout used for plotting the training-data distribution.
#[allow(clippy::too_many_arguments)]
pub fn signal_distribution_report(
    top: &Shape2,
    bottom: &Shape2,
    com: Point2,
    range: &DisplacementRange,
    grid: &GridSpec,
    n_samples: usize,
    params: &SensorParams,
    seed: u64,
) -> Result<Vec<SignalRecord>, crate::dataset::DatasetError> {
    params.validate()?;
    let mut records = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let offset = sample_contact_displacement(top, bottom, range, grid, derive_seed(seed, &[0, i as u64]))
            .ok_or_else(|| crate::dataset::DatasetError::NoContact {
                top: "top".into(),
                bottom: "bottom".into(),
                attempts: crate::dataset::MAX_REJECTION_ATTEMPTS,
            })?;
        let patch = ground_truth_patch(top, bottom, offset, grid);
        let obs = simulate_probe(&patch, com, params, derive_seed(seed, &[1, i as u64]))?;
        records.push(signal_record(offset, &obs));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape2;

    fn zero_noise() -> SensorParams {
        SensorParams::default().noiseless()
    }

    fn disc_grid(d: f64) -> (Shape2, GridSpec) {
        let s = Shape2::centered_disc(d).unwrap();
        let g = GridSpec::for_shape(&s, 1.0).unwrap();
        (s, g)
    }

    #[test]
    fn empty_patch_gives_zero_signal() {
        let (_, grid) = disc_grid(10.0);
        let obs = simulate_probe(&PatchMask::empty(grid), Point2::ORIGIN, &zero_noise(), 7).unwrap();
        assert_eq!(obs.steps(), 20);
        assert!(obs.ft.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        assert!(obs.tac.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn symmetric_patch_has_no_moment() {
        let (top, grid) = disc_grid(15.0);
        let big = Shape2::centered_disc(25.0).unwrap();
        let patch = ground_truth_patch(&top, &big, Point2::ORIGIN, &grid);
        let obs = simulate_probe(&patch, Point2::ORIGIN, &zero_noise(), 1).unwrap();
        for ft in &obs.ft {
            assert!(ft[3].abs() < 1e-12 && ft[4].abs() < 1e-12);
        }
        assert!((obs.ft[19][2] + 22.5).abs() < 1e-12);
    }

    #[test]
    fn offset_centroid_moment() {
        // Single contact cell centred at (+5, 0).
        let grid = GridSpec::covering(Point2::new(-8.0, -8.0), Point2::new(8.0, 8.0), 1.0).unwrap();
        let mut patch = PatchMask::empty(grid);
        let idx = grid.cell_of(Point2::new(5.0, 0.0)).unwrap();
        patch.contact[idx] = true;
        let c = grid.cell_center(idx);
        let mut patch2 = PatchMask::empty(grid);
        // symmetric pair around (5, 0) so the centroid is exactly on the axis
        patch2.contact[grid.cell_of(Point2::new(5.2, 0.2)).unwrap()] = true;
        patch2.contact[grid.cell_of(Point2::new(4.8, -0.2)).unwrap()] = true;
        let com = Point2::new(c.x - 5.0, c.y);
        let obs = simulate_probe(&patch, com, &zero_noise(), 3).unwrap();
        let last = obs.ft[19];
        assert!((last[4] - 112.5).abs() < 1e-9, "Ty = {}", last[4]);
        assert!(last[3].abs() < 1e-12);
        let c2 = patch2.contact_centroid().unwrap();
        let obs2 = simulate_probe(&patch2, Point2::new(c2.x - 5.0, c2.y), &zero_noise(), 3).unwrap();
        assert!((obs2.ft[19][4] - 112.5).abs() < 1e-9);
    }

    #[test]
    fn fz_ramps_and_depth_is_linear() {
        let (top, grid) = disc_grid(15.0);
        let bottom = Shape2::centered_disc(15.0).unwrap();
        let patch = ground_truth_patch(&top, &bottom, Point2::new(4.0, -3.0), &grid);
        let p = zero_noise();
        let obs = simulate_probe(&patch, Point2::ORIGIN, &p, 0).unwrap();
        for w in obs.ft.windows(2) {
            assert!(w[1][2].abs() >= w[0][2].abs());
        }
        let deep = SensorParams {
            press_depth: 3.0,
            ..p.clone()
        };
        let obs2 = simulate_probe(&patch, Point2::ORIGIN, &deep, 0).unwrap();
        for (a, b) in obs.ft.iter().zip(&obs2.ft) {
            for ch in 2..5 {
                assert!((2.0 * a[ch] - b[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_per_stream() {
        let (top, grid) = disc_grid(15.0);
        let patch = ground_truth_patch(&top, &top, Point2::new(3.0, 1.0), &grid);
        let p = SensorParams::default();
        let a = simulate_probe(&patch, Point2::ORIGIN, &p, 42).unwrap();
        let b = simulate_probe(&patch, Point2::ORIGIN, &p, 42).unwrap();
        let c = simulate_probe(&patch, Point2::ORIGIN, &p, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_well_formed());
    }

    #[test]
    fn equal_centroid_patches_are_indistinguishable() {
        let grid = GridSpec::covering(Point2::new(-8.0, -8.0), Point2::new(8.0, 8.0), 1.0).unwrap();
        let mut horizontal = PatchMask::empty(grid);
        let mut vertical = PatchMask::empty(grid);
        for k in -2..=2 {
            horizontal.contact[grid.cell_of(Point2::new(k as f64 + 2.5, 1.5)).unwrap()] = true;
            vertical.contact[grid.cell_of(Point2::new(2.5, k as f64 + 1.5)).unwrap()] = true;
        }
        assert_ne!(horizontal, vertical);
        let p = zero_noise();
        let a = simulate_probe(&horizontal, Point2::new(0.3, -0.2), &p, 5).unwrap();
        let b = simulate_probe(&vertical, Point2::new(0.3, -0.2), &p, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tactile_readout_is_linear_and_separates_fingers() {
        let p = SensorParams::default();
        let w1 = Wrench { fz: -10.0, tx: 20.0, ty: -5.0 };
        let w2 = Wrench { fz: 3.0, tx: -1.0, ty: 7.0 };
        let sum = Wrench { fz: w1.fz + w2.fz, tx: w1.tx + w2.tx, ty: w1.ty + w2.ty };
        let (a, b, s) = (tactile_readout(w1, &p), tactile_readout(w2, &p), tactile_readout(sum, &p));
        for i in 0..TAC_DIM {
            assert!((a[i] + b[i] - s[i]).abs() < 1e-12);
        }
        // Tx alone shears the two gels in opposite directions.
        let tx_only = tactile_readout(Wrench { fz: 0.0, tx: 10.0, ty: 0.0 }, &p);
        let m = MARKERS_PER_SENSOR / 2;
        assert!((tx_only[tac_index(0, m) + 1] + tx_only[tac_index(1, m) + 1]).abs() < 1e-12);
        assert!(tx_only[tac_index(0, m) + 1] > 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        let (_, grid) = disc_grid(10.0);
        let bad = SensorParams {
            rate: 0.0,
            ..SensorParams::default()
        };
        assert!(matches!(
            simulate_probe(&PatchMask::empty(grid), Point2::ORIGIN, &bad, 0),
            Err(SensorError::InvalidParam { name: "rate", .. })
        ));
        let bad = SensorParams {
            noise_sigma_tac: -1.0,
            ..SensorParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn distribution_report() {
        let top = Shape2::centered_disc(20.0).unwrap();
        let bottom = Shape2::centered_disc(25.0).unwrap();
        let grid = GridSpec::for_shape(&top, 1.0).unwrap();
        let range = DisplacementRange::default_for(&top, &bottom);
        let p = zero_noise();
        let empty = signal_distribution_report(&top, &bottom, Point2::ORIGIN, &range, &grid, 0, &p, 1).unwrap();
        assert!(empty.is_empty());

        let centered = ground_truth_patch(&top, &bottom, Point2::ORIGIN, &grid);
        let rec = signal_record(Point2::ORIGIN, &simulate_probe(&centered, Point2::ORIGIN, &p, 0).unwrap());
        assert!(rec.tx.abs() < 1e-9 && rec.ty.abs() < 1e-9);

        let recs = signal_distribution_report(&top, &bottom, Point2::ORIGIN, &range, &grid, 2000, &p, 9).unwrap();
        assert_eq!(recs.len(), 2000);
        let argmax = recs
            .iter()
            .max_by(|a, b| a.ty.abs().total_cmp(&b.ty.abs()))
            .unwrap();
        let max_x = recs.iter().map(|r| r.x.abs()).fold(0.0, f64::max);
        assert!(argmax.x.abs() >= 0.75 * max_x, "argmax at x={}, max |x|={}", argmax.x, max_x);
    }
}
