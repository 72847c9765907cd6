//! World-frame belief over where the supporting surface exists.
//!
//! Each cell holds independent Bernoulli evidence in log-odds form. A probe
//! estimate on the grasped face is shifted into the world by the gripper pose
//! and every covered cell receives `logit(clip(p))`. The running sum is kept
//! unclamped and the ±`L_MAX` clamp is applied whenever the map is read, so
//! the result never depends on the order of updates.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::PatchEstimate;
use crate::geometry::{GridSpec, PatchMask, Point2};
use crate::policy::Action;

/// Probabilities are clipped into `[PROB_CLIP, 1 - PROB_CLIP]` before the logit.
pub const PROB_CLIP: f64 = 1e-4;
/// Read-side clamp on cell log-odds.
pub const L_MAX: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("pose {0} lies outside the belief grid")]
    Extent(Point2),
    #[error("estimate spacing {est} does not match belief spacing {belief}")]
    Spacing { est: f64, belief: f64 },
    #[error("footprint grid differs from the estimate grid")]
    Footprint,
    #[error("non-finite pose")]
    NonFinite,
}

pub fn logistic(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Evidence contributed by one estimated probability.
pub fn evidence(p: f64) -> f64 {
    logit(p.clamp(PROB_CLIP, 1.0 - PROB_CLIP))
}

/// Position of the grasped-object origin in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperPose {
    pub position: Point2,
    pub probe_index: usize,
}

impl GripperPose {
    pub fn new(position: Point2) -> Self {
        Self {
            position,
            probe_index: 0,
        }
    }

    pub fn apply(&self, action: Action) -> GripperPose {
        GripperPose {
            position: self.position + Point2::new(action.dx, action.dy),
            probe_index: self.probe_index + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefMap {
    grid: GridSpec,
    evidence: Vec<f64>,
    clamp: f64,
}

pub fn init_belief(grid: GridSpec) -> BeliefMap {
    BeliefMap {
        grid,
        evidence: vec![0.0; grid.len()],
        clamp: L_MAX,
    }
}

/// Motion model: the supporting surface does not move, whatever the gripper does.
pub fn predict_step(belief: &BeliefMap, _action: Action) -> BeliefMap {
    belief.clone()
}

/// Add the evidence of `est` over every grasped-face cell, placed at `pose`.
pub fn measurement_update(
    belief: &BeliefMap,
    est: &PatchEstimate,
    pose: &GripperPose,
) -> Result<BeliefMap, BeliefError> {
    let mut next = belief.clone();
    next.update_in_place(est, pose, None)?;
    Ok(next)
}

/// As [`measurement_update`], restricted to the cells set in `footprint`
/// (normally the grasped face itself, so corners of its bounding grid are
/// not mistaken for evidence).
pub fn measurement_update_masked(
    belief: &BeliefMap,
    est: &PatchEstimate,
    pose: &GripperPose,
    footprint: &PatchMask,
) -> Result<BeliefMap, BeliefError> {
    let mut next = belief.clone();
    next.update_in_place(est, pose, Some(footprint))?;
    Ok(next)
}

/// World points of cells whose probability reaches `delta`.
pub fn belief_to_patch(belief: &BeliefMap, delta: f64) -> Vec<Point2> {
    (0..belief.grid.len())
        .filter(|&i| belief.probability(i) >= delta)
        .map(|i| belief.grid.cell_center(i))
        .collect()
}

impl BeliefMap {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    /// Clamped log-odds of cell `i`.
    pub fn log_odds(&self, i: usize) -> f64 {
        self.evidence[i].clamp(-self.clamp, self.clamp)
    }

    pub fn probability(&self, i: usize) -> f64 {
        logistic(self.log_odds(i))
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.evidence.len()).map(|i| self.probability(i)).collect()
    }

    /// Unclamped accumulated evidence.
    pub fn raw_evidence(&self) -> &[f64] {
        &self.evidence
    }

    /// Add per-cell log-odds directly; used for batch updates.
    pub fn add_log_odds(&mut self, i: usize, l: f64) {
        self.evidence[i] += l;
    }

    pub fn thresholded(&self, delta: f64) -> PatchMask {
        PatchMask {
            grid: self.grid,
            contact: (0..self.grid.len()).map(|i| self.probability(i) >= delta).collect(),
        }
    }

    /// Pose rounded to the nearest multiple of the grid spacing.
    pub fn snap(&self, p: Point2) -> Point2 {
        let s = self.grid.spacing;
        Point2::new((p.x / s).round() * s, (p.y / s).round() * s)
    }

    fn check_pose(&self, pose: &GripperPose, spacing: f64) -> Result<Point2, BeliefError> {
        if !pose.position.is_finite() {
            return Err(BeliefError::NonFinite);
        }
        if (spacing - self.grid.spacing).abs() > 1e-9 {
            return Err(BeliefError::Spacing {
                est: spacing,
                belief: self.grid.spacing,
            });
        }
        if self.grid.cell_of(pose.position).is_none() {
            return Err(BeliefError::Extent(pose.position));
        }
        Ok(self.snap(pose.position))
    }

    fn update_in_place(
        &mut self,
        est: &PatchEstimate,
        pose: &GripperPose,
        footprint: Option<&PatchMask>,
    ) -> Result<(), BeliefError> {
        let shift = self.check_pose(pose, est.grid.spacing)?;
        if let Some(f) = footprint {
            if !f.grid.approx_eq(&est.grid) {
                return Err(BeliefError::Footprint);
            }
        }
        for (j, &p) in est.probs.iter().enumerate() {
            if footprint.is_some_and(|f| !f.contact[j]) {
                continue;
            }
            if let Some(i) = self.grid.cell_of(est.grid.cell_center(j) + shift) {
                self.evidence[i] += evidence(p);
            }
        }
        Ok(())
    }

    /// The belief as seen from the grasped face at `pose`: cell `j` of
    /// `grid` gets the probability of the world cell under it, or 0.5 when
    /// that cell is outside the belief grid.
    pub fn view_at(&self, grid: &GridSpec, pose: &GripperPose) -> Result<PatchEstimate, BeliefError> {
        let shift = self.check_pose(pose, grid.spacing)?;
        let probs = (0..grid.len())
            .map(|j| {
                self.grid
                    .cell_of(grid.cell_center(j) + shift)
                    .map_or(0.5, |i| self.probability(i))
            })
            .collect();
        Ok(PatchEstimate { grid: *grid, probs })
    }

    /// Dense decimal text, top row first, cells separated by spaces.
    pub fn write_dense<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# origin {} {} spacing {} nx {} ny {}",
            self.grid.origin.x, self.grid.origin.y, self.grid.spacing, self.grid.nx, self.grid.ny
        )?;
        for iy in (0..self.grid.ny).rev() {
            let row: Vec<String> = (0..self.grid.nx)
                .map(|ix| format!("{:.6}", self.probability(self.grid.index(ix, iy))))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}
