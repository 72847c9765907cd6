//! Next gripper motion: head for the centre of the believed support region.

use serde::{Deserialize, Serialize};

use crate::belief_filter::{belief_to_patch, BeliefMap, GripperPose};
use crate::geometry::{convex_hull, Point2};

/// Default per-probe motion bound, mm.
pub const DEFAULT_D_MOVE: f64 = 3.0;

/// In-plane gripper displacement, mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
}

impl Action {
    pub const ZERO: Action = Action { dx: 0.0, dy: 0.0 };

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// `v` scaled down to length `d_move` when longer.
    pub fn clipped(v: Point2, d_move: f64) -> Action {
        let n = v.norm();
        let s = if n > d_move { d_move / n } else { 1.0 };
        Action {
            dx: v.x * s,
            dy: v.y * s,
        }
    }
}

/// Target point for the next probe: the area centroid of the hull of cells
/// with probability at least `delta`, or `None` when that hull is degenerate.
pub fn believed_support_center(belief: &BeliefMap, delta: f64) -> Option<Point2> {
    convex_hull(&belief_to_patch(belief, delta))
        .polygon()
        .map(|p| p.centroid())
}

pub fn select_action(belief: &BeliefMap, pose: &GripperPose, delta: f64, d_move: f64) -> Action {
    if let Some(c) = believed_support_center(belief, delta) {
        return Action::clipped(c - pose.position, d_move);
    }
    // No usable support yet: a full step toward the most probable cell.
    let grid = belief.grid();
    let mut best = 0;
    let mut best_l = f64::NEG_INFINITY;
    for i in 0..grid.len() {
        let l = belief.log_odds(i);
        if l > best_l {
            best_l = l;
            best = i;
        }
    }
    let v = grid.cell_center(best) - pose.position;
    let n = v.norm();
    if n == 0.0 {
        Action::ZERO
    } else {
        Action::clipped(v * (d_move / n), d_move)
    }
}
