//! Release decision: is the CoM projection inside the support polygon?

use serde::{Deserialize, Serialize};

use crate::estimator::PatchEstimate;
use crate::geometry::{convex_hull, distance_to_degenerate, Hull, PatchMask, Point2};

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub hull: Hull,
    /// Signed distance of the CoM projection to the hull boundary, positive
    /// inside. Negative infinity when there are no support points at all.
    pub margin: f64,
}

/// Compact form of a verdict for logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub stable: bool,
    pub degenerate: bool,
    pub margin: Option<f64>,
}

impl StabilityVerdict {
    pub fn summary(&self) -> VerdictSummary {
        VerdictSummary {
            stable: self.stable,
            degenerate: self.hull.is_degenerate(),
            margin: self.margin.is_finite().then_some(self.margin),
        }
    }
}

/// Verdict for an explicit set of support points.
pub fn assess_points(points: &[Point2], com: Point2) -> StabilityVerdict {
    let hull = convex_hull(points);
    match &hull {
        Hull::Polygon(poly) => {
            let margin = poly.signed_distance(com);
            StabilityVerdict {
                stable: poly.contains(com),
                margin,
                hull,
            }
        }
        Hull::Degenerate => StabilityVerdict {
            stable: false,
            margin: -distance_to_degenerate(com, points),
            hull,
        },
    }
}

/// Hull over the cells with `p >= delta`, then CoM containment.
pub fn assess(est: &PatchEstimate, delta: f64, com: Point2) -> StabilityVerdict {
    assess_points(&est.thresholded_points(delta), com)
}

pub fn ground_truth_verdict(truth: &PatchMask, com: Point2) -> StabilityVerdict {
    assess_points(&truth.contact_points(), com)
}

pub fn ground_truth_stable(truth: &PatchMask, com: Point2) -> bool {
    ground_truth_verdict(truth, com).stable
}
