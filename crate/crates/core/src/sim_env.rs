//! Closed-loop stacking episodes and the stability evaluation protocol.
//!
//! The world frame is fixed to the lowest bottom object. A tower is a list of
//! bottom faces placed at world positions; the grasped object only ever
//! touches the last (highest) one. Each extra level adds a compliant
//! interface in series with the press stiffness, which weakens every signal.
//!
//! All gripper poses are kept on multiples of the belief grid spacing, so
//! cells of the grasped face land exactly on world cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief_filter::{
    init_belief, measurement_update_masked, BeliefError, BeliefMap, GripperPose,
};
use crate::dataset::{sample_contact_displacement, DisplacementRange};
use crate::estimator::{
    implicit_stability, iou, BayesEstimator, EstimatorError, PatchEstimate, TrainedModel,
};
use crate::geometry::{ground_truth_patch, GeometryError, GridSpec, PatchMask, Point2, Shape2};
use crate::policy::{select_action, Action, DEFAULT_D_MOVE};
use crate::rng::derive_seed;
use crate::sensor_sim::{simulate_probe, ProbeObservation, SensorError, SensorParams};
use crate::stability::{assess, ground_truth_stable, ground_truth_verdict, VerdictSummary};

pub const DEFAULT_MAX_PROBES: usize = 10;
pub const DEFAULT_INIT_MARGIN: f64 = -1.0;
/// Offset of the upper bottom in a two-level tower, mm.
pub const TOWER_OFFSET: f64 = 6.0;
/// Stiffness of each object-on-object interface below the contact, N/mm.
pub const DEFAULT_INTERFACE_STIFFNESS: f64 = 30.0;
/// Radius around the query pose within which stability trials re-probe, mm.
pub const DEFAULT_TRIAL_JITTER: f64 = 1.0;
const MAX_INIT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no start pose satisfying the unstable-start rule after {0} draws")]
    NoUnstableStart(usize),
}

/// A named flat face with its CoM projection in its own frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub name: String,
    pub shape: Shape2,
    #[serde(default = "origin")]
    pub com: Point2,
}

fn origin() -> Point2 {
    Point2::ORIGIN
}

impl Piece {
    pub fn disc(name: &str, diameter: f64) -> Self {
        Self {
            name: name.to_string(),
            shape: Shape2::centered_disc(diameter).expect("positive diameter"),
            com: Point2::ORIGIN,
        }
    }

    pub fn square(name: &str, side: f64) -> Self {
        Self {
            name: name.to_string(),
            shape: Shape2::centered_square(side).expect("positive side"),
            com: Point2::ORIGIN,
        }
    }
}

/// Grasped pieces: Mushroom, Barrel and Pot.
pub fn default_tops() -> Vec<Piece> {
    vec![
        Piece::disc("Mushroom", 18.0),
        Piece::disc("Barrel", 20.0),
        Piece::disc("Pot", 25.0),
    ]
}

/// Board primitives used for training data.
pub fn training_bottoms() -> Vec<Piece> {
    vec![
        Piece::disc("disc15", 15.0),
        Piece::disc("disc25", 25.0),
        Piece::square("square15", 15.0),
    ]
}

/// Held-out bottoms for evaluation and stacking.
pub fn eval_bottoms() -> Vec<Piece> {
    vec![Piece::disc("Short", 20.0), Piece::disc("Long", 20.0)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedBottom {
    pub piece: Piece,
    /// World position of the piece origin.
    pub position: Point2,
}

/// Stack of bottom objects, lowest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub name: String,
    pub levels: Vec<PlacedBottom>,
}

impl Tower {
    pub fn single(piece: Piece) -> Self {
        Self {
            name: piece.name.clone(),
            levels: vec![PlacedBottom {
                piece,
                position: Point2::ORIGIN,
            }],
        }
    }

    /// `upper` resting on `lower`, shifted by [`TOWER_OFFSET`] along x.
    pub fn stacked(lower: Piece, upper: Piece) -> Self {
        Self {
            name: format!("{}+{}", lower.name, upper.name),
            levels: vec![
                PlacedBottom {
                    piece: lower,
                    position: Point2::ORIGIN,
                },
                PlacedBottom {
                    piece: upper,
                    position: Point2::new(TOWER_OFFSET, 0.0),
                },
            ],
        }
    }

    pub fn surface(&self) -> &PlacedBottom {
        self.levels.last().expect("tower has at least one level")
    }

    /// The contacted face in world coordinates.
    pub fn surface_world(&self) -> Shape2 {
        let s = self.surface();
        s.piece.shape.translate(s.position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub top: Piece,
    pub tower: Tower,
    pub max_probes: usize,
    pub delta: f64,
    pub d_move: f64,
    pub seed: u64,
    /// Pick & Place: release at first contact without estimating anything.
    pub release_immediately: bool,
    /// Start poses must have a true stability margin at most this value.
    pub init_margin: f64,
    pub spacing: f64,
    pub sensor: SensorParams,
    pub interface_stiffness: f64,
}

impl EpisodeConfig {
    pub fn new(top: Piece, tower: Tower, seed: u64) -> Self {
        Self {
            top,
            tower,
            max_probes: DEFAULT_MAX_PROBES,
            delta: crate::estimator::DEFAULT_DELTA,
            d_move: DEFAULT_D_MOVE,
            seed,
            release_immediately: false,
            init_margin: DEFAULT_INIT_MARGIN,
            spacing: 1.0,
            sensor: SensorParams::default(),
            interface_stiffness: DEFAULT_INTERFACE_STIFFNESS,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.tower.levels.is_empty() {
            return Err(SimError::Config("tower has no levels".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SimError::Config(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if !(self.d_move.is_finite() && self.d_move > 0.0) {
            return Err(SimError::Config(format!("d_move must be positive, got {}", self.d_move)));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(SimError::Config(format!("spacing must be positive, got {}", self.spacing)));
        }
        if !(self.interface_stiffness.is_finite() && self.interface_stiffness > 0.0) {
            return Err(SimError::Config("interface stiffness must be positive".into()));
        }
        self.sensor.validate()?;
        Ok(())
    }

    /// Sensor parameters seen through the tower's series interfaces.
    pub fn effective_sensor(&self) -> SensorParams {
        let extra = self.tower.levels.len().saturating_sub(1) as f64;
        let compliance = 1.0 / self.sensor.stiffness_z + extra / self.interface_stiffness;
        SensorParams {
            stiffness_z: 1.0 / compliance,
            ..self.sensor.clone()
        }
    }
}

/// Context handed to an estimator for one probe.
pub struct ProbeContext<'a> {
    pub obs: &'a ProbeObservation,
    /// True patch; only the oracle may look at it.
    pub truth: &'a PatchMask,
}

pub trait PatchEstimator: Sync {
    fn estimate(&self, ctx: &ProbeContext<'_>) -> Result<PatchEstimate, EstimatorError>;
}

/// Reports the true patch as a 0/1 indicator.
pub struct OracleEstimator;

impl PatchEstimator for OracleEstimator {
    fn estimate(&self, ctx: &ProbeContext<'_>) -> Result<PatchEstimate, EstimatorError> {
        Ok(PatchEstimate::from_mask(ctx.truth))
    }
}

impl PatchEstimator for TrainedModel {
    fn estimate(&self, ctx: &ProbeContext<'_>) -> Result<PatchEstimate, EstimatorError> {
        crate::estimator::predict(self, ctx.obs)
    }
}

impl PatchEstimator for BayesEstimator {
    fn estimate(&self, ctx: &ProbeContext<'_>) -> Result<PatchEstimate, EstimatorError> {
        Ok(BayesEstimator::estimate(self, ctx.obs)?.0)
    }
}

/// Geometry shared by every episode of one configuration.
pub struct Scene {
    pub top_grid: GridSpec,
    pub footprint: PatchMask,
    pub world_grid: GridSpec,
    pub surface: Shape2,
    pub range: DisplacementRange,
    pub sensor: SensorParams,
}

impl Scene {
    pub fn new(cfg: &EpisodeConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let top = &cfg.top.shape;
        let top_grid = GridSpec::for_shape(top, cfg.spacing)?;
        let footprint = PatchMask {
            grid: top_grid,
            contact: top_grid.centers().map(|q| top.contains(q)).collect(),
        };
        let surface = cfg.tower.surface_world();
        let reach = top.bounding_radius() + cfg.spacing;
        let (mut lo, mut hi) = surface.bounding_box();
        for level in &cfg.tower.levels {
            let (l, h) = level.piece.shape.translate(level.position).bounding_box();
            lo = Point2::new(lo.x.min(l.x), lo.y.min(l.y));
            hi = Point2::new(hi.x.max(h.x), hi.y.max(h.y));
        }
        let world_grid = GridSpec::covering(
            lo - Point2::new(reach, reach),
            hi + Point2::new(reach, reach),
            cfg.spacing,
        )?;
        let range = DisplacementRange::default_for(top, &cfg.tower.surface().piece.shape);
        Ok(Self {
            top_grid,
            footprint,
            world_grid,
            surface,
            range,
            sensor: cfg.effective_sensor(),
        })
    }

    pub fn snap(&self, p: Point2) -> Point2 {
        let s = self.world_grid.spacing;
        Point2::new((p.x / s).round() * s, (p.y / s).round() * s)
    }

    /// True patch on the grasped face with its origin at world point `pose`.
    pub fn truth_at(&self, top: &Shape2, pose: Point2) -> PatchMask {
        ground_truth_patch(top, &self.surface, pose, &self.top_grid)
    }

    /// Cells of the world grid covered by the contacted face.
    pub fn surface_mask(&self) -> PatchMask {
        PatchMask {
            grid: self.world_grid,
            contact: self.world_grid.centers().map(|c| self.surface.contains(c)).collect(),
        }
    }

    /// Grid-aligned action no longer than `d_move`.
    fn snap_action(&self, a: Action, d_move: f64) -> Action {
        let s = self.world_grid.spacing;
        let round = Action {
            dx: (a.dx / s).round() * s,
            dy: (a.dy / s).round() * s,
        };
        if round.norm() <= d_move + 1e-12 {
            round
        } else {
            Action {
                dx: (a.dx / s).trunc() * s,
                dy: (a.dy / s).trunc() * s,
            }
        }
    }

    /// Pose of the belief viewed from the grasped face, outside-face cells zeroed.
    pub fn face_view(&self, belief: &BeliefMap, pose: &GripperPose) -> Result<PatchEstimate, SimError> {
        let mut view = belief.view_at(&self.top_grid, pose)?;
        for (p, &inside) in view.probs.iter_mut().zip(&self.footprint.contact) {
            if !inside {
                *p = 0.0;
            }
        }
        Ok(view)
    }

    pub fn update(&self, belief: &BeliefMap, est: &PatchEstimate, pose: &GripperPose) -> Result<BeliefMap, SimError> {
        Ok(measurement_update_masked(belief, est, pose, &self.footprint)?)
    }
}

/// World pose of the grasped origin whose true support misses the CoM by at
/// least `-cfg.init_margin`, with non-empty contact.
pub fn sample_unstable_start(cfg: &EpisodeConfig, scene: &Scene, seed: u64) -> Result<Point2, SimError> {
    let surface_origin = cfg.tower.surface().position;
    for k in 0..MAX_INIT_ATTEMPTS as u64 {
        let Some(d) = sample_contact_displacement(
            &cfg.top.shape,
            &cfg.tower.surface().piece.shape,
            &scene.range,
            &scene.top_grid,
            derive_seed(seed, &[k]),
        ) else {
            break;
        };
        let pose = scene.snap(d + surface_origin);
        let truth = scene.truth_at(&cfg.top.shape, pose);
        if truth.is_empty() {
            continue;
        }
        let v = ground_truth_verdict(&truth, cfg.top.com);
        if !v.stable && v.margin <= cfg.init_margin {
            return Ok(pose);
        }
    }
    Err(SimError::NoUnstableStart(MAX_INIT_ATTEMPTS))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    ReleasedStable,
    ReleasedUnstable,
    MaxProbesExceeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub probe: usize,
    pub pose: Point2,
    pub contact_cells: usize,
    pub fz: f64,
    pub tx: f64,
    pub ty: f64,
    /// IoU of this probe's estimate against the true patch.
    pub estimate_iou: f64,
    /// World cells with belief at least delta after the update.
    pub belief_cells: usize,
    pub verdict: VerdictSummary,
    pub action: Option<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub top: String,
    pub tower: String,
    pub initial_pose: Point2,
    pub final_pose: Point2,
    pub probes: Vec<ProbeRecord>,
    pub probe_count: usize,
    pub outcome: Outcome,
}

impl EpisodeLog {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::ReleasedStable
    }
}

/// Episode with its own seed `cfg.seed`.
pub fn run_episode(cfg: &EpisodeConfig, estimator: &dyn PatchEstimator) -> Result<EpisodeLog, SimError> {
    let scene = Scene::new(cfg)?;
    run_in_scene(cfg, &scene, estimator, cfg.seed, 0)
}

fn run_in_scene(
    cfg: &EpisodeConfig,
    scene: &Scene,
    estimator: &dyn PatchEstimator,
    seed: u64,
    episode: u64,
) -> Result<EpisodeLog, SimError> {
    let start = sample_unstable_start(cfg, scene, derive_seed(seed, &[0]))?;
    let mut pose = GripperPose::new(start);
    let mut belief = init_belief(scene.world_grid);
    let mut probes = Vec::new();
    let mut outcome = Outcome::MaxProbesExceeded;
    let com = cfg.top.com;

    let release = |truth: &PatchMask| {
        if ground_truth_stable(truth, com) {
            Outcome::ReleasedStable
        } else {
            Outcome::ReleasedUnstable
        }
    };

    for k in 0..cfg.max_probes {
        let truth = scene.truth_at(&cfg.top.shape, pose.position);
        if cfg.release_immediately {
            outcome = release(&truth);
            break;
        }
        let obs = simulate_probe(&truth, com, &scene.sensor, derive_seed(seed, &[1, k as u64]))?;
        let est = estimator.estimate(&ProbeContext { obs: &obs, truth: &truth })?;
        belief = scene.update(&belief, &est, &pose)?;
        let view = scene.face_view(&belief, &pose)?;
        let verdict = assess(&view, cfg.delta, com);
        let final_ft = obs.final_ft().copied().unwrap_or([0.0; 6]);
        let mut record = ProbeRecord {
            probe: k,
            pose: pose.position,
            contact_cells: truth.count(),
            fz: final_ft[2],
            tx: final_ft[3],
            ty: final_ft[4],
            estimate_iou: iou(&est, &truth, cfg.delta)?,
            belief_cells: (0..scene.world_grid.len())
                .filter(|&i| belief.probability(i) >= cfg.delta)
                .count(),
            verdict: verdict.summary(),
            action: None,
        };
        if verdict.stable {
            probes.push(record);
            outcome = release(&truth);
            break;
        }
        let action = scene.snap_action(select_action(&belief, &pose, cfg.delta, cfg.d_move), cfg.d_move);
        record.action = Some(action);
        probes.push(record);
        pose = pose.apply(action);
    }
    Ok(EpisodeLog {
        episode,
        top: cfg.top.name.clone(),
        tower: cfg.tower.name.clone(),
        initial_pose: start,
        final_pose: pose.position,
        probe_count: probes.len(),
        probes,
        outcome,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub top: String,
    pub tower: String,
    pub episodes: usize,
    pub successes: usize,
    pub released_unstable: usize,
    pub max_probes_exceeded: usize,
    pub success_rate: f64,
    pub mean_probes: f64,
}

/// `n` episodes; episode `i` uses seed `derive_seed(cfg.seed, [i])`.
pub fn run_batch(
    cfg: &EpisodeConfig,
    estimator: &dyn PatchEstimator,
    n: usize,
) -> Result<(BatchSummary, Vec<EpisodeLog>), SimError> {
    let scene = Scene::new(cfg)?;
    let logs: Vec<EpisodeLog> = (0..n as u64)
        .into_par_iter()
        .map(|i| run_in_scene(cfg, &scene, estimator, derive_seed(cfg.seed, &[i]), i))
        .collect::<Result<_, _>>()?;
    let count = |o: Outcome| logs.iter().filter(|l| l.outcome == o).count();
    let successes = count(Outcome::ReleasedStable);
    let summary = BatchSummary {
        top: cfg.top.name.clone(),
        tower: cfg.tower.name.clone(),
        episodes: n,
        successes,
        released_unstable: count(Outcome::ReleasedUnstable),
        max_probes_exceeded: count(Outcome::MaxProbesExceeded),
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        mean_probes: if n == 0 {
            0.0
        } else {
            logs.iter().map(|l| l.probe_count as f64).sum::<f64>() / n as f64
        },
    };
    Ok((summary, logs))
}

/// Fixed probe positions for one stability trial: the query pose first,
/// then jittered re-probes around it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub query: Point2,
    pub probe_poses: Vec<Point2>,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub top: Piece,
    pub tower: Tower,
    pub trials: usize,
    /// Largest number of probes any trial is evaluated with.
    pub max_n: usize,
    /// Re-probes land uniformly within this radius of the query pose.
    pub jitter: f64,
    pub delta: f64,
    pub spacing: f64,
    pub seed: u64,
    pub sensor: SensorParams,
    pub interface_stiffness: f64,
}

impl TrialConfig {
    pub fn new(top: Piece, tower: Tower, trials: usize, seed: u64) -> Self {
        Self {
            top,
            tower,
            trials,
            max_n: 5,
            jitter: DEFAULT_TRIAL_JITTER,
            delta: crate::estimator::DEFAULT_DELTA,
            spacing: 1.0,
            seed,
            sensor: SensorParams::default(),
            interface_stiffness: DEFAULT_INTERFACE_STIFFNESS,
        }
    }

    fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_probes: self.max_n,
            delta: self.delta,
            d_move: self.jitter.max(1e-9),
            spacing: self.spacing,
            sensor: self.sensor.clone(),
            interface_stiffness: self.interface_stiffness,
            ..EpisodeConfig::new(self.top.clone(), self.tower.clone(), self.seed)
        }
    }
}

fn sample_trial(cfg: &TrialConfig, scene: &Scene, t: u64) -> Result<Trial, SimError> {
    use rand::{Rng, SeedableRng};
    let top = &cfg.top.shape;
    let surface_origin = cfg.tower.surface().position;
    let d = sample_contact_displacement(
        top,
        &cfg.tower.surface().piece.shape,
        &scene.range,
        &scene.top_grid,
        derive_seed(cfg.seed, &[t, 0]),
    )
    .ok_or(SimError::NoUnstableStart(crate::dataset::MAX_REJECTION_ATTEMPTS))?;
    let mut query = scene.snap(d + surface_origin);
    if scene.truth_at(top, query).is_empty() {
        // snapping nudged a grazing contact off the edge
        query = scene.snap(d * 0.9 + surface_origin);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[t, 1]));
    let mut probe_poses = vec![query];
    while probe_poses.len() < cfg.max_n.max(1) {
        let mut pose = query;
        for _ in 0..1000 {
            let r = cfg.jitter * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let cand = scene.snap(query + Point2::new(r * a.cos(), r * a.sin()));
            if !scene.truth_at(top, cand).is_empty() {
                pose = cand;
                break;
            }
        }
        probe_poses.push(pose);
    }
    let stable = ground_truth_stable(&scene.truth_at(top, query), cfg.top.com);
    Ok(Trial {
        query,
        probe_poses,
        stable,
    })
}

/// Query poses drawn like dataset displacements and snapped to the grid.
pub fn sample_trials(cfg: &TrialConfig) -> Result<Vec<Trial>, SimError> {
    let scene = Scene::new(&cfg.episode_config())?;
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| sample_trial(cfg, &scene, t))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// Verdict after `n` probes, for `n = 1..=max_n`.
    pub predicted: Vec<bool>,
    /// Belief-vs-surface IoU after `n` probes.
    pub belief_iou: Vec<f64>,
    pub implicit: Option<bool>,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub top: String,
    pub tower: String,
    pub trials: usize,
    /// `(n, accuracy)` for every requested probe count.
    pub accuracy: Vec<(usize, f64)>,
    pub implicit_accuracy: Option<f64>,
    /// Mean belief IoU for `n = 1..=max_n`.
    pub belief_iou: Vec<f64>,
    pub stable_fraction: f64,
}

/// Run one trial: probes at the fixed poses, aggregating after each, with the
/// verdict read off the belief at the query pose.
pub fn run_trial(
    cfg: &TrialConfig,
    scene: &Scene,
    trial: &Trial,
    t: u64,
    estimator: &dyn PatchEstimator,
    implicit: Option<&TrainedModel>,
) -> Result<TrialOutcome, SimError> {
    let com = cfg.top.com;
    let surface = scene.surface_mask();
    let query = GripperPose::new(trial.query);
    let mut belief = init_belief(scene.world_grid);
    let mut predicted = Vec::new();
    let mut belief_iou = Vec::new();
    let mut implicit_verdict = None;
    for (k, &p) in trial.probe_poses.iter().enumerate().take(cfg.max_n) {
        let pose = GripperPose {
            position: p,
            probe_index: k,
        };
        let truth = scene.truth_at(&cfg.top.shape, p);
        let obs = simulate_probe(&truth, com, &scene.sensor, derive_seed(cfg.seed, &[t, 2, k as u64]))?;
        if k == 0 {
            if let Some(m) = implicit {
                implicit_verdict = Some(implicit_stability(m, &obs)? >= 0.5);
            }
        }
        let est = estimator.estimate(&ProbeContext { obs: &obs, truth: &truth })?;
        belief = scene.update(&belief, &est, &pose)?;
        let view = scene.face_view(&belief, &query)?;
        predicted.push(assess(&view, cfg.delta, com).stable);
        belief_iou.push(iou(
            &PatchEstimate {
                grid: scene.world_grid,
                probs: belief.probabilities(),
            },
            &surface,
            cfg.delta,
        )?);
    }
    Ok(TrialOutcome {
        predicted,
        belief_iou,
        implicit: implicit_verdict,
        stable: trial.stable,
    })
}

/// Binary stability accuracy after `n` aggregated probes for each `n` in
/// `ns`, plus the single-shot implicit classifier on the same trials.
pub fn stability_accuracy_vs_n(
    cfg: &TrialConfig,
    estimator: &dyn PatchEstimator,
    implicit: Option<&TrainedModel>,
    ns: &[usize],
) -> Result<AccuracyReport, SimError> {
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > cfg.max_n) {
        return Err(SimError::Config(format!("probe count {n} outside 1..={}", cfg.max_n)));
    }
    let scene = Scene::new(&cfg.episode_config())?;
    let trials = sample_trials(cfg)?;
    let outcomes: Vec<TrialOutcome> = trials
        .par_iter()
        .enumerate()
        .map(|(t, trial)| run_trial(cfg, &scene, trial, t as u64, estimator, implicit))
        .collect::<Result<_, _>>()?;
    let m = outcomes.len().max(1) as f64;
    let accuracy = ns
        .iter()
        .map(|&n| {
            let correct = outcomes.iter().filter(|o| o.predicted[n - 1] == o.stable).count();
            (n, correct as f64 / m)
        })
        .collect();
    let implicit_accuracy = implicit.map(|_| {
        outcomes
            .iter()
            .filter(|o| o.implicit == Some(o.stable))
            .count() as f64
            / m
    });
    let belief_iou = (0..cfg.max_n)
        .map(|k| outcomes.iter().map(|o| o.belief_iou[k]).sum::<f64>() / m)
        .collect();
    Ok(AccuracyReport {
        top: cfg.top.name.clone(),
        tower: cfg.tower.name.clone(),
        trials: outcomes.len(),
        accuracy,
        implicit_accuracy,
        belief_iou,
        stable_fraction: outcomes.iter().filter(|o| o.stable).count() as f64 / m,
    })
}
