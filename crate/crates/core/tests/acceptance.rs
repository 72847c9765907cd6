//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! verdict lines are always printed; exits non-zero when any check fails.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tacstack::belief_filter::{init_belief, measurement_update, GripperPose, L_MAX};
use tacstack::dataset::{generate, Dataset, Pair};
use tacstack::estimator::network::Mlp;
use tacstack::estimator::{iou, train, train_implicit, Modality, ModelConfig, PatchEstimate, TrainedModel};
use tacstack::geometry::{ground_truth_patch, GridSpec, Point2, Shape2};
use tacstack::policy::{believed_support_center, select_action, Action, DEFAULT_D_MOVE};
use tacstack::rng::derive_seed;
use tacstack::sensor_sim::{signal_distribution_report, SensorParams};
use tacstack::sim_env::{
    default_tops, eval_bottoms, run_batch, stability_accuracy_vs_n, training_bottoms, AccuracyReport, EpisodeConfig,
    OracleEstimator, Piece, Tower, TrialConfig,
};
use tacstack::stability::assess;

const TRAIN_PER_PAIR: usize = 2000;
const EVAL_PER_PAIR: usize = 200;
const TRIALS: usize = 200;
const EPISODES: usize = 50;

struct Verdicts {
    failed: Vec<String>,
}

impl Verdicts {
    fn report(&mut self, id: &str, pass: bool, detail: String) {
        println!("criterion {id}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id.to_string());
        }
    }
}

fn pairs(top: &Piece, bottoms: &[Piece]) -> Vec<Pair> {
    bottoms
        .iter()
        .map(|b| Pair::new(&top.name, top.shape.clone(), &b.name, b.shape.clone(), top.com, None, 1.0).unwrap())
        .collect()
}

fn mean_iou(model: &TrainedModel, data: &Dataset) -> f64 {
    let obs: Vec<_> = data.samples.iter().map(|s| &s.obs).collect();
    let est = model.predict_many(&obs).unwrap();
    est.iter().zip(&data.samples).map(|(e, s)| iou(e, &s.truth, 0.9).unwrap()).sum::<f64>() / data.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn lens_area_mc(r1: f64, r2: f64, off: Point2, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n {
        let x = rng.random_range(-r1..r1);
        let y = rng.random_range(-r1..r1);
        let q = Point2::new(x, y);
        if q.norm() <= r1 && (q + off).norm() <= r2 {
            hits += 1;
        }
    }
    hits as f64 / n as f64 * 4.0 * r1 * r1
}

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let r1 = rng.random_range(5.0..12.5);
        let r2 = rng.random_range(5.0..12.5);
        // overlap at least 4 mm wide, i.e. 16 cells across the lens
        let d = rng.random_range(0.0..r1 + r2 - 4.0);
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let off = Point2::new(d * a.cos(), d * a.sin());
        let top = Shape2::disc(Point2::ORIGIN, r1).unwrap();
        let bottom = Shape2::disc(Point2::ORIGIN, r2).unwrap();
        let grid = GridSpec::for_shape(&top, 0.25).unwrap();
        let area = ground_truth_patch(&top, &bottom, off, &grid).area();
        let mc = lens_area_mc(r1, r2, off, 1_000_000, 100 + k);
        worst = worst.max((area - mc).abs() / mc);
    }
    let t = start.elapsed();
    v.report(
        "1 geometry vs Monte Carlo",
        worst <= 0.02 && t < Duration::from_secs(30),
        format!("worst relative error {:.4} over 20 pairs (<= 0.02), {:.1}s (< 30s)", worst, t.as_secs_f64()),
    );
}

fn criterion_2(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let world = GridSpec::new(Point2::new(-15.0, -15.0), 1.0, 30, 30).unwrap();
    let face = GridSpec::new(Point2::new(-3.0, -3.0), 1.0, 6, 6).unwrap();
    let mut worst_seq: f64 = 0.0;
    for _ in 0..1000 {
        let steps = rng.random_range(1..12);
        let mut belief = init_belief(world);
        let mut total = vec![0.0; world.len()];
        for _ in 0..steps {
            let probs: Vec<f64> = (0..face.len())
                .map(|_| if rng.random_bool(0.1) { rng.random_range(0.0..1e-5) } else { rng.random_range(0.0..1.0) })
                .collect();
            let pose = GripperPose::new(Point2::new(
                rng.random_range(-8..=8) as f64,
                rng.random_range(-8..=8) as f64,
            ));
            let est = PatchEstimate::new(face, probs.clone()).unwrap();
            belief = measurement_update(&belief, &est, &pose).unwrap();
            // batch: accumulate each cell's log-odds directly
            for (j, &p) in probs.iter().enumerate() {
                let c = face.cell_center(j) + pose.position;
                let ix = ((c.x - world.origin.x) / world.spacing).floor() as usize;
                let iy = ((c.y - world.origin.y) / world.spacing).floor() as usize;
                let q = p.clamp(1e-4, 1.0 - 1e-4);
                total[iy * world.nx + ix] += (q / (1.0 - q)).ln();
            }
        }
        for i in 0..world.len() {
            worst_seq = worst_seq.max((belief.log_odds(i) - total[i].clamp(-L_MAX, L_MAX)).abs());
        }
    }

    // three cells, up to four observations, exact enumeration of 8 states
    let mut worst_bf: f64 = 0.0;
    let tri = GridSpec::new(Point2::ORIGIN, 1.0, 3, 1).unwrap();
    for _ in 0..1000 {
        let k = rng.random_range(1..=4);
        let obs: Vec<[f64; 3]> = (0..k)
            .map(|_| [0; 3].map(|_: i32| rng.random_range(0.05..0.95)))
            .collect();
        let mut belief = init_belief(tri);
        for o in &obs {
            let est = PatchEstimate::new(tri, o.to_vec()).unwrap();
            belief = measurement_update(&belief, &est, &GripperPose::new(Point2::ORIGIN)).unwrap();
        }
        let mut joint = [0.0; 8];
        for (s, w) in joint.iter_mut().enumerate() {
            *w = 0.125;
            for o in &obs {
                for j in 0..3 {
                    let on = (s >> j) & 1 == 1;
                    // inverse sensor model against a uniform prior
                    *w *= if on { o[j] } else { 1.0 - o[j] };
                }
            }
        }
        let z: f64 = joint.iter().sum();
        for j in 0..3 {
            let m: f64 = (0..8).filter(|s| (s >> j) & 1 == 1).map(|s| joint[s]).sum::<f64>() / z;
            worst_bf = worst_bf.max((m - belief.probability(j)).abs());
        }
    }
    v.report(
        "2 filter exactness",
        worst_seq <= 1e-12 && worst_bf <= 1e-9,
        format!(
            "sequential vs batch max |dL| {:.2e} over 1000 sequences (<= 1e-12); 3-cell enumeration max |dp| {:.2e} (<= 1e-9)",
            worst_seq, worst_bf
        ),
    );
}

fn criterion_3(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sizes = [6, 256, 256, 40];
    let net = Mlp::new(&sizes, &mut rng);
    let n = 16;
    let x = Array2::from_shape_fn((n, sizes[0]), |_| rng.random_range(-2.0..2.0));
    let y = Array2::from_shape_fn((n, sizes[3]), |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    let (_, grads) = net.loss_and_grad(x.view(), y.view());
    let g = Mlp::flatten_grads(&grads);
    let theta = net.flatten();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(0..theta.len());
        let mut plus = theta.clone();
        plus[k] += h;
        let mut minus = theta.clone();
        minus[k] -= h;
        let lp = Mlp::from_flat(&sizes, &plus).unwrap().loss(x.view(), y.view());
        let lm = Mlp::from_flat(&sizes, &minus).unwrap().loss(x.view(), y.view());
        let num = (lp - lm) / (2.0 * h);
        let rel = (g[k] - num).abs() / g[k].abs().max(num.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    v.report(
        "3 gradient check",
        worst <= 1e-4,
        format!("max relative error {:.2e} over 100 coordinates (<= 1e-4)", worst),
    );
}

struct TopModels {
    top: Piece,
    patch: TrainedModel,
    implicit: TrainedModel,
}

fn criterion_4(v: &mut Verdicts) -> Vec<TopModels> {
    let start = Instant::now();
    let mut out = Vec::new();
    let mut lines = Vec::new();
    let mut pass = true;
    for (t, top) in default_tops().into_iter().enumerate() {
        let train_set = generate(
            &pairs(&top, &training_bottoms()),
            TRAIN_PER_PAIR,
            &SensorParams::default(),
            derive_seed(40, &[t as u64, 0]),
        )
        .unwrap();
        let eval_set = generate(
            &pairs(&top, &eval_bottoms()),
            EVAL_PER_PAIR,
            &SensorParams::default(),
            derive_seed(40, &[t as u64, 1]),
        )
        .unwrap();
        let mut scores = Vec::new();
        let mut fused = None;
        for m in Modality::ALL {
            let cfg = ModelConfig {
                modality: m,
                seed: derive_seed(41, &[t as u64]),
                ..ModelConfig::default()
            };
            let model = train(&train_set.samples, &cfg).unwrap();
            scores.push(mean_iou(&model, &eval_set));
            if m == Modality::FtTac {
                fused = Some(model);
            }
        }
        let implicit = train_implicit(
            &train_set.samples,
            &ModelConfig {
                seed: derive_seed(42, &[t as u64]),
                ..ModelConfig::default()
            },
        )
        .unwrap();
        let best_single = scores[0].max(scores[1]);
        pass &= scores[2] >= best_single - 0.02;
        lines.push(format!(
            "{} FT {:.1} Tac {:.1} FT+Tac {:.1}",
            top.name,
            100.0 * scores[0],
            100.0 * scores[1],
            100.0 * scores[2]
        ));
        out.push(TopModels {
            top,
            patch: fused.unwrap(),
            implicit,
        });
    }
    let t = start.elapsed();
    v.report(
        "4 modality trend",
        pass && t < Duration::from_secs(15 * 60),
        format!(
            "IoU % on 6000/400 split: {}; FT+Tac >= max(FT, Tac) - 2 for every top; {:.0}s (< 900s)",
            lines.join("; "),
            t.as_secs_f64()
        ),
    );
    out
}

fn criteria_5_6(v: &mut Verdicts, models: &[TopModels]) {
    let mut reports: Vec<AccuracyReport> = Vec::new();
    for (t, m) in models.iter().enumerate() {
        for (b, bottom) in eval_bottoms().into_iter().enumerate() {
            let cfg = TrialConfig::new(
                m.top.clone(),
                Tower::single(bottom),
                TRIALS,
                derive_seed(50, &[t as u64, b as u64]),
            );
            reports.push(stability_accuracy_vs_n(&cfg, &m.patch, Some(&m.implicit), &[1, 2, 3, 4, 5]).unwrap());
        }
    }
    let acc = |n: usize| mean(&reports.iter().map(|r| r.accuracy[n - 1].1).collect::<Vec<_>>());
    let implicit = mean(&reports.iter().map(|r| r.implicit_accuracy.unwrap()).collect::<Vec<_>>());
    let (n1, n3) = (acc(1), acc(3));
    let mut iou_ok = true;
    let mut curves = Vec::new();
    for r in &reports {
        iou_ok &= r.belief_iou.windows(2).all(|w| w[1] >= w[0] - 0.01);
        curves.push(format!(
            "{}/{} [{}]",
            r.top,
            r.tower,
            r.belief_iou.iter().map(|x| format!("{:.3}", x)).collect::<Vec<_>>().join(" ")
        ));
    }
    let per_pair: Vec<String> = reports
        .iter()
        .map(|r| format!("{}/{} {:.1}->{:.1}", r.top, r.tower, 100.0 * r.accuracy[0].1, 100.0 * r.accuracy[2].1))
        .collect();
    v.report(
        "5a aggregation gain",
        n3 >= n1 + 0.10,
        format!(
            "mean accuracy n=1 {:.1}%, n=3 {:.1}%, gain {:.1} points (>= 10) over {} pairs x {} trials ({})",
            100.0 * n1,
            100.0 * n3,
            100.0 * (n3 - n1),
            reports.len(),
            TRIALS,
            per_pair.join(", ")
        ),
    );
    v.report("5b accuracy level", n3 >= 0.85, format!("mean accuracy at n=3 {:.1}% (>= 85)", 100.0 * n3));
    v.report(
        "5c belief IoU trend",
        iou_ok,
        format!("mean belief IoU n=1..5 non-decreasing within 0.01: {}", curves.join("; ")),
    );
    v.report(
        "6 implicit baseline",
        n3 >= implicit + 0.10,
        format!(
            "n=3 {:.1}% vs implicit {:.1}%, margin {:.1} points (>= 10)",
            100.0 * n3,
            100.0 * implicit,
            100.0 * (n3 - implicit)
        ),
    );
}

fn criterion_7(v: &mut Verdicts, models: &[TopModels]) {
    let bottoms = eval_bottoms();
    let mut pass = true;
    let mut lines = Vec::new();
    for (t, m) in models.iter().enumerate() {
        let mut single = Vec::new();
        for (w, bottom) in bottoms.iter().enumerate() {
            let cfg = EpisodeConfig::new(m.top.clone(), Tower::single(bottom.clone()), derive_seed(70, &[t as u64, w as u64]));
            let (pp, _) = run_batch(
                &EpisodeConfig {
                    release_immediately: true,
                    ..cfg.clone()
                },
                &OracleEstimator,
                EPISODES,
            )
            .unwrap();
            let (ours, _) = run_batch(&cfg, &m.patch, EPISODES).unwrap();
            let (oracle, _) = run_batch(&cfg, &OracleEstimator, EPISODES).unwrap();
            pass &= pp.successes == 0 && ours.success_rate >= 0.5 && oracle.success_rate >= 0.9;
            single.push(ours.success_rate);
            lines.push(format!(
                "{}/{} P&P {}/{} ours {}/{} oracle {}/{}",
                m.top.name, bottom.name, pp.successes, EPISODES, ours.successes, EPISODES, oracle.successes, EPISODES
            ));
        }
        let stacked = Tower::stacked(bottoms[0].clone(), bottoms[1].clone());
        let cfg = EpisodeConfig::new(m.top.clone(), stacked, derive_seed(70, &[t as u64, 9]));
        let (two, _) = run_batch(&cfg, &m.patch, EPISODES).unwrap();
        pass &= two.success_rate <= mean(&single) + 0.05;
        lines.push(format!("{}/{} ours {}/{}", m.top.name, two.tower, two.successes, EPISODES));
    }
    v.report(
        "7 stacking loop",
        pass,
        format!(
            "P&P = 0%, ours >= 50%, oracle >= 90% per one-bottom pair, two-bottom <= one-bottom + 5: {}",
            lines.join("; ")
        ),
    );
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn artifacts() -> Vec<Vec<u8>> {
    let top = default_tops()[1].clone();
    let mut out = Vec::new();
    let data = generate(&pairs(&top, &training_bottoms()), 20, &SensorParams::default(), 8).unwrap();
    let mut buf = Vec::new();
    data.write(&mut buf).unwrap();
    out.push(buf);
    let cfg = ModelConfig {
        hidden_units: 16,
        epochs: 3,
        seed: 8,
        ..ModelConfig::default()
    };
    let mut buf = Vec::new();
    train(&data.samples, &cfg).unwrap().write(&mut buf).unwrap();
    train_implicit(&data.samples, &cfg).unwrap().write(&mut buf).unwrap();
    out.push(buf);
    let tower = Tower::single(eval_bottoms()[0].clone());
    let (summary, logs) = run_batch(&EpisodeConfig::new(top.clone(), tower.clone(), 8), &OracleEstimator, 8).unwrap();
    out.push(serde_json::to_vec(&(summary, logs)).unwrap());
    let report = stability_accuracy_vs_n(&TrialConfig::new(top.clone(), tower, 8, 8), &OracleEstimator, None, &[1, 3]).unwrap();
    out.push(serde_json::to_vec(&report).unwrap());
    let pair = &pairs(&top, &training_bottoms())[0];
    let records = signal_distribution_report(
        &pair.top,
        &pair.bottom,
        pair.com,
        &pair.range,
        &pair.grid,
        10,
        &SensorParams::default(),
        8,
    )
    .unwrap();
    out.push(serde_json::to_vec(&records).unwrap());
    out
}

fn criterion_8(v: &mut Verdicts) {
    let a = in_pool(1, artifacts);
    let b = in_pool(1, artifacts);
    let c = in_pool(4, artifacts);
    let same = a == b && a == c;
    v.report(
        "8 determinism",
        same,
        format!(
            "dataset, models, episode logs, trial report and signal records repeated at 1 and 4 threads: {}",
            if same { "byte-identical" } else { "differ" }
        ),
    );
}

fn criterion_9(v: &mut Verdicts) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = GridSpec::new(Point2::new(-15.0, -15.0), 1.0, 30, 30).unwrap();
    let mut max_norm: f64 = 0.0;
    let mut fixed_ok = true;
    let mut mono_ok = true;
    for _ in 0..1000 {
        let mut belief = init_belief(grid);
        for _ in 0..rng.random_range(0..60) {
            belief.add_log_odds(rng.random_range(0..grid.len()), rng.random_range(-6.0..8.0));
        }
        let pose = GripperPose::new(Point2::new(rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0)));
        max_norm = max_norm.max(select_action(&belief, &pose, 0.9, DEFAULT_D_MOVE).norm());
        if let Some(c) = believed_support_center(&belief, 0.9) {
            fixed_ok &= select_action(&belief, &GripperPose::new(c), 0.9, DEFAULT_D_MOVE) == Action::ZERO;
        }
        let est = PatchEstimate::new(grid, belief.probabilities()).unwrap();
        let com = Point2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let deltas = [0.55, 0.7, 0.8, 0.9, 0.95, 0.99];
        let verdicts: Vec<bool> = deltas.iter().map(|&d| assess(&est, d, com).stable).collect();
        // stable at a higher threshold implies stable at every lower one
        mono_ok &= verdicts.windows(2).all(|w| w[0] || !w[1]);
    }

    let mut false_releases = 0;
    let mut episodes = 0;
    let mut towers: Vec<Tower> = eval_bottoms().into_iter().map(Tower::single).collect();
    towers.push(Tower::stacked(eval_bottoms()[0].clone(), eval_bottoms()[1].clone()));
    for (t, top) in default_tops().into_iter().enumerate() {
        for (w, tower) in towers.iter().enumerate() {
            let n = if t == 0 && w == 0 { 1000 - 8 * 111 } else { 111 };
            let cfg = EpisodeConfig::new(top.clone(), tower.clone(), derive_seed(90, &[t as u64, w as u64]));
            let (summary, logs) = run_batch(&cfg, &OracleEstimator, n).unwrap();
            false_releases += summary.released_unstable;
            episodes += logs.len();
        }
    }
    v.report(
        "9 policy and stability properties",
        max_norm <= DEFAULT_D_MOVE + 1e-12 && fixed_ok && mono_ok && false_releases == 0 && episodes == 1000,
        format!(
            "max |action| {:.6} mm (<= 3); fixed point {}; delta monotone {}; oracle false releases {} over {} episodes",
            max_norm, fixed_ok, mono_ok, false_releases, episodes
        ),
    );
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // that excludes this target skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let start = Instant::now();
    let mut v = Verdicts { failed: Vec::new() };
    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    criterion_8(&mut v);
    criterion_9(&mut v);
    let models = criterion_4(&mut v);
    criteria_5_6(&mut v, &models);
    criterion_7(&mut v, &models);
    println!("acceptance finished in {:.0}s", start.elapsed().as_secs_f64());
    if !v.failed.is_empty() {
        println!("failed: {}", v.failed.join(", "));
        std::process::exit(1);
    }
}
