//! One function per subcommand.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use tacstack::dataset::{self, generate, round_sig9, Dataset, DisplacementRange, Pair};
use tacstack::estimator::{
    cell_accuracy, iou, train, train_implicit, BayesEstimator, DisplacementHypothesisGrid, Modality, ModelConfig,
    TrainedModel,
};
use tacstack::geometry::GridSpec;
use tacstack::rng::derive_seed;
use tacstack::sensor_sim::{signal_distribution_report, SIGNAL_COLUMNS};
use tacstack::sim_env::{
    run_batch, stability_accuracy_vs_n, AccuracyReport, BatchSummary, EpisodeConfig, EpisodeLog, OracleEstimator,
    PatchEstimator, Piece, Tower, TrialConfig,
};

use crate::config::{eval_file, implicit_file, loss_file, model_file, train_file, RunConfig};
use crate::error::CliError;
use crate::report::{pct, Table};

pub const EPISODE_LOG_SCHEMA: &str = "tacstack-episodes";

/// Resolved configuration plus where outputs go.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Context {
    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn pairs(&self, top: &Piece, bottoms: &[Piece]) -> Result<Vec<Pair>, CliError> {
        bottoms
            .iter()
            .map(|b| {
                Pair::new(
                    &top.name,
                    top.shape.clone(),
                    &b.name,
                    b.shape.clone(),
                    top.com,
                    None,
                    self.cfg.spacing,
                )
                .map_err(CliError::from)
            })
            .collect()
    }

    fn load_dataset(&self, name: &str) -> Result<Dataset, CliError> {
        let path = self.cfg.data_dir(&self.out).join(name);
        dataset::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn load_model(&self, name: &str) -> Result<TrainedModel, CliError> {
        let path = self.cfg.model_dir(&self.out).join(name);
        TrainedModel::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// Training and held-out datasets for every top piece.
pub fn gen_data(ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    for (t, top) in ctx.cfg.tops.iter().enumerate() {
        let sets = [
            (&ctx.cfg.train_bottoms, ctx.cfg.data.train_per_pair, 1, train_file(&top.name)),
            (&ctx.cfg.eval_bottoms, ctx.cfg.data.eval_per_pair, 2, eval_file(&top.name)),
        ];
        for (bottoms, n, stream, name) in sets {
            let pairs = ctx.pairs(top, bottoms)?;
            let mut ds = generate(&pairs, n, &ctx.cfg.sensor, derive_seed(seed, &[stream, t as u64]))?;
            ds.header.config_hash = Some(ctx.hash.clone());
            let path = ctx.out_path(&name);
            ds.write_file(&path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}

/// One patch model per top and modality plus the implicit classifier.
pub fn train_models(ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    for (t, top) in ctx.cfg.tops.iter().enumerate() {
        let data = ctx.load_dataset(&train_file(&top.name))?;
        if data.is_empty() {
            return Err(CliError::Data(format!("empty training set for {}", top.name)));
        }
        let mut jobs: Vec<Option<Modality>> = ctx.cfg.modalities.iter().copied().map(Some).collect();
        jobs.push(None);
        let models: Vec<TrainedModel> = jobs
            .par_iter()
            .enumerate()
            .map(|(k, job)| {
                let cfg = ModelConfig {
                    modality: job.unwrap_or(ctx.cfg.model.modality),
                    seed: derive_seed(seed, &[3, t as u64, k as u64]),
                    ..ctx.cfg.model.clone()
                };
                match job {
                    Some(_) => train(&data.samples, &cfg),
                    None => train_implicit(&data.samples, &cfg),
                }
            })
            .collect::<Result<_, _>>()?;
        for (job, mut model) in jobs.into_iter().zip(models) {
            model.config_hash = Some(ctx.hash.clone());
            let (name, loss_name) = match job {
                Some(m) => (model_file(&top.name, m), Some(loss_file(&top.name, m))),
                None => (implicit_file(&top.name), None),
            };
            let path = ctx.out_path(&name);
            model
                .save(&path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            if let Some(loss_name) = loss_name {
                let mut table = Table::new("loss", &ctx.hash);
                table.comment(&format!("{} {}: mean training BCE per epoch", top.name, model.config.modality.label()));
                table.row(["epoch", "loss"]);
                for (e, l) in model.loss_history.iter().enumerate() {
                    table.row([(e + 1).to_string(), l.to_string()]);
                }
                table.write(&ctx.out_path(&loss_name))?;
            }
        }
    }
    Ok(())
}

/// Contact patch quality on the held-out sets, per modality and top.
pub fn eval(ctx: &Context) -> Result<(), CliError> {
    let delta = ctx.cfg.eval.delta;
    // rows: modalities then the Bayes reference; columns: tops
    let n_rows = ctx.cfg.modalities.len() + 1;
    let mut ious = vec![Vec::new(); n_rows];
    let mut accs = vec![Vec::new(); n_rows];
    for top in &ctx.cfg.tops {
        let data = ctx.load_dataset(&eval_file(&top.name))?;
        if data.is_empty() {
            return Err(CliError::Data(format!("empty evaluation set for {}", top.name)));
        }
        let obs: Vec<_> = data.samples.iter().map(|s| &s.obs).collect();
        for (r, &m) in ctx.cfg.modalities.iter().enumerate() {
            let model = ctx.load_model(&model_file(&top.name, m))?;
            let est = model.predict_many(&obs)?;
            let (mut i_sum, mut a_sum) = (0.0, 0.0);
            for (e, s) in est.iter().zip(&data.samples) {
                i_sum += iou(e, &s.truth, delta)?;
                a_sum += cell_accuracy(e, &s.truth, delta)?;
            }
            ious[r].push(i_sum / data.len() as f64);
            accs[r].push(a_sum / data.len() as f64);
        }
        let bayes: Vec<BayesEstimator> = data
            .header
            .pairs
            .iter()
            .map(|p| {
                let hyp = DisplacementHypothesisGrid::regular(&p.range, ctx.cfg.eval.bayes_step)?;
                BayesEstimator::new(&p.top, &p.bottom, p.com, &p.grid, &hyp, &data.header.params)
            })
            .collect::<Result<_, _>>()?;
        let scores: Vec<(f64, f64)> = data
            .samples
            .par_iter()
            .map(|s| {
                let k = data
                    .header
                    .pairs
                    .iter()
                    .position(|p| p.id == s.pair_id)
                    .ok_or_else(|| CliError::Data(format!("sample of unknown pair {}", s.pair_id)))?;
                let (e, _) = bayes[k].estimate(&s.obs)?;
                Ok((iou(&e, &s.truth, delta)?, cell_accuracy(&e, &s.truth, delta)?))
            })
            .collect::<Result<_, CliError>>()?;
        let n = scores.len() as f64;
        ious[n_rows - 1].push(scores.iter().map(|s| s.0).sum::<f64>() / n);
        accs[n_rows - 1].push(scores.iter().map(|s| s.1).sum::<f64>() / n);
    }

    let mut labels: Vec<String> = ctx.cfg.modalities.iter().map(|m| m.label().to_string()).collect();
    labels.push("Bayes".into());
    let mut table = Table::new("table1", &ctx.hash);
    table
        .comment(&format!("contact patch estimation on held-out bottoms, percent, delta={delta}"))
        .comment("Bayes: likelihood over a displacement grid with the true geometry and sensor model");
    let mut head = vec!["metric".to_string(), "estimator".to_string()];
    head.extend(ctx.cfg.tops.iter().map(|t| t.name.clone()));
    head.push("mean".into());
    table.row(head);
    for (metric, block) in [("IoU", &ious), ("Acc", &accs)] {
        for (label, vals) in labels.iter().zip(block.iter()) {
            let mut row = vec![metric.to_string(), label.clone()];
            row.extend(vals.iter().map(|&v| pct(v)));
            row.push(pct(vals.iter().sum::<f64>() / vals.len() as f64));
            table.row(row);
        }
    }
    table.write(&ctx.out_path("table1.tsv"))
}

#[derive(Serialize)]
struct LogHeader<'a> {
    schema: &'a str,
    version: u32,
    config_sha256: &'a str,
}

#[derive(Serialize)]
struct EpisodeRecord<'a> {
    method: &'a str,
    #[serde(flatten)]
    log: &'a EpisodeLog,
}

const METHODS: [&str; 3] = ["Pick & Place", "Ours", "Oracle"];

/// Stability accuracy against probe count, then closed-loop stacking.
pub fn episodes(ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    let cfg = &ctx.cfg;
    let mut models = Vec::new();
    for top in &cfg.tops {
        models.push((
            ctx.load_model(&model_file(&top.name, cfg.episodes.modality))?,
            ctx.load_model(&implicit_file(&top.name))?,
        ));
    }

    let mut reports: Vec<AccuracyReport> = Vec::new();
    let all_n: Vec<usize> = (1..=cfg.trials.max_n).collect();
    for (t, top) in cfg.tops.iter().enumerate() {
        for (b, bottom) in cfg.eval_bottoms.iter().enumerate() {
            let tc = TrialConfig {
                max_n: cfg.trials.max_n,
                jitter: cfg.trials.jitter,
                delta: cfg.episodes.delta,
                spacing: cfg.spacing,
                sensor: cfg.sensor.clone(),
                interface_stiffness: cfg.episodes.interface_stiffness,
                ..TrialConfig::new(
                    top.clone(),
                    Tower::single(bottom.clone()),
                    cfg.trials.count,
                    derive_seed(seed, &[4, t as u64, b as u64]),
                )
            };
            reports.push(stability_accuracy_vs_n(&tc, &models[t].0, Some(&models[t].1), &all_n)?);
        }
    }
    write_table2(ctx, &reports)?;
    write_fig6(ctx, &reports)?;

    let mut towers: Vec<Tower> = cfg.eval_bottoms.iter().cloned().map(Tower::single).collect();
    if let [lower, upper, ..] = cfg.eval_bottoms.as_slice() {
        towers.push(Tower::stacked(lower.clone(), upper.clone()));
    }
    let log_path = ctx.out_path("episodes.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let io = |e: std::io::Error| CliError::io(&log_path, e);
    serde_json::to_writer(
        &mut log,
        &LogHeader {
            schema: EPISODE_LOG_SCHEMA,
            version: 1,
            config_sha256: &ctx.hash,
        },
    )
    .map_err(|e| io(e.into()))?;
    writeln!(log).map_err(io)?;

    // summaries[method][column]
    let mut summaries: Vec<Vec<BatchSummary>> = vec![Vec::new(); METHODS.len()];
    for (t, top) in cfg.tops.iter().enumerate() {
        for (w, tower) in towers.iter().enumerate() {
            let ec = EpisodeConfig {
                max_probes: cfg.episodes.max_probes,
                delta: cfg.episodes.delta,
                d_move: cfg.episodes.d_move,
                init_margin: cfg.episodes.init_margin,
                spacing: cfg.spacing,
                sensor: cfg.sensor.clone(),
                interface_stiffness: cfg.episodes.interface_stiffness,
                ..EpisodeConfig::new(top.clone(), tower.clone(), derive_seed(seed, &[5, t as u64, w as u64]))
            };
            ec.validate()?;
            for (k, method) in METHODS.iter().enumerate() {
                let run_cfg = EpisodeConfig {
                    release_immediately: k == 0,
                    ..ec.clone()
                };
                let est: &dyn PatchEstimator = if k == 1 { &models[t].0 } else { &OracleEstimator };
                let (summary, logs) = run_batch(&run_cfg, est, cfg.episodes.count)?;
                for l in &logs {
                    serde_json::to_writer(&mut log, &EpisodeRecord { method, log: l }).map_err(|e| io(e.into()))?;
                    writeln!(log).map_err(io)?;
                }
                summaries[k].push(summary);
            }
        }
    }
    log.flush().map_err(io)?;
    write_table3(ctx, &summaries)
}

fn write_table2(ctx: &Context, reports: &[AccuracyReport]) -> Result<(), CliError> {
    let mut table = Table::new("table2", &ctx.hash);
    table
        .comment(&format!(
            "stability classification accuracy, percent, {} trials per column",
            ctx.cfg.trials.count
        ))
        .comment("Implicit: single-shot classifier on the first probe; n=k: belief after k probes");
    let mut head = vec!["method".to_string()];
    head.extend(reports.iter().map(|r| format!("{}/{}", r.top, r.tower)));
    head.push("mean".into());
    table.row(head);
    let mut emit = |label: String, vals: Vec<f64>| {
        let mut row = vec![label];
        row.extend(vals.iter().map(|&v| pct(v)));
        row.push(pct(vals.iter().sum::<f64>() / vals.len().max(1) as f64));
        table.row(row);
    };
    emit(
        "Implicit".into(),
        reports.iter().map(|r| r.implicit_accuracy.unwrap_or(0.0)).collect(),
    );
    for &n in &ctx.cfg.trials.ns {
        emit(format!("n={n}"), reports.iter().map(|r| r.accuracy[n - 1].1).collect());
    }
    table.write(&ctx.out_path("table2.tsv"))
}

fn write_fig6(ctx: &Context, reports: &[AccuracyReport]) -> Result<(), CliError> {
    let mut table = Table::new("fig6", &ctx.hash);
    table
        .comment("accuracy: stability verdict accuracy after n probes")
        .comment("belief_iou: IoU of the thresholded belief against the support surface")
        .row(["top", "bottom", "n", "accuracy", "belief_iou"]);
    for r in reports {
        for (k, &(n, acc)) in r.accuracy.iter().enumerate() {
            table.row([
                r.top.clone(),
                r.tower.clone(),
                n.to_string(),
                format!("{:.4}", acc),
                format!("{:.4}", r.belief_iou[k]),
            ]);
        }
    }
    table.write(&ctx.out_path("fig6.tsv"))
}

fn write_table3(ctx: &Context, summaries: &[Vec<BatchSummary>]) -> Result<(), CliError> {
    let mut table = Table::new("table3", &ctx.hash);
    table
        .comment("stacking success (stable releases / episodes) from unstable starts")
        .comment("probes: mean number of presses per episode");
    let mut head = vec!["metric".to_string(), "method".to_string()];
    head.extend(summaries[0].iter().map(|s| format!("{}/{}", s.top, s.tower)));
    table.row(head);
    for (method, row) in METHODS.iter().zip(summaries) {
        let mut cells = vec!["success".to_string(), method.to_string()];
        cells.extend(row.iter().map(|s| format!("{}/{}", s.successes, s.episodes)));
        table.row(cells);
    }
    for (method, row) in METHODS.iter().zip(summaries) {
        let mut cells = vec!["probes".to_string(), method.to_string()];
        cells.extend(row.iter().map(|s| format!("{:.1}", s.mean_probes)));
        table.row(cells);
    }
    table.write(&ctx.out_path("table3.tsv"))
}

/// Final-step signal summaries over random contact displacements.
pub fn plot_data(ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    let cfg = &ctx.cfg;
    let mut table = Table::new("signals", &ctx.hash);
    table
        .comment("one row per simulated press, values at the deepest step")
        .comment("top, bottom: piece names; x, y: grasped-object origin in the bottom frame, mm")
        .comment("max_abs_tac_x, max_abs_tac_y: largest marker displacement magnitude per axis")
        .comment("tx, ty: wrist moments, N*mm; fz: wrist normal force, N");
    let mut head = vec!["top", "bottom"];
    head.extend(SIGNAL_COLUMNS);
    table.row(head);
    for (t, top) in cfg.tops.iter().enumerate() {
        let grid = GridSpec::for_shape(&top.shape, cfg.spacing)
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (b, bottom) in cfg.train_bottoms.iter().enumerate() {
            let range = DisplacementRange::default_for(&top.shape, &bottom.shape);
            let records = signal_distribution_report(
                &top.shape,
                &bottom.shape,
                top.com,
                &range,
                &grid,
                cfg.plot.samples,
                &cfg.sensor,
                derive_seed(seed, &[6, t as u64, b as u64]),
            )?;
            for r in records {
                let mut row = vec![top.name.clone(), bottom.name.clone()];
                row.extend(
                    [r.x, r.y, r.max_abs_tac_x, r.max_abs_tac_y, r.tx, r.ty, r.fz]
                        .iter()
                        .map(|&v| round_sig9(v).to_string()),
                );
                table.row(row);
            }
        }
    }
    table.write(&ctx.out_path("signals.tsv"))
}

/// Fails unless `dir` is an existing directory.
pub fn check_out_dir(dir: &Path) -> Result<(), CliError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!("output directory {} does not exist", dir.display())))
    }
}
