//! Experiment drivers shared by the CLI and the acceptance suite:
//! data, pretraining, RL training, evaluation and metric merging.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{pretrain, sample_ode};
use crate::io::{read_to_string, write_atomic};
use crate::nnet::{save_checkpoint, VelocityField};
use crate::oracle::{energy_distance, naive_group_rollout};
use crate::rewards::{reward_channels, NUM_CHANNELS};
use crate::rlcore::{IterationMetrics, RlSetup, Trainer, Variant, METRICS_HEADER};
use crate::rng::{seeded, NoiseKey, NoiseStream};
use crate::toy::{from_csv, to_csv, Sample};
use crate::treesampler::{advance_window, nfe_exact, CountingModel, TreeId};

pub const PRETRAINED_TAG: &str = "pretrained";

/// Reads the data file, creating it first when `generate` is set and the
/// file is missing.
pub fn load_or_generate_data(cfg: &TrainConfig, path: &Path, generate: bool) -> Result<Vec<Sample>> {
    if generate && !path.exists() {
        let data = cfg.task.generate(cfg.pretrain.samples_per_class, cfg.seed);
        write_atomic(path, to_csv(&data).as_bytes())?;
    }
    from_csv(&read_to_string(path)?)
}

/// Flow-matching pretraining from the seeded initialization. Returns the
/// field and the per-step losses.
pub fn run_pretrain(cfg: &TrainConfig, data: &[Sample]) -> Result<(VelocityField, Vec<f64>)> {
    let mut field = VelocityField::new(cfg.mlp_config(), cfg.seed)?;
    let losses = pretrain(&mut field, data, &cfg.pretrain_config(), |_, _| {})?;
    Ok((field, losses))
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Cross-check every iteration's first group against the oracles.
    pub verify: bool,
    /// Checkpoints and the running metrics file go here when set.
    pub out_dir: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub field: VelocityField,
    pub metrics: Vec<IterationMetrics>,
}

pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn metrics_file_name(variant: Variant) -> String {
    format!("metrics_{variant}.csv")
}

/// Replays the first group of `iteration` under the oracles.
fn verify_iteration(setup: &RlSetup, field_old: &VelocityField, iteration: usize) -> Result<()> {
    let sched = advance_window(&setup.window, iteration);
    let id = TreeId {
        iteration: iteration as u64,
        prompt: 0,
        tree: 0,
    };
    let class = setup.prompt_class(0);
    let counter = CountingModel::new(field_old);
    let group = setup.rollout(&counter, class, &sched, id)?;
    let expected_nfe = match setup.variant {
        Variant::DynamicTree | Variant::FlatTree => nfe_exact(setup.grid.steps, sched.tau, sched.depth)?,
        Variant::FullSde | Variant::WindowSde => (setup.group_size() * setup.grid.steps) as u64,
    };
    if counter.count() != expected_nfe || group.nfe != expected_nfe {
        return Err(Error::OracleMismatch(format!(
            "iteration {iteration}: counted {} evaluations, reported {}, expected {expected_nfe}",
            counter.count(),
            group.nfe
        )));
    }
    if let Some(tree) = &group.tree {
        let sde = setup.variant.sde_config(&setup.sde);
        let naive = naive_group_rollout(field_old, class, &sched, &setup.grid, &sde, &setup.noise, id)?;
        for (i, want) in naive.iter().enumerate() {
            if &tree.leaf_states(i)? != want {
                return Err(Error::OracleMismatch(format!(
                    "iteration {iteration}: leaf {i} differs from its independent replay"
                )));
            }
        }
    }
    Ok(())
}

/// Runs `cfg.iterations` policy-optimization iterations from `field`.
///
/// On divergence the last finite parameters are written as
/// `<variant>-diverged` (when an output directory is set) before the error
/// is returned.
pub fn run_train(
    cfg: &TrainConfig,
    variant: Variant,
    field: VelocityField,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let setup = cfg.rl_setup(variant)?;
    let mut trainer = Trainer::new(field);
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        if opts.verify {
            verify_iteration(&setup, &trainer.field, it)?;
        }
        match trainer.train_iteration(&setup, it) {
            Ok(row) => metrics.push(row),
            Err(e @ Error::Divergence(_)) => {
                if let Some(dir) = &opts.out_dir {
                    save_checkpoint(&trainer.field, dir, &format!("{variant}-diverged"))?;
                    write_atomic(&dir.join(metrics_file_name(variant)), metrics_csv(&metrics).as_bytes())?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if let Some(dir) = &opts.out_dir {
            write_atomic(&dir.join(metrics_file_name(variant)), metrics_csv(&metrics).as_bytes())?;
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&trainer.field, dir, &format!("{variant}-iter{}", it + 1))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        save_checkpoint(&trainer.field, dir, &format!("{variant}-final"))?;
    }
    Ok(TrainOutcome {
        field: trainer.field,
        metrics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub channel_means: [f64; NUM_CHANNELS],
    pub aggregate_mean: f64,
    pub energy_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples_per_class: usize,
    pub weights: [f64; NUM_CHANNELS],
    pub channel_means: [f64; NUM_CHANNELS],
    pub aggregate_mean: f64,
    /// Pooled samples against a pooled draw from the target mixture.
    pub energy_distance: f64,
    pub per_class: Vec<ClassReport>,
}

/// Iteration index reserved for evaluation noise so it never collides with
/// training draws.
const EVAL_NAMESPACE: u64 = u64::MAX;

/// ODE samples per class from keyed initial noise.
pub fn ode_samples(cfg: &TrainConfig, field: &VelocityField, per_class: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    use rayon::prelude::*;
    let grid = cfg.time_grid()?;
    let noise = NoiseStream::new(cfg.seed);
    (0..cfg.task.num_classes)
        .map(|c| {
            (0..per_class)
                .into_par_iter()
                .map(|i| {
                    let x0 = noise.normal(&NoiseKey::initial(EVAL_NAMESPACE, c as u64, i as u64), 2);
                    sample_ode(field, c, &x0, &grid)
                })
                .collect()
        })
        .collect()
}

/// Per-channel mean rewards and distance to the target of ODE samples.
pub fn run_eval(cfg: &TrainConfig, field: &VelocityField, per_class: usize) -> Result<EvalReport> {
    if per_class == 0 {
        return Err(Error::EmptySample);
    }
    let samples = ode_samples(cfg, field, per_class)?;
    let mut rng = seeded(cfg.seed, 0xE7A1);
    let w = cfg.reward.weights;
    let mut per_class_reports = Vec::new();
    let mut pooled = Vec::new();
    let mut target_pooled = Vec::new();
    for (c, xs) in samples.iter().enumerate() {
        let mut means = [0.0; NUM_CHANNELS];
        for x in xs {
            let r = reward_channels(&cfg.task, x, c);
            for (m, v) in means.iter_mut().zip(r) {
                *m += v / per_class as f64;
            }
        }
        let target: Vec<Vec<f64>> = (0..per_class).map(|_| cfg.task.sample_class(c, &mut rng)).collect();
        per_class_reports.push(ClassReport {
            class: c,
            channel_means: means,
            aggregate_mean: means.iter().zip(&w).map(|(a, b)| a * b).sum(),
            energy_distance: energy_distance(xs, &target)?,
        });
        pooled.extend(xs.iter().cloned());
        target_pooled.extend(target);
    }
    let k = per_class_reports.len() as f64;
    let mut channel_means = [0.0; NUM_CHANNELS];
    for r in &per_class_reports {
        for (m, v) in channel_means.iter_mut().zip(r.channel_means) {
            *m += v / k;
        }
    }
    Ok(EvalReport {
        samples_per_class: per_class,
        weights: w,
        channel_means,
        aggregate_mean: channel_means.iter().zip(&w).map(|(a, b)| a * b).sum(),
        energy_distance: energy_distance(&pooled, &target_pooled)?,
        per_class: per_class_reports,
    })
}

/// Parses a metrics CSV written by [`metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<IterationMetrics>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim();
    if header != METRICS_HEADER {
        return Err(Error::Merge(format!("unexpected metrics header `{header}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Merge(format!("metrics line {}: cannot parse `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 11 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad());
            Ok(IterationMetrics {
                iter: f[0].parse().map_err(|_| bad())?,
                tau: f[1].parse().map_err(|_| bad())?,
                reward_mean: num(2)?,
                reward_std: num(3)?,
                loss_grpo: num(4)?,
                loss_sft: num(5)?,
                loss_total: num(6)?,
                eps_mean: num(7)?,
                clip_frac: num(8)?,
                nfe_cum: f[9].parse().map_err(|_| bad())?,
                group_dispersion: num(10)?,
            })
        })
        .collect()
}

pub const COMPARE_HEADER: &str = "variant,iter,reward_mean,nfe_cum";

/// Long-format merge of labelled metrics CSVs, rows ordered by iteration
/// then input order.
pub fn compare_csv(inputs: &[(String, String)]) -> Result<String> {
    let parsed: Vec<(&str, Vec<IterationMetrics>)> = inputs
        .iter()
        .map(|(label, text)| {
            parse_metrics_csv(text)
                .map(|rows| (label.as_str(), rows))
                .map_err(|e| Error::Merge(format!("{label}: {e}")))
        })
        .collect::<Result<_>>()?;
    let max_len = parsed.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
    let mut out = format!("{COMPARE_HEADER}\n");
    for i in 0..max_len {
        for (label, rows) in &parsed {
            if let Some(r) = rows.get(i) {
                out.push_str(&format!("{label},{},{},{}\n", r.iter, r.reward_mean, r.nfe_cum));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub variant: String,
    pub iter: usize,
    pub reward_mean: f64,
    pub nfe_cum: u64,
}

pub fn parse_compare_csv(text: &str) -> Result<Vec<CompareRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(COMPARE_HEADER) {
        return Err(Error::Merge("unexpected compare header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let bad = || Error::Merge(format!("cannot parse `{line}`"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CompareRow {
                variant: f[0].to_string(),
                iter: f[1].parse().map_err(|_| bad())?,
                reward_mean: f[2].parse().map_err(|_| bad())?,
                nfe_cum: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
