use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use treerpo_core::harness::{
    compare_csv, load_or_generate_data, loss_csv, metrics_file_name, run_eval, run_pretrain, run_train, TrainConfig,
    TrainOptions, PRETRAINED_TAG, SEED_ENV,
};
use treerpo_core::io::{read_to_string, write_atomic};
use treerpo_core::nnet::{load_checkpoint, save_checkpoint};
use treerpo_core::treesampler::{advance_window, nfe_report, nfe_report_csv, rollout_tree, TreeId};
use treerpo_core::{Error, Result, Variant};

#[derive(Parser)]
#[command(name = "treerpo", version, about = "Tree-structured policy optimization for a toy flow-matching model")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    /// Print the resolved configuration with the origin of each default, then exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set reward.weights=[1,1,2]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the velocity field to the toy data by flow matching.
    Pretrain {
        /// Output directory for the checkpoint and loss curve.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Training data CSV (`class,x0,x1`); defaults to `<out>/data.csv`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Create the data file from the toy task if it does not exist.
        #[arg(long)]
        generate: bool,
        #[arg(long, default_value = PRETRAINED_TAG)]
        tag: String,
    },
    /// Policy optimization starting from a pretrained checkpoint.
    Train {
        #[arg(long, value_parser = parse_variant, default_value = "dynamic-tree")]
        variant: Variant,
        /// Directory holding the starting checkpoint.
        #[arg(long, default_value = "runs")]
        checkpoint_dir: PathBuf,
        #[arg(long, default_value = PRETRAINED_TAG)]
        tag: String,
        /// Output directory for metrics and checkpoints; defaults to the checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check every iteration's first group against the brute-force replay.
        #[arg(long)]
        verify: bool,
    },
    /// Sample from a checkpoint and report rewards and distance to the target.
    Eval {
        #[arg(long, default_value = "runs")]
        checkpoint_dir: PathBuf,
        #[arg(long, default_value = PRETRAINED_TAG)]
        tag: String,
        /// Samples per class; defaults to the config value.
        #[arg(long)]
        samples: Option<usize>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge metrics CSVs into one long-format table.
    Compare {
        /// `label=path` or a path named `metrics_<label>.csv`.
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluation counts per window position.
    NfeReport {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample one tree and write it as JSON.
    DumpTree {
        #[arg(long, default_value = "runs")]
        checkpoint_dir: PathBuf,
        #[arg(long, default_value = PRETRAINED_TAG)]
        tag: String,
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[arg(long, default_value_t = 0)]
        iteration: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Divergence(_) => 3,
        Error::OracleMismatch(_) => 4,
        _ => 1,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn compare_input(raw: &str) -> Result<(String, String)> {
    let (label, path) = match raw.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let path = PathBuf::from(raw);
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(raw);
            (stem.strip_prefix("metrics_").unwrap_or(stem).to_string(), path)
        }
    };
    Ok((label, read_to_string(&path)?))
}

fn run(cli: Cli) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = TrainConfig::load(cli.config.config.as_deref(), &cli.config.overrides)?.with_env_seed(env_seed.as_deref())?;
    if cli.print_config {
        print!("{}", cfg.render_with_provenance()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given; see --help".into()));
    };
    match command {
        Command::Pretrain {
            out,
            data,
            generate,
            tag,
        } => {
            let data_path = data.unwrap_or_else(|| out.join("data.csv"));
            let data = load_or_generate_data(&cfg, &data_path, generate)?;
            let (field, losses) = run_pretrain(&cfg, &data)?;
            save_checkpoint(&field, &out, &tag)?;
            write_atomic(&out.join(format!("{tag}_loss.csv")), loss_csv(&losses).as_bytes())?;
            eprintln!(
                "pretrained {} steps, final loss {:.4}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Train {
            variant,
            checkpoint_dir,
            tag,
            out,
            verify,
        } => {
            let field = load_checkpoint(&checkpoint_dir, &tag)?;
            let out = out.unwrap_or(checkpoint_dir);
            let opts = TrainOptions {
                verify,
                out_dir: Some(out.clone()),
            };
            let outcome = run_train(&cfg, variant, field, &opts)?;
            if let Some(last) = outcome.metrics.last() {
                eprintln!(
                    "{variant}: {} iterations, reward {:.4}, cumulative NFE {} -> {}",
                    outcome.metrics.len(),
                    last.reward_mean,
                    last.nfe_cum,
                    out.join(metrics_file_name(variant)).display()
                );
            }
        }
        Command::Eval {
            checkpoint_dir,
            tag,
            samples,
            out,
        } => {
            let field = load_checkpoint(&checkpoint_dir, &tag)?;
            let report = run_eval(&cfg, &field, samples.unwrap_or(cfg.eval.samples_per_class))?;
            emit(out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
        }
        Command::Compare { inputs, out } => {
            let inputs = inputs.iter().map(|i| compare_input(i)).collect::<Result<Vec<_>>>()?;
            emit(out.as_deref(), &compare_csv(&inputs)?)?;
        }
        Command::NfeReport { out } => {
            emit(out.as_deref(), &nfe_report_csv(&nfe_report(cfg.steps, cfg.depth)?))?;
        }
        Command::DumpTree {
            checkpoint_dir,
            tag,
            class,
            iteration,
            out,
        } => {
            let field = load_checkpoint(&checkpoint_dir, &tag)?;
            let setup = cfg.rl_setup(Variant::DynamicTree)?;
            let sched = advance_window(&setup.window, iteration);
            let id = TreeId {
                iteration: iteration as u64,
                prompt: 0,
                tree: 0,
            };
            let tree = rollout_tree(&field, class, &sched, &setup.grid, &setup.sde, &setup.noise, id)?;
            emit(out.as_deref(), &format!("{}\n", tree.dump_json()?))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
