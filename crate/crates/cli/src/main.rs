use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dkt_core::disparity::decompose_regions;
use dkt_core::experiment::{prepare, pretrain_config, ExperimentConfig};
use dkt_core::io::config::{read_config, write_config, RunConfig, CONFIG_KEYS};
use dkt_core::io::dataset::{read_dataset, write_dataset};
use dkt_core::io::pnm::{write_visualization, Visualization};
use dkt_core::io::read_disparity;
use dkt_core::io::report::{merge_reports, write_ablation, write_csv, write_run_report, COMPARISON_HEADER};
use dkt_core::matcher::MatcherParams;
use dkt_core::params::ParamVector;
use dkt_core::synth::{make_dataset, Domain, DomainSpec, Sample};
use dkt_core::trainer::{evaluate, finetune, pretrain, EvalSet, Strategy, TrainConfig, STRATEGY_NAMES};

#[derive(Parser)]
#[command(name = "dkt", version, about = "Toy stereo fine-tuning with filtered and ensembled labels")]
#[command(after_help = after_help())]
struct Cli {
    /// Worker threads for cost volumes and gradients.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stereo dataset.
    Synth {
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the matcher on a dataset and write a checkpoint.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a checkpoint with one label strategy.
    Finetune {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluation datasets, comma separated. Rows are named after the directory.
        #[arg(long, value_delimiter = ',')]
        eval_data: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        /// Directory receiving `<strategy>.csv` and `<strategy>.ckpt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against the dense ground truth of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
        /// Also write the metrics to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Split ground truth into regions relative to a pseudo-label map.
    Decompose {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pl: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        tau: f64,
        /// PPM rendering: green consistent, red inconsistent, black invalid.
        #[arg(long)]
        out_mask: Option<PathBuf>,
        /// Print the fraction of each region as well.
        #[arg(long)]
        stats: bool,
    },
    /// Generate data, pre-train once and fine-tune every preset strategy.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// Restrict the run to these strategies, comma separated.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge run CSVs under a directory into one comparison table.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default configuration file.
    Config,
}

#[derive(Args)]
struct ConfigArg {
    /// Key = value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => Ok(read_config(path)?),
            None => Ok(RunConfig { train: TrainConfig::default(), experiment: ExperimentConfig::default() }),
        }
    }
}

fn after_help() -> String {
    let mut s = String::from("Strategies (<tau> is a threshold in pixels, e.g. gt-consistent-3):\n");
    for name in STRATEGY_NAMES {
        s += &format!("  {name}\n");
    }
    s += "\nConfig keys:\n";
    for (key, what) in CONFIG_KEYS {
        s += &format!("  {key:<20} {what}\n");
    }
    s += "\nExit status: 0 success, 1 usage error, 2 runtime error.";
    s
}

fn load_checkpoint(path: &Path) -> Result<MatcherParams> {
    let pv = ParamVector::load(path)?;
    MatcherParams::from_param_vector(&pv).with_context(|| format!("{} is not a matcher checkpoint", path.display()))
}

fn load_data(dir: &Path) -> Result<Vec<Sample>> {
    read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { domain, n, seed, width, height, out } => {
            let spec = DomainSpec::preset(domain, width, height);
            let samples = make_dataset(&spec, n, seed)?;
            let seeds: Vec<u64> = (0..n as u64).map(|i| seed.wrapping_add(i)).collect();
            write_dataset(&out, &samples, &seeds)?;
            println!("wrote {n} domain {domain} samples to {}", out.display());
        }
        Command::Pretrain { data, config, out } => {
            let cfg = config.load()?;
            let samples = load_data(&data)?;
            let theta = pretrain(&pretrain_config(&cfg.experiment, &cfg.train), &samples)?;
            theta.to_param_vector().save(&out)?;
            let rate = evaluate(&theta, &samples, cfg.train.eval_threshold)?.bad_pixel_rate;
            println!("training-set bad_pixel_rate={rate:.4}; checkpoint {}", out.display());
        }
        Command::Finetune { strategy, init, data, eval_data, config, out } => {
            let cfg = config.load()?;
            let theta = load_checkpoint(&init)?;
            let samples = load_data(&data)?;
            let named: Vec<(String, Vec<Sample>)> = eval_data
                .iter()
                .map(|p| {
                    let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into());
                    Ok((name, load_data(p)?))
                })
                .collect::<Result<_>>()?;
            let sets: Vec<EvalSet<'_>> = named.iter().map(|(n, s)| EvalSet { name: n, samples: s }).collect();
            let report = finetune(strategy, &cfg.train, &theta, &samples, &sets)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let stem = strategy.to_string();
            write_run_report(&report, out.join(format!("{stem}.csv")))?;
            report.student.to_param_vector().save(out.join(format!("{stem}.ckpt")))?;
            for (name, _) in &named {
                if let (Some(a), Some(b)) = (report.initial_row(name), report.final_row(name)) {
                    println!("{name}: bad_pixel_rate {:.4} -> {:.4}", a.bad_pixel_rate, b.bad_pixel_rate);
                }
            }
        }
        Command::Eval { ckpt, data, threshold, csv } => {
            let theta = load_checkpoint(&ckpt)?;
            let samples = load_data(&data)?;
            let r = evaluate(&theta, &samples, threshold)?;
            println!(
                "bad_pixel_rate={} mean_abs_error={} images={}",
                r.bad_pixel_rate,
                r.mean_abs_error,
                samples.len()
            );
            if let Some(path) = csv {
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                let row = vec![
                    data.display().to_string(),
                    threshold.to_string(),
                    r.bad_pixel_rate.to_string(),
                    r.mean_abs_error.to_string(),
                ];
                write_csv(file, &["data", "threshold", "bad_pixel_rate", "mean_abs_error"], &[row])?;
            }
        }
        Command::Decompose { gt, pl, tau, out_mask, stats } => {
            let gt_map = read_disparity(&gt)?;
            let pl_map = read_disparity(&pl)?;
            if pl_map.valid_count() < pl_map.len() {
                eprintln!(
                    "warning: {} has {} invalid pixels; their stored values are still compared",
                    pl.display(),
                    pl_map.len() - pl_map.valid_count()
                );
            }
            let part = decompose_regions(&gt_map, &pl_map, tau)?;
            let c = part.counts();
            println!("consistent={} inconsistent={} invalid={}", c.consistent, c.inconsistent, c.invalid);
            if stats {
                let total = c.total() as f64;
                for (name, n) in
                    [("consistent", c.consistent), ("inconsistent", c.inconsistent), ("invalid", c.invalid)]
                {
                    println!("{name}_fraction={:.6}", n as f64 / total);
                }
            }
            if let Some(path) = out_mask {
                write_visualization(Visualization::Partition(&part), path)?;
            }
        }
        Command::Ablate { config, strategies, out } => {
            let cfg = config.load()?;
            let strategies = if strategies.is_empty() { Strategy::presets() } else { strategies };
            let prepared = prepare(&cfg.experiment, &cfg.train)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            prepared.pretrained.to_param_vector().save(out.join("pretrained.ckpt"))?;
            let rows = prepared.ablate(&strategies, &cfg.train)?;
            let path = out.join("ablation.csv");
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_ablation(&rows, file)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} rows written to {} ({failed} failed)", rows.len(), path.display());
        }
        Command::Report { runs, out } => {
            let table = merge_reports(&runs)?;
            if table.is_empty() {
                bail!("no run CSVs found under {}", runs.display());
            }
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_csv(file, &COMPARISON_HEADER, &table)?;
            println!("{} rows written to {}", table.len(), out.display());
        }
        Command::Config => {
            print!(
                "{}",
                write_config(&RunConfig { train: TrainConfig::default(), experiment: ExperimentConfig::default() })
            );
        }
    }
    Ok(())
}

/// Joins the error chain, skipping causes whose text the previous message
/// already ends with.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &text;
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(2)
        }
    }
}
