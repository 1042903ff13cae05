//! Command-line entry point.
//!
//! Subcommands: `gen`, `train`, `eval`, `bounds`, `taylor`,
//! `ablate {pair-vs-single|lambda|size|multi-pair}`, `customize`, `report`.
//! A JSON config file supplies the experiment configuration; CLI flags named
//! after the field paths (`--train.eta`, `--gen.num-pairs`, ...) override
//! individual fields.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 capacity error,
//! 5 trend-check failure under `--check`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use pairlab::condmodel::ModelParams;
use pairlab::datagen::{build_paired_dataset, read_jsonl, to_jsonl_bytes};
use pairlab::error::{Error, Result};
use pairlab::harness::{
    self, manifest::OutputWriter, verify_manifest, Experiment, ExperimentConfig, RunOutcome,
};
use pairlab::trainer::{train, TrainMode};

#[derive(Parser)]
#[command(
    name = "pairlab",
    version,
    about = "Paired value-conflict preference laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config-file plus field-path overrides shared by all run commands.
#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long = "output-dir", value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',', value_name = "S,...")]
    seeds: Option<Vec<u64>>,

    #[arg(long = "gen.num-scenarios", value_name = "N")]
    gen_num_scenarios: Option<usize>,
    #[arg(long = "gen.num-pairs", value_name = "N")]
    gen_num_pairs: Option<usize>,
    #[arg(long = "gen.m", value_name = "M")]
    gen_m: Option<usize>,
    #[arg(long = "gen.d", value_name = "D")]
    gen_d: Option<usize>,
    #[arg(long = "gen.trait-scale", value_name = "X")]
    gen_trait_scale: Option<f64>,
    #[arg(long = "gen.seed", value_name = "SEED")]
    gen_seed: Option<u64>,

    #[arg(long = "train.eta", value_name = "X")]
    train_eta: Option<f64>,
    #[arg(long = "train.lambda-pos", value_name = "X")]
    train_lambda_pos: Option<f64>,
    #[arg(long = "train.lambda-neg", value_name = "X")]
    train_lambda_neg: Option<f64>,
    #[arg(long = "train.epochs", value_name = "N")]
    train_epochs: Option<usize>,
    #[arg(long = "train.seed", value_name = "SEED")]
    train_seed: Option<u64>,
    #[arg(long = "train.mode", value_name = "MODE")]
    train_mode: Option<TrainMode>,

    /// Comma-separated training-set sizes for the size ablation.
    #[arg(long, value_delimiter = ',', value_name = "N,...")]
    sizes: Option<Vec<usize>>,

    #[arg(long = "bounds.epsilon", value_name = "X")]
    bounds_epsilon: Option<f64>,
    #[arg(long = "bounds.n", value_name = "N")]
    bounds_n: Option<usize>,
    #[arg(long = "bounds.delta", value_name = "X")]
    bounds_delta: Option<f64>,
    #[arg(long = "bounds.repetitions", value_name = "N")]
    bounds_repetitions: Option<usize>,

    #[arg(long = "customize.k", value_name = "K")]
    customize_k: Option<usize>,
    #[arg(long = "customize.num-users", value_name = "N")]
    customize_num_users: Option<usize>,
    #[arg(long = "customize.grid-per-dim", value_name = "N")]
    customize_grid_per_dim: Option<usize>,
}

impl CommonOpts {
    /// Load the config (file or defaults) and apply the field overrides.
    fn resolve(&self, experiment: Experiment) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let mut c = ExperimentConfig::from_json_file(path)?;
                c.experiment = experiment;
                c
            }
            None => ExperimentConfig::for_experiment(
                experiment,
                PathBuf::from("runs").join(experiment.name()),
            ),
        };
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(v) = self.gen_num_scenarios {
            cfg.gen.num_scenarios = v;
        }
        if let Some(v) = self.gen_num_pairs {
            cfg.gen.num_pairs = v;
        }
        if let Some(v) = self.gen_m {
            cfg.gen.m = v;
        }
        if let Some(v) = self.gen_d {
            cfg.gen.d = v;
        }
        if let Some(v) = self.gen_trait_scale {
            cfg.gen.trait_scale = v;
        }
        if let Some(v) = self.gen_seed {
            cfg.gen.seed = v;
        }
        if let Some(v) = self.train_eta {
            cfg.train.eta = v;
        }
        if let Some(v) = self.train_lambda_pos {
            cfg.train.lambda_pos = v;
        }
        if let Some(v) = self.train_lambda_neg {
            cfg.train.lambda_neg = v;
        }
        if let Some(v) = self.train_epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.train_seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.train_mode {
            cfg.train.mode = v;
        }
        if let Some(v) = &self.sizes {
            cfg.sizes = v.clone();
        }
        if let Some(v) = self.bounds_epsilon {
            cfg.bounds.epsilon = v;
        }
        if let Some(v) = self.bounds_n {
            cfg.bounds.n = v;
        }
        if let Some(v) = self.bounds_delta {
            cfg.bounds.delta = v;
        }
        if let Some(v) = self.bounds_repetitions {
            cfg.bounds.repetitions = v;
        }
        if let Some(v) = self.customize_k {
            cfg.customize.k = v;
        }
        if let Some(v) = self.customize_num_users {
            cfg.customize.num_users = v;
        }
        if let Some(v) = self.customize_grid_per_dim {
            cfg.customize.grid_per_dim = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write train/test JSONL files.
    Gen {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Train one model and write its trace and final parameters.
    Train {
        #[command(flatten)]
        opts: CommonOpts,
        /// Read the dataset from this directory's train.jsonl instead of
        /// regenerating it.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Train and report per-pair metrics on the held-out split.
    Eval {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Risk-bound study over the preference manifold.
    Bounds {
        #[command(flatten)]
        opts: CommonOpts,
        /// Exit 5 if a trend check fails.
        #[arg(long)]
        check: bool,
    },
    /// Update-dynamics residual-order study.
    Taylor {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        check: bool,
    },
    /// Ablation studies.
    Ablate {
        #[command(subcommand)]
        which: AblateCommand,
    },
    /// Few-shot preference inference study.
    Customize {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        check: bool,
    },
    /// Verify the digests recorded in a run manifest.
    Report {
        /// Directory containing run_manifest.json.
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum AblateCommand {
    /// Single-side baselines vs the synchronous paired model.
    PairVsSingle {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        check: bool,
    },
    /// Loss-weight grid sweep.
    Lambda {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        check: bool,
    },
    /// Training-set size sweep.
    Size {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        check: bool,
    },
    /// Per-pair specialists vs mixed multi-pair training.
    MultiPair {
        #[command(flatten)]
        opts: CommonOpts,
        #[arg(long)]
        check: bool,
    },
}

fn print_outcome(outcome: &RunOutcome) {
    for check in &outcome.checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", check.name, check.detail);
    }
    println!(
        "wrote {} outputs and {}",
        outcome.outputs.len(),
        outcome.manifest_path.display()
    );
}

fn finish(outcome: RunOutcome, check: bool) -> i32 {
    print_outcome(&outcome);
    if check && !outcome.all_passed() {
        5
    } else {
        0
    }
}

fn cmd_gen(cfg: &ExperimentConfig) -> Result<i32> {
    let ds = build_paired_dataset(&cfg.gen)?;
    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("train.jsonl", &to_jsonl_bytes(&ds.train)?)?;
    writer.write("test.jsonl", &to_jsonl_bytes(&ds.test)?)?;
    let (manifest, outputs) = writer.finalize("gen", &cfg.seeds, cfg)?;
    println!(
        "generated {} train / {} test examples; wrote {} outputs and {}",
        ds.train.len(),
        ds.test.len(),
        outputs.len(),
        manifest.display()
    );
    Ok(0)
}

fn cmd_train(cfg: &ExperimentConfig, data: Option<&PathBuf>) -> Result<i32> {
    let pairs = cfg.gen.pairs()?;
    let train_set = match data {
        Some(dir) => read_jsonl(&dir.join("train.jsonl"), &pairs)?,
        None => build_paired_dataset(&cfg.gen)?.train,
    };
    let trace = train(&ModelParams::zeros(cfg.gen.m), &train_set, &cfg.train)?;
    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("trace.csv", trace.to_csv().as_bytes())?;
    writer.write("model.json", trace.final_model.to_json()?.as_bytes())?;
    let (manifest, _) = writer.finalize("train", &cfg.seeds, cfg)?;
    let last = trace.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} examples, final loss {:.6}; wrote {}",
        cfg.train.epochs,
        train_set.len(),
        last.loss_total,
        manifest.display()
    );
    Ok(0)
}

fn cmd_eval(cfg: &ExperimentConfig) -> Result<i32> {
    use pairlab::evalkit::{per_preference_report, MetricReport};
    let ds = build_paired_dataset(&cfg.gen)?;
    let trace = train(&ModelParams::zeros(cfg.gen.m), &ds.train, &cfg.train)?;
    let mut csv = String::from(MetricReport::CSV_HEADER);
    csv.push('\n');
    for pair in &ds.pairs {
        let scenarios: Vec<_> = ds
            .test
            .iter()
            .filter(|ex| ex.x.pair_id == pair.pair_id())
            .map(|ex| ex.x.clone())
            .collect();
        let rep = per_preference_report(
            &trace.final_model,
            &scenarios,
            &pair.pos.vector,
            &pair.neg.vector,
        )?;
        csv.push_str(&rep.csv_row(pair.pair_id()));
        csv.push('\n');
        println!(
            "pair {}: acc_one_avg {:.4}, acc_all_avg {:.4} over {} scenarios",
            pair.pair_id(),
            rep.acc_one_avg,
            rep.acc_all_avg,
            rep.n_scenarios
        );
    }
    let mut writer = OutputWriter::new(&cfg.output_dir)?;
    writer.write("metrics.csv", csv.as_bytes())?;
    writer.write("model.json", trace.final_model.to_json()?.as_bytes())?;
    let (manifest, _) = writer.finalize("eval", &cfg.seeds, cfg)?;
    println!("wrote {}", manifest.display());
    Ok(0)
}

fn cmd_report(dir: &std::path::Path) -> Result<i32> {
    let (manifest, mismatched) = verify_manifest(dir)?;
    println!(
        "experiment {} (version {}), {} outputs",
        manifest.experiment,
        manifest.version,
        manifest.outputs.len()
    );
    for out in &manifest.outputs {
        let ok = !mismatched.contains(&out.path);
        println!(
            "[{}] {} {}",
            if ok { "OK" } else { "MISMATCH" },
            out.sha256,
            out.path
        );
    }
    if mismatched.is_empty() {
        println!("all digests match");
        Ok(0)
    } else {
        Err(Error::Parse {
            line: 0,
            msg: format!("{} output files changed since the run", mismatched.len()),
        })
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen { opts } => cmd_gen(&opts.resolve(Experiment::PairVsSingle)?),
        Command::Train { opts, data } => {
            cmd_train(&opts.resolve(Experiment::PairVsSingle)?, data.as_ref())
        }
        Command::Eval { opts } => cmd_eval(&opts.resolve(Experiment::PairVsSingle)?),
        Command::Bounds { opts, check } => {
            let cfg = opts.resolve(Experiment::Bounds)?;
            Ok(finish(harness::run_bounds(&cfg)?, check))
        }
        Command::Taylor { opts, check } => {
            let cfg = opts.resolve(Experiment::Taylor)?;
            Ok(finish(harness::run_taylor(&cfg)?, check))
        }
        Command::Customize { opts, check } => {
            let cfg = opts.resolve(Experiment::Customize)?;
            Ok(finish(harness::run_customize(&cfg)?, check))
        }
        Command::Ablate { which } => match which {
            AblateCommand::PairVsSingle { opts, check } => {
                let cfg = opts.resolve(Experiment::PairVsSingle)?;
                Ok(finish(harness::run_pair_vs_single(&cfg)?, check))
            }
            AblateCommand::Lambda { opts, check } => {
                let cfg = opts.resolve(Experiment::LambdaGrid)?;
                Ok(finish(harness::run_lambda_grid(&cfg)?, check))
            }
            AblateCommand::Size { opts, check } => {
                let cfg = opts.resolve(Experiment::DatasetSize)?;
                Ok(finish(harness::run_dataset_size(&cfg)?, check))
            }
            AblateCommand::MultiPair { opts, check } => {
                let cfg = opts.resolve(Experiment::MultiPair)?;
                Ok(finish(harness::run_multi_pair(&cfg)?, check))
            }
        },
        Command::Report { dir } => cmd_report(&dir),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
