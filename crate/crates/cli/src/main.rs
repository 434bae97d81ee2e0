use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ofrnn_core::data::{load_dataset, GeneratorConfig};
use ofrnn_core::decode::{BeamConfig, ThresholdMode};
use ofrnn_core::harness::{self, RunConfig};
use ofrnn_core::model::{checkpoint, ModelParams};
use ofrnn_core::train::{OrderMode, TrainConfig};

#[derive(Parser)]
#[command(name = "ofrnn", version, about = "Order-free recurrent multi-label classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark (train.ofmld, test.ofmld).
    GenData(GenArgs),
    /// Train both phases and choose the stopping threshold on a held-out tail.
    Train(TrainArgs),
    /// Print `id<TAB>labels<TAB>p_path` for every instance.
    Predict(PredictArgs),
    /// Print the six-metric report line.
    Eval(EvalArgs),
    /// Train and score full, w/o-attention, frequency-first and rare-first.
    Ablate(AblateArgs),
    /// Finite-difference check of every parameter group on a 3-step unroll.
    Gradcheck(GradcheckArgs),
    /// Sweep the stopping threshold on a validation file.
    TuneThreshold(TuneArgs),
    /// Write per-step attention grids for selected instances.
    ExportAttention(ExportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    prototype_norm: Option<f64>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 0.0003)]
    lr: f64,
    #[arg(long, default_value_t = 0.8)]
    keep_prob: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs_phase1)]
    epochs_phase1: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs_phase2)]
    epochs_phase2: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// confidence, frequency_first or rare_first.
    #[arg(long, default_value = "confidence")]
    order: String,
    /// Train with uniform attention weights.
    #[arg(long)]
    no_attention: bool,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    attention_dim: usize,
    #[arg(long, default_value_t = 64)]
    pred_hidden: usize,
    /// Beam width used for validation and threshold tuning.
    #[arg(long, default_value_t = 3)]
    beam: usize,
}

impl TrainOpts {
    fn run_config(&self) -> Result<RunConfig> {
        let order_mode: OrderMode = self.order.parse()?;
        Ok(RunConfig {
            train: TrainConfig {
                lr: self.lr,
                keep_prob: self.keep_prob,
                epochs_phase1: self.epochs_phase1,
                epochs_phase2: self.epochs_phase2,
                seed: self.seed,
                batch: self.batch,
                order_mode,
                attention_on: !self.no_attention,
            },
            beam: BeamConfig::new(self.beam, 0.5, 0),
            hidden: self.hidden,
            attention_dim: self.attention_dim,
            pred_hidden: self.pred_hidden,
            ..RunConfig::default()
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct DecodeOpts {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Beam width K.
    #[arg(long, default_value_t = 3)]
    beam: usize,
    /// Defaults to the value stored beside the checkpoint, else 0.5.
    #[arg(long)]
    threshold: Option<f64>,
    /// Defaults to the value stored beside the checkpoint, else the label count.
    #[arg(long)]
    max_len: Option<usize>,
    /// Compare the threshold with the whole path probability instead of the node.
    #[arg(long)]
    path_threshold: bool,
}

impl DecodeOpts {
    fn load(&self) -> Result<(ModelParams, ofrnn_core::data::DatasetManifest, BeamConfig)> {
        let params = checkpoint::load(&self.checkpoint)
            .with_context(|| format!("reading checkpoint {}", self.checkpoint.display()))?;
        let ds = load_dataset(&self.data).with_context(|| format!("reading dataset {}", self.data.display()))?;
        let stored = harness::read_decode_settings(&self.checkpoint)?;
        let threshold = self.threshold.or(stored.map(|s| s.0)).unwrap_or(0.5);
        let max_len = self.max_len.or(stored.map(|s| s.1)).unwrap_or(0);
        let mut beam = BeamConfig::new(self.beam, threshold, max_len);
        if self.path_threshold {
            beam.threshold_mode = ThresholdMode::Path;
        }
        Ok((params, ds, beam))
    }
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    decode: DecodeOpts,
    /// Greedy decoding; output format is the same as `--beam 1`.
    #[arg(long, conflicts_with = "beam")]
    greedy: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    decode: DecodeOpts,
    #[arg(long, default_value = "ours")]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    keep_prob: f64,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    decode: DecodeOpts,
    /// Comma-separated thresholds; defaults to 0.1,0.2,…,0.9.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    decode: DecodeOpts,
    /// Comma-separated instance ids.
    #[arg(long, value_delimiter = ',', required = true)]
    ids: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = GeneratorConfig::benchmark(a.seed);
            cfg.n_train = a.n_train.unwrap_or(cfg.n_train);
            cfg.n_test = a.n_test.unwrap_or(cfg.n_test);
            cfg.noise_sigma = a.noise_sigma.unwrap_or(cfg.noise_sigma);
            cfg.prototype_norm = a.prototype_norm.unwrap_or(cfg.prototype_norm);
            let (train, test) = harness::gen_data(&cfg, &a.out)?;
            println!("{}\n{}", train.display(), test.display());
        }
        Command::Train(a) => {
            let run = a.opts.run_config()?;
            let trained = harness::train_command(&a.data, &a.checkpoint, &run)?;
            println!("threshold\t{}", trained.threshold);
        }
        Command::Predict(a) => {
            let (params, ds, beam) = a.decode.load()?;
            let text = if a.greedy {
                harness::predict_greedy_command(&params, &ds, &beam)?
            } else {
                harness::predict_command(&params, &ds, &beam)?
            };
            emit(&text, a.out.as_deref())?;
        }
        Command::Eval(a) => {
            let (params, ds, beam) = a.decode.load()?;
            emit(&harness::eval_command(&params, &ds, &beam, &a.method)?, a.out.as_deref())?;
        }
        Command::Ablate(a) => {
            let base = a.opts.run_config()?;
            let train = load_dataset(&a.train)?;
            let test = load_dataset(&a.test)?;
            let rows = harness::ablate(&train, &test, &base)?;
            let report = harness::ablation_report(&rows);
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join("ablation.tsv"), &report)?;
            print!("{report}");
        }
        Command::Gradcheck(a) => {
            let report = harness::gradcheck_command(a.seed, a.keep_prob)?;
            println!("max_rel_error\t{:e}\tcoordinates\t{}", report.max_rel_error, report.coordinates);
            if !(report.max_rel_error < 1e-4) {
                bail!("gradient check failed: max relative error {:e}", report.max_rel_error);
            }
        }
        Command::TuneThreshold(a) => {
            let (params, ds, beam) = a.decode.load()?;
            let grid = if a.grid.is_empty() { harness::default_threshold_grid() } else { a.grid };
            let (best, table) = harness::tune_command(&params, &ds, &beam, &grid)?;
            print!("{table}");
            println!("best\t{best}");
        }
        Command::ExportAttention(a) => {
            let (params, ds, beam) = a.decode.load()?;
            for path in harness::export_attention(&params, &ds, &a.ids, &beam, &a.out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
