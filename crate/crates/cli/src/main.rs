use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ehdnas::archspace::{relax, ArchLogits, DiscreteArch, SearchSpaceSpec};
use ehdnas::dnas::{
    brute_force_best, export_dot, gen_task_data, search, sweep_beta, sweep_csv, train_final, FinalConfig, HardwareLoss,
    HwKind, HwScale, Objective, SearchConfig, Supernet, TaskData,
};
use ehdnas::hwloss::{
    evaluate_predictor, grad_arch_check, train_with_history, HwLossModel, LatencyPredictor, Scaler, TrainConfig,
};
use ehdnas::perfmodel::{benchmark, build_lut, gen_dataset, ingest_dataset, HardwareBudget, Lut, Paradigm};
use ehdnas::{Error, Result};

/// Hardware-aware differentiable architecture search at desk scale.
#[derive(Parser)]
#[command(name = "ehdnas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample architectures, benchmark them and write train/val/test JSONL files.
    GenDataset(GenDatasetArgs),
    /// Validate an external latency table and summarise it.
    Ingest(IngestArgs),
    /// Benchmark one architecture and print its latency report.
    Bench(BenchArgs),
    /// Build the per-block lookup table of a space on a budget.
    BuildLut(BuildLutArgs),
    /// Train the learned latency loss on a dataset.
    TrainHwloss(TrainHwlossArgs),
    /// Report prediction error of a trained model on a dataset.
    EvalHwloss(EvalHwlossArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Run one architecture search.
    Search(SearchArgs),
    /// Search and retrain over a grid of beta values and seeds; prints CSV.
    Sweep(SweepArgs),
    /// Exhaustively find the fastest architecture of a space.
    Oracle(OracleArgs),
    /// Render an architecture as a Graphviz digraph.
    ExportDot(ExportDotArgs),
}

#[derive(Args)]
struct SpaceArg {
    /// Search space: `default`, `wide` or a JSON file.
    #[arg(long, default_value = "default")]
    space: String,
}

impl SpaceArg {
    fn load(&self) -> Result<SearchSpaceSpec> {
        SearchSpaceSpec::from_name_or_path(&self.space)
    }
}

#[derive(Args)]
struct GenDatasetArgs {
    #[command(flatten)]
    space: SpaceArg,
    /// Budget: `small`, `medium`, `large` or a JSON file.
    #[arg(long, default_value = "large")]
    budget: String,
    /// Accelerator paradigm: GP or PP.
    #[arg(long, default_value = "GP")]
    paradigm: Paradigm,
    #[arg(long, default_value_t = 20000)]
    n_train: usize,
    #[arg(long, default_value_t = 4000)]
    n_val: usize,
    #[arg(long, default_value_t = 4000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Latency table in the dataset JSONL format.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    space: SpaceArg,
    /// Comma-separated op indices, one per layer.
    #[arg(long)]
    arch: DiscreteArch,
    #[arg(long, default_value = "large")]
    budget: String,
    #[arg(long, default_value = "GP")]
    paradigm: Paradigm,
}

#[derive(Args)]
struct BuildLutArgs {
    #[command(flatten)]
    space: SpaceArg,
    #[arg(long, default_value = "large")]
    budget: String,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainHwlossArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Per-layer embedding size E.
    #[arg(long, default_value_t = 10)]
    embedding: usize,
    /// Width of both hidden layers.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalHwlossArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Also evaluate the lookup table of --space on the dataset's budget.
    #[arg(long)]
    compare_lut: bool,
    /// Space for the lookup table (with --compare-lut).
    #[command(flatten)]
    space: SpaceArg,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model to check; a freshly initialised one when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    space: SpaceArg,
    /// Random relaxed architectures to check at.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TaskArgs {
    /// Samples in the synthetic classification task.
    #[arg(long, default_value_t = 2000)]
    task_n: usize,
    /// Standard deviation of the task's cluster noise.
    #[arg(long, default_value_t = 0.5)]
    task_noise: f64,
    /// Seed of the task data.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl TaskArgs {
    fn load(&self, space: &SearchSpaceSpec) -> Result<TaskData> {
        gen_task_data(
            self.data_seed,
            self.task_n,
            space.input_dim(),
            space.num_classes(),
            self.task_noise,
        )
    }
}

#[derive(Args)]
struct HwArgs {
    /// Hardware loss: deep, lut or none.
    #[arg(long, default_value = "none")]
    hw: HwKind,
    /// Trained model file (with --hw deep).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Lookup table file (with --hw lut); built from --lut-budget when absent.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, default_value = "large")]
    lut_budget: String,
    /// Units of the hardware term: std (standardised) or ms.
    #[arg(long, default_value = "std")]
    hw_scale: HwScale,
}

enum LoadedHw {
    Deep(HwLossModel),
    Lut(Lut),
    None,
}

impl LoadedHw {
    fn load(args: &HwArgs, space: &SearchSpaceSpec) -> Result<Self> {
        match args.hw {
            HwKind::Deep => {
                let path = args
                    .model
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("--hw deep needs --model".into()))?;
                Ok(LoadedHw::Deep(HwLossModel::load(path)?))
            }
            HwKind::Lut => Ok(LoadedHw::Lut(match &args.lut {
                Some(path) => Lut::load(path)?,
                None => build_lut(space, &HardwareBudget::from_name_or_path(&args.lut_budget)?),
            })),
            HwKind::None => Ok(LoadedHw::None),
        }
    }

    fn as_dyn(&self) -> Option<&dyn HardwareLoss> {
        match self {
            LoadedHw::Deep(m) => Some(m),
            LoadedHw::Lut(l) => Some(l),
            LoadedHw::None => None,
        }
    }
}

#[derive(Args)]
struct SearchOpts {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr_weights: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 3e-3)]
    lr_arch: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Epochs of from-scratch training of the searched architecture.
    #[arg(long, default_value_t = 60)]
    final_epochs: usize,
}

impl SearchOpts {
    fn config(&self, beta: f64, hw: &HwArgs, seed: u64) -> SearchConfig {
        SearchConfig {
            beta,
            hw_kind: hw.hw,
            hw_scale: hw.hw_scale,
            epochs: self.epochs,
            lr_weights: self.lr_weights,
            momentum: self.momentum,
            lr_arch: self.lr_arch,
            batch_size: self.batch_size,
            seed,
            freeze_head: false,
        }
    }

    fn final_config(&self, seed: u64) -> FinalConfig {
        FinalConfig {
            epochs: self.final_epochs,
            lr: self.lr_weights,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    space: SpaceArg,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[command(flatten)]
    hw: HwArgs,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    opts: SearchOpts,
    /// Retrain the result from scratch and report its test accuracy.
    #[arg(long)]
    retrain: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the result JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    space: SpaceArg,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.005,0.001,0.0005,0.0001")]
    betas: Vec<f64>,
    /// Comma-separated search seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[command(flatten)]
    hw: HwArgs,
    #[command(flatten)]
    task: TaskArgs,
    #[command(flatten)]
    opts: SearchOpts,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    space: SpaceArg,
    #[arg(long, default_value = "large")]
    budget: String,
    #[arg(long, default_value = "GP")]
    paradigm: Paradigm,
    /// latency or ii (initiation interval).
    #[arg(long, default_value = "latency")]
    objective: Objective,
}

#[derive(Args)]
struct ExportDotArgs {
    #[command(flatten)]
    space: SpaceArg,
    #[arg(long)]
    arch: DiscreteArch,
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value serialises"));
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenDataset(a) => {
            let space = a.space.load()?;
            let budget = HardwareBudget::from_name_or_path(&a.budget)?;
            let splits = gen_dataset(&space, &budget, a.paradigm, a.n_train, a.n_val, a.n_test, a.seed)?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
            for (name, ds) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                ds.save(a.out_dir.join(format!("{name}.jsonl")))?;
            }
            print_json(&json!({
                "out_dir": a.out_dir,
                "train": splits.train.len(),
                "val": splits.val.len(),
                "test": splits.test.len(),
                "rejected_infeasible": splits.rejected,
            }));
        }
        Command::Ingest(a) => {
            let ds = ingest_dataset(&a.input)?;
            let lat: Vec<f64> = ds.records().iter().map(|r| r.latency_ms).collect();
            print_json(&json!({
                "k": ds.num_candidates(),
                "l": ds.num_layers(),
                "records": ds.len(),
                "min_latency_ms": lat.iter().copied().fold(f64::INFINITY, f64::min),
                "max_latency_ms": lat.iter().copied().fold(0.0, f64::max),
            }));
        }
        Command::Bench(a) => {
            let space = a.space.load()?;
            let budget = HardwareBudget::from_name_or_path(&a.budget)?;
            let report = benchmark(&a.arch, &space, &budget, a.paradigm)?;
            print_json(&serde_json::to_value(&report).expect("report serialises"));
        }
        Command::BuildLut(a) => {
            let lut = build_lut(&a.space.load()?, &HardwareBudget::from_name_or_path(&a.budget)?);
            match &a.out {
                Some(path) => {
                    lut.save(path)?;
                    let (mean, std) = lut.uniform_moments();
                    print_json(&json!({ "out": path, "mean_ms": mean, "std_ms": std }));
                }
                None => print_json(&serde_json::to_value(&lut).expect("LUT serialises")),
            }
        }
        Command::TrainHwloss(a) => {
            let train = ingest_dataset(&a.train)?;
            let val = ingest_dataset(&a.val)?;
            let cfg = TrainConfig {
                learning_rate: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                seed: a.seed,
                dropout_p: a.dropout,
                embedding_size: a.embedding,
                h1: a.hidden,
                h2: a.hidden,
            };
            let (model, history) = train_with_history(&train, &val, &cfg)?;
            model.save(&a.out)?;
            let best = history.iter().rfind(|h| h.checkpoint);
            print_json(&json!({
                "out": a.out,
                "epochs": history.len(),
                "best_epoch": best.map(|h| h.epoch),
                "best_val_mae_std": best.map(|h| h.val_mae),
            }));
        }
        Command::EvalHwloss(a) => {
            let model = HwLossModel::load(&a.model)?;
            let ds = ingest_dataset(&a.data)?;
            let mut reports = vec![evaluate_predictor(&model, &ds)?];
            if a.compare_lut {
                let budget = HardwareBudget::from_name_or_path(ds.budget())?;
                let lut = build_lut(&a.space.load()?, &budget);
                reports.push(evaluate_predictor(&lut as &dyn LatencyPredictor, &ds)?);
            }
            print_json(&serde_json::to_value(&reports).expect("reports serialise"));
        }
        Command::Gradcheck(a) => gradcheck(a)?,
        Command::Search(a) => {
            let space = a.space.load()?;
            let task = a.task.load(&space)?;
            let hw = LoadedHw::load(&a.hw, &space)?;
            let cfg = a.opts.config(a.beta, &a.hw, a.seed);
            let mut result = search(&space, &task, hw.as_dyn(), &cfg, &HardwareBudget::builtin())?;
            if a.retrain {
                result.final_accuracy = Some(train_final(&result.arch, &space, &task, &a.opts.final_config(a.seed))?);
            }
            let text = result.to_json();
            if let Some(path) = &a.out {
                write_file(path, &text)?;
            }
            print!("{text}");
        }
        Command::Sweep(a) => {
            let space = a.space.load()?;
            let task = a.task.load(&space)?;
            let hw = LoadedHw::load(&a.hw, &space)?;
            let base = a.opts.config(0.0, &a.hw, 0);
            let rows = sweep_beta(
                &space,
                &task,
                hw.as_dyn(),
                &base,
                &a.opts.final_config(0),
                &a.betas,
                &a.seeds,
            )?;
            let text = sweep_csv(&rows)?;
            if let Some(path) = &a.out {
                write_file(path, &text)?;
            }
            print!("{text}");
        }
        Command::Oracle(a) => {
            let space = a.space.load()?;
            let budget = HardwareBudget::from_name_or_path(&a.budget)?;
            let best = brute_force_best(&space, &budget, a.paradigm, a.objective)?;
            print_json(&match best {
                Some((arch, value)) => json!({ "feasible": true, "arch": arch.to_string(), "value_ms": value }),
                None => json!({ "feasible": false, "arch": null, "value_ms": null }),
            });
        }
        Command::ExportDot(a) => print!("{}", export_dot(&a.arch, &a.space.load()?)?),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let space = a.space.load()?;
    let (k, l) = (space.num_candidates(), space.num_layers());
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let model = match &a.model {
        Some(path) => HwLossModel::load(path)?,
        None => {
            let scaler = Scaler {
                mean_ms: 1.0,
                std_ms: 1.0,
            };
            HwLossModel::init(k, l, 10, 64, 64, 0.1, scaler, rng.random())?
        }
    };
    let net = Supernet::init(&space, rng.random());
    let task = gen_task_data(a.seed, 50, space.input_dim(), space.num_classes(), 0.5)?;
    let (mut hw_worst, mut net_worst) = (0.0f64, 0.0f64);
    for _ in 0..a.samples {
        let logits = ArchLogits::from_vec(k, l, (0..k * l).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let m = relax(&logits)?;
        hw_worst = hw_worst.max(grad_arch_check(&model, &m, a.eps)?);
        net_worst = net_worst.max(net.arch_grad_check(&task.train, &m, a.eps)?);
    }
    print_json(&json!({
        "samples": a.samples,
        "hwloss_max_rel_err": hw_worst,
        "supernet_max_rel_err": net_worst,
    }));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = ehdnas::parallel::init_global_pool().and_then(|_| run(cli.command));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
