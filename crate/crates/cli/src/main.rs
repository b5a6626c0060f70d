use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use fogedge::export::{PackedModel, FLASH_BUDGET, PACKED_MAGIC};
use fogedge::host::{self, LocalLink, StreamLog, TcpLink, Transport, DEFAULT_TIMEOUT};
use fogedge::ingest::{ingest_dir, read_clean_dir, Channel, Exclusions};
use fogedge::micro::{serve, Device, DeviceConfig, DEFAULT_RAM_BUDGET};
use fogedge::nn::io::{load_float_model, save_float_model, FLOAT_MAGIC};
use fogedge::nn::{EvalReport, History, TrainSpec};
use fogedge::pipeline::{self, SegmentParams};
use fogedge::tune::{grid_search, Grid, TuneResult};
use fogedge::windows::{apply_stats, fit_stats, read_splits, write_splits, SplitFractions, Splits, WindowSet};

#[derive(Parser)]
#[command(
    name = "fogedge",
    version,
    about = "Freezing-of-gait detection from thigh acceleration, down to a simulated microcontroller."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw logs, drop out-of-experiment data and write cleaned series.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "thigh")]
        channel: Channel,
        /// JSON file of extra time ranges to drop.
        #[arg(long)]
        exclusions: Option<PathBuf>,
    },
    /// Cut cleaned series into labelled windows, split and oversample.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 129)]
        window: usize,
        #[arg(long, default_value_t = 64)]
        hop: usize,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Train, validation and test fractions.
        #[arg(long, default_value = "0.7,0.15,0.15")]
        split: SplitFractions,
    },
    /// Train the CNN on the training split.
    Train {
        #[arg(long)]
        windows: PathBuf,
        /// Training options as JSON; every key is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Grid-search hyperparameters on the validation split.
    Tune {
        #[arg(long)]
        windows: PathBuf,
        /// Grid as JSON; the built-in grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Base training options for everything the grid does not vary.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Freeze, calibrate, quantize and pack a trained model.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = FLASH_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Serve a simulated device on a local TCP port.
    Device {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        listen: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        budgets: Budgets,
    },
    /// Stream windows to a device and report on its replies.
    Stream {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        budgets: Budgets,
        #[arg(long)]
        windows: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-window log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check that the device echoes every float incremented by one.
    EchoCheck {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        budgets: Budgets,
        /// Values to send; random ones when omitted.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f32>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Evaluate a float or packed model on a split.
    Evaluate {
        /// `model.fp.bin` or `model.q.bin`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
        split: SplitChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Budgets {
    #[arg(long, default_value_t = FLASH_BUDGET)]
    flash_budget: usize,
    #[arg(long, default_value_t = DEFAULT_RAM_BUDGET)]
    ram_budget: usize,
}

impl Budgets {
    fn config(&self) -> DeviceConfig {
        DeviceConfig { flash_budget: self.flash_budget, ram_budget: self.ram_budget }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Target {
    /// Run an in-process device with this packed model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Talk to a device served at host:port.
    #[arg(long)]
    connect: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

fn pick(splits: Splits, which: SplitChoice) -> WindowSet {
    match which {
        SplitChoice::Train => splits.train,
        SplitChoice::Val => splits.val,
        SplitChoice::Test => splits.test,
        SplitChoice::All => {
            [splits.train, splits.val, splits.test].into_iter().flat_map(WindowSet::into_windows).collect()
        }
    }
}

fn load_splits(path: &Path) -> Result<Splits> {
    let (splits, manifest) = read_splits(path).with_context(|| format!("reading {}", path.display()))?;
    if manifest.is_none() {
        log::warn!("{} has no split manifest; treating every window as test data", path.display());
    }
    Ok(splits)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn open_target(target: &Target, budgets: &Budgets) -> Result<Box<dyn Transport>> {
    if let Some(addr) = &target.connect {
        return Ok(Box::new(TcpLink::connect(addr.as_str(), DEFAULT_TIMEOUT)?));
    }
    let path = target.model.as_ref().expect("clap enforces one target");
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (device, boot) = Device::init(&bytes, budgets.config())?;
    Ok(Box::new(LocalLink::new(device, boot)))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    class_weights: [f64; 2],
    history: &'a History,
    validation: EvalReport,
    test: EvalReport,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { input, out, channel, exclusions } => {
            let exclusions = match exclusions {
                Some(p) => Exclusions::load(&p)?,
                None => Exclusions::default(),
            };
            let s = ingest_dir(&input, &out, channel, &exclusions)?;
            println!("{} files, {} records, {} series, {} samples kept", s.files, s.records, s.series, s.kept_samples);
        }
        Command::Segment { input, out, window, hop, ratio, seed, split } => {
            let series = read_clean_dir(&input)?;
            let params = SegmentParams { window, hop, ratio, seed, fractions: split };
            let splits = pipeline::build_splits(&series, &params)?;
            write_splits(&out, &splits, params.manifest())?;
            for (name, set) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                let [nofog, fog] = set.class_counts();
                println!("{name}: {} windows ({nofog} No-FoG, {fog} FoG)", set.len());
            }
        }
        Command::Train { windows, config, out, report } => {
            let spec: TrainSpec = match config {
                Some(p) => read_json(&p)?,
                None => TrainSpec::default(),
            };
            let splits = load_splits(&windows)?;
            let (model, stats, history) = pipeline::train_model(&splits, &spec)?;
            save_float_model(&out, &model, &stats)?;
            let validation = pipeline::evaluate_float(&model, &stats, &splits.val);
            let test = pipeline::evaluate_float(&model, &stats, &splits.test);
            println!("best epoch {} of {}", history.best_epoch, history.epochs.len());
            print!("validation\n{}test\n{}", validation.table(), test.table());
            if let Some(p) = report {
                let class_weights = spec.to_config(&apply_stats(&splits.train, &stats))?.class_weights;
                write_json(&p, &TrainReport { class_weights, history: &history, validation, test })?;
            }
        }
        Command::Tune { windows, grid, config, out, seed } => {
            let grid: Grid = match grid {
                Some(p) => read_json(&p)?,
                None => Grid::default(),
            };
            let base: TrainSpec = match config {
                Some(p) => read_json(&p)?,
                None => TrainSpec::default(),
            };
            let splits = load_splits(&windows)?;
            let stats = fit_stats(&splits.train)?;
            let result: TuneResult = grid_search(
                &grid,
                &apply_stats(&splits.train, &stats),
                &apply_stats(&splits.val, &stats),
                &base,
                seed,
            )?;
            for row in &result.table {
                println!(
                    "filters {:>3}  lr {:<8}  epochs {:>3}  batch {:>3}  val acc {:.4}  val loss {:.4}  {} bytes",
                    row.cell.filters,
                    row.cell.learning_rate,
                    row.cell.epochs,
                    row.cell.batch_size,
                    row.val_accuracy,
                    row.val_loss,
                    row.model_size_bytes
                );
            }
            println!("best: {:?}", result.best);
            write_json(&out, &result)?;
        }
        Command::Export { model, windows, out, budget, seed } => {
            let (model, stats) = load_float_model(&model)?;
            let splits = load_splits(&windows)?;
            let calib = if splits.train.is_empty() { &splits.test } else { &splits.train };
            let packed = pipeline::export_trained(&model, &stats, calib, budget, seed)?;
            packed.save(&out)?;
            println!(
                "{}: {} bytes ({:.1}% of {budget})",
                out.display(),
                packed.size_bytes(),
                100.0 * packed.size_bytes() as f64 / budget as f64
            );
        }
        Command::Device { model, listen, host, budgets } => {
            let bytes = fs::read(&model).with_context(|| format!("reading {}", model.display()))?;
            let (device, _) = Device::init(&bytes, budgets.config())?;
            let m = device.memory_report();
            println!(
                "flash {} bytes ({:.1}%), RAM at boot {} bytes ({:.1}%)",
                m.flash_used, m.flash_pct, m.ram_high_water, m.ram_pct
            );
            let listener = TcpListener::bind((host.as_str(), listen))?;
            println!("listening on {}", listener.local_addr()?);
            serve(listener, bytes, budgets.config())?;
        }
        Command::Stream { target, budgets, windows, split, out, log } => {
            let set = pick(load_splits(&windows)?, split);
            let mut link = open_target(&target, &budgets)?;
            host::start_classify(link.as_mut())?;
            let stream_log: StreamLog = host::stream_windows(link.as_mut(), set.windows())?;
            let (eval, summary) = host::report(&stream_log);
            host::write_report(&out, &summary)?;
            if let Some(p) = log {
                write_json(&p, &stream_log)?;
            }
            print!("{}{}", eval.table(), summary.table());
        }
        Command::EchoCheck { target, budgets, values, count, seed } => {
            let values = if values.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| rng.random_range(-4000.0f32..4000.0)).collect()
            } else {
                values
            };
            let mut link = open_target(&target, &budgets)?;
            host::start_echo(link.as_mut())?;
            let report = host::echo_check(link.as_mut(), &values)?;
            print!("{}", report.summary());
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Evaluate { model, windows, split, out } => {
            let set = pick(load_splits(&windows)?, split);
            let bytes = fs::read(&model).with_context(|| format!("reading {}", model.display()))?;
            let eval = if bytes.starts_with(PACKED_MAGIC) {
                pipeline::evaluate_quantized(&PackedModel::from_bytes(&bytes)?, &set)
            } else if bytes.starts_with(FLOAT_MAGIC) {
                let (m, stats) = fogedge::nn::io::decode_float_model(&bytes)?;
                pipeline::evaluate_float(&m, &stats, &set)
            } else {
                bail!("{} is neither a float nor a packed model", model.display());
            };
            print!("{}", eval.table());
            if let Some(p) = out {
                write_json(&p, &eval)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
