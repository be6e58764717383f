mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, Array2, Axis};

use ssdl::data::{self, LabeledDataset};
use ssdl::eval::{self, ExperimentReport, ReportFormat};
use ssdl::inference::{self, Encoder};
use ssdl::trainer;

use config::CliConfig;

#[derive(Parser, Debug)]
#[command(name = "ssdl", version, about = "Semi-supervised dictionary learning with active points")]
struct Cli {
    /// Configuration file, TOML or JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Where the main result goes (model, predictions, codes or report).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    /// Report format of experiments.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Structured => ReportFormat::Structured,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learns a model from the configured dataset and split.
    Train,
    /// Classifies the samples of a delimited file.
    Predict(ApplyArgs),
    /// Writes the sparse code of every sample of a delimited file.
    Encode(ApplyArgs),
    /// Runs one of the evaluation protocols.
    Experiment {
        #[arg(value_enum)]
        name: Experiment,
    },
}

#[derive(Args, Debug)]
struct ApplyArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Samples, one per row.
    input: PathBuf,
    /// Column holding a label, which is dropped.
    #[arg(long)]
    label_column: Option<usize>,
    /// Cell separator; whitespace when absent.
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Experiment {
    LaplacianComparison,
    NoiseSweep,
    UnlabelledSweep,
    Benchmark,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("cannot start the thread pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    config.validate()?;

    match &cli.command {
        Command::Train => train(&config, cli.output.as_deref()),
        Command::Predict(args) => predict(&config, args, cli.output.as_deref(), false),
        Command::Encode(args) => predict(&config, args, cli.output.as_deref(), true),
        Command::Experiment { name } => experiment(&config, *name, cli.output.as_deref(), cli.format.into()),
    }
}

fn progress(config: &CliConfig, message: impl FnOnce() -> String) {
    if config.verbosity > 0 {
        eprintln!("{}", message());
    }
}

fn train(config: &CliConfig, output: Option<&Path>) -> Result<()> {
    let model_path = output
        .map(Path::to_owned)
        .or_else(|| config.output.model.clone())
        .context("no model path; pass --output or set output.model")?;
    let log_path = config.output.log.clone().unwrap_or_else(|| {
        let mut p = model_path.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });

    let ds = config.load_prepared(config.dataset()?)?;
    let split = data::split(&ds, &config.split)?;
    progress(config, || {
        format!(
            "training on {} labelled and {} unlabelled samples, {} features, {} classes",
            split.labels.len(),
            split.unlabelled_truth.len(),
            ds.features(),
            ds.classes
        )
    });
    let x = split.training_matrix();
    let result = trainer::train(x.view(), &split.labels, ds.classes, &config.train);
    let state = match result {
        Ok(state) => state,
        Err(ssdl::Error::Diverged { what, history }) => {
            write_log(&log_path, &history)?;
            bail!("training diverged ({what}) after {} iterations; log in {}", history.len(), log_path.display());
        }
        Err(e) => return Err(e.into()),
    };
    write_log(&log_path, &state.history)?;
    if config.verbosity > 1 {
        for (i, v) in state.history.iter().enumerate() {
            eprintln!("iteration {}: objective {v:.6e}", i + 1);
        }
    }
    trainer::save_model(&state, &model_path)?;

    if !split.test_labels.is_empty() {
        let encoder = Encoder::from_model(&state, config.train.fista)?;
        let (pred, _) = inference::predict_batch(&encoder, &state.classifier, split.x_test.view())?;
        let acc = eval::accuracy(&pred, &split.test_labels)?;
        progress(config, || format!("held-out accuracy {:.2}%", 100.0 * acc));
    }
    progress(config, || {
        format!(
            "{} iterations, final objective {:.6e}; model in {}",
            state.history.len(),
            state.history.last().copied().unwrap_or(f64::NAN),
            model_path.display()
        )
    });
    Ok(())
}

fn write_log(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["iteration", "objective"])?;
    for (i, v) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn predict(config: &CliConfig, args: &ApplyArgs, output: Option<&Path>, codes_only: bool) -> Result<()> {
    let state = trainer::load_model(&args.model)?;
    let features = state.samples.nrows();
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("cannot read {}", args.input.display()))?;
    let mut x = match args.label_column {
        Some(col) if !text.trim().is_empty() => data::parse_delimited(&text, col, args.delimiter, &args.input)?.0,
        _ => data::parse_features(&text, features, args.delimiter, &args.input)?,
    };
    if x.nrows() != features {
        bail!(
            "{} has {} features per sample but the model expects {features}",
            args.input.display(),
            x.nrows()
        );
    }
    data::preprocess(&mut x, &config.preprocess);
    let encoder = Encoder::from_model(&state, config.train.fista)?;

    let mut w = csv::Writer::from_writer(sink(output.or(config.output.predictions.as_deref()))?);
    if codes_only {
        let codes = encoder.encode_batch(x.view())?;
        w.write_record((0..state.hp.atoms).map(|a| format!("code_{a}")))?;
        for code in codes.columns() {
            w.write_record(code.iter().map(f64::to_string))?;
        }
    } else {
        let (classes, scores) = inference::predict_batch(&encoder, &state.classifier, x.view())?;
        let header = std::iter::once("class".to_string()).chain((0..state.classes).map(|c| format!("score_{c}")));
        w.write_record(header)?;
        for (j, class) in classes.iter().enumerate() {
            let column = scores.column(j);
            w.write_record(std::iter::once(class.to_string()).chain(column.iter().map(f64::to_string)))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("cannot write {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// `dataset` and `test_dataset` as one pool.
fn pooled(config: &CliConfig) -> Result<LabeledDataset> {
    let ds = config.load_prepared(config.dataset()?)?;
    let Some(test) = &config.test_dataset else {
        return Ok(ds);
    };
    let test = config.load_prepared(test)?;
    if test.features() != ds.features() {
        bail!("dataset has {} features but test_dataset has {}", ds.features(), test.features());
    }
    let x: Array2<f64> = concatenate(Axis(1), &[ds.x.view(), test.x.view()])?;
    let y = ds.y.iter().chain(&test.y).copied().collect();
    Ok(LabeledDataset::new(x, y, ds.classes.max(test.classes))?)
}

fn train_and_test(config: &CliConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = config.load_prepared(config.dataset()?)?;
    let test = config
        .test_dataset
        .as_ref()
        .context("this experiment needs a [test_dataset] section")?;
    Ok((train, config.load_prepared(test)?))
}

fn experiment(config: &CliConfig, name: Experiment, output: Option<&Path>, format: ReportFormat) -> Result<()> {
    let report: ExperimentReport = match name {
        Experiment::LaplacianComparison => {
            let (train, test) = train_and_test(config)?;
            eval::run_laplacian_comparison(&train, &test, &config.experiment.laplacian)?
        }
        Experiment::NoiseSweep => {
            let (train, test) = train_and_test(config)?;
            let mut settings = config.experiment.laplacian.clone();
            settings.noise_levels = config.experiment.noise_levels.clone();
            let mut report = eval::run_laplacian_comparison(&train, &test, &settings)?;
            report.experiment = "noise-sweep".into();
            report
        }
        Experiment::UnlabelledSweep => eval::run_unlabelled_sweep(&pooled(config)?, &config.experiment.sweep)?,
        Experiment::Benchmark => eval::run_benchmark(&pooled(config)?, &config.experiment.benchmark)?,
    };
    let bytes = eval::render_report(&report, format)?;
    match output.or(config.output.report.as_deref()) {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}
