//! `ssc` command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use sanity_core::attribution::Explainer;
use sanity_core::data::{Dataset, Split};
use sanity_core::metrics::Preprocessing;
use sanity_core::nn::{presets, Network};
use sanity_core::randomize::Mode;
use sanity_core::seed;
use sanity_core::train::{accuracy_with, initialize, train_with, InitKind, InitScheme, TrainConfig};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::datasets::{DatasetChoice, MnistPaths, SyntheticParams, DATA_DIR_ENV};
use crate::experiment::{run_experiment, with_pool, ExperimentConfig, MethodKind, MethodParams, RayonExecutor, Seeds};
use crate::explanation_io::save_explanation;
use crate::report::{emit_report, regenerate, write_error_manifest};
use crate::{HarnessError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "ssc",
    version,
    about = "Parameter-randomization sanity checks for saliency maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint.
    Train(TrainCmd),
    /// Explain one test image with one method.
    Explain(ExplainCmd),
    /// Run the randomization experiment and write a report.
    Sanity(SanityCmd),
    /// Regenerate summary.csv and plots from an existing records.csv.
    Report(ReportCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Mlp,
    Cnn,
}

impl ModelArg {
    pub fn name(self) -> &'static str {
        match self {
            ModelArg::Mlp => "mlp",
            ModelArg::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cascading,
    Independent,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Cascading => vec![Mode::Cascading],
            ModeArg::Independent => vec![Mode::Independent],
            ModeArg::Both => vec![Mode::Cascading, Mode::Independent],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreprocessingArg {
    Absolute,
    Signed,
    Both,
}

impl PreprocessingArg {
    fn list(self) -> Vec<Preprocessing> {
        match self {
            PreprocessingArg::Absolute => vec![Preprocessing::Absolute],
            PreprocessingArg::Signed => vec![Preprocessing::Signed],
            PreprocessingArg::Both => vec![Preprocessing::Absolute, Preprocessing::Signed],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    UniformFan,
    NormalTruncated,
}

impl From<InitArg> for InitKind {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::UniformFan => InitKind::UniformFan,
            InitArg::NormalTruncated => InitKind::NormalTruncated,
        }
    }
}

/// Where images come from. `$SSC_DATA_DIR` overrides every MNIST path flag.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub dataset: DatasetArg,
    /// Directory holding the four standard MNIST files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub synthetic_classes: usize,
    #[arg(long, default_value_t = 300)]
    pub synthetic_train_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub synthetic_test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,
}

impl DataArgs {
    pub fn choice(&self) -> Result<DatasetChoice> {
        match self.dataset {
            DatasetArg::Synthetic => Ok(DatasetChoice::Synthetic(SyntheticParams {
                classes: self.synthetic_classes,
                train_per_class: self.synthetic_train_per_class,
                test_per_class: self.synthetic_test_per_class,
                seed: self.synthetic_seed,
            })),
            DatasetArg::Mnist => {
                let paths = if let Some(p) = MnistPaths::from_env() {
                    p
                } else if let Some(dir) = &self.data_dir {
                    MnistPaths::in_dir(dir)
                } else {
                    match (
                        &self.train_images,
                        &self.train_labels,
                        &self.test_images,
                        &self.test_labels,
                    ) {
                        (Some(a), Some(b), Some(c), Some(d)) => MnistPaths {
                            train_images: a.clone(),
                            train_labels: b.clone(),
                            test_images: c.clone(),
                            test_labels: d.clone(),
                        },
                        _ => {
                            return Err(HarnessError::Config(format!(
                                "mnist needs ${DATA_DIR_ENV}, --data-dir, or all four IDX path flags"
                            )))
                        }
                    }
                };
                for p in [
                    &paths.train_images,
                    &paths.train_labels,
                    &paths.test_images,
                    &paths.test_labels,
                ] {
                    if !p.is_file() {
                        return Err(HarnessError::Data(format!("{}: no such file", p.display())));
                    }
                }
                Ok(DatasetChoice::Mnist(paths))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Seeds both weight initialization and batch shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed_train: u64,
    #[arg(long, value_enum, default_value = "uniform-fan")]
    pub init: InitArg,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            seed: self.seed_train,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainCmd {
    #[arg(long, value_enum, default_value = "cnn")]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long, default_value_t = 50)]
    pub ig_steps: usize,
    #[arg(long, default_value_t = 25)]
    pub noise_samples: usize,
    /// Noise std as a fraction of the input's value range.
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    /// Method wrapped by smooth_grad / var_grad.
    #[arg(long, default_value = "gradient")]
    pub noise_base: MethodKind,
    #[arg(long, default_value_t = Seeds::default().noise)]
    pub seed_noise: u64,
}

impl MethodArgs {
    fn params(&self) -> MethodParams {
        MethodParams {
            ig_steps: self.ig_steps,
            noise_samples: self.noise_samples,
            sigma_fraction: self.sigma,
            noise_base: self.noise_base,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExplainCmd {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Index into the test split.
    #[arg(long)]
    pub image: usize,
    #[arg(long)]
    pub method: MethodKind,
    /// Target class; defaults to the model's prediction.
    #[arg(long)]
    pub class: Option<usize>,
    #[command(flatten)]
    pub params: MethodArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SanityCmd {
    /// Checkpoint to test; without it a fresh model is trained first.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Architecture to train when no checkpoint is given.
    #[arg(long, value_enum, default_value = "cnn")]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Comma-separated; defaults to every method the model supports.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<MethodKind>,
    #[arg(long, default_value_t = 200)]
    pub testbed: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub preprocessing: PreprocessingArg,
    #[arg(long, default_value_t = Seeds::default().randomize)]
    pub seed_randomize: u64,
    #[arg(long, default_value_t = Seeds::default().testbed)]
    pub seed_testbed: u64,
    #[arg(long, value_enum, default_value = "uniform-fan")]
    pub reinit: InitArg,
    #[command(flatten)]
    pub params: MethodArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write every randomized variant's checkpoint to this directory.
    #[arg(long)]
    pub save_variants: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportCmd {
    #[arg(long = "in")]
    pub input: PathBuf,
}

fn build_and_train(
    model: ModelArg,
    data: &DatasetChoice,
    args: &TrainArgs,
    threads: Option<usize>,
) -> Result<(Network, f64)> {
    let train_ds = data.load(Split::Train)?;
    let test_ds = data.load(Split::Test)?;
    let shape = train_ds.image_shape().to_vec();
    let arch = match model {
        ModelArg::Mlp => presets::mlp(&shape, train_ds.num_classes())?,
        ModelArg::Cnn => presets::cnn(&shape, train_ds.num_classes())?,
    };
    let cfg = args.config();
    cfg.validate()?;
    let scheme = InitScheme::new(args.init.into(), seed::derive(args.seed_train, "init"));
    with_pool(threads, || -> Result<_> {
        let (net, stats) = train_with(initialize(&arch, &scheme), &train_ds, &cfg, &RayonExecutor)?;
        for s in &stats {
            log::info!(
                "epoch {}: loss {:.4}, train accuracy {:.4}",
                s.epoch,
                s.loss,
                s.accuracy
            );
        }
        let acc = accuracy_with(&net, &test_ds, &RayonExecutor)?;
        Ok((net, acc))
    })?
}

fn model_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn check_input(net: &Network, ds: &Dataset) -> Result<()> {
    if ds.image_shape() != net.input_shape() {
        return Err(HarnessError::Data(format!(
            "dataset images are {:?}, model expects {:?}",
            ds.image_shape(),
            net.input_shape()
        )));
    }
    Ok(())
}

fn cmd_train(c: &TrainCmd) -> Result<()> {
    let data = c.data.choice()?;
    let (net, acc) = build_and_train(c.model, &data, &c.train, c.threads)?;
    save_checkpoint(&net, &c.out)?;
    println!(
        "{} on {}: test accuracy {:.4}, {} parameters -> {}",
        c.model.name(),
        data.name(),
        acc,
        net.parameter_count(),
        c.out.display()
    );
    Ok(())
}

fn cmd_explain(c: &ExplainCmd) -> Result<()> {
    let net = load_checkpoint(&c.ckpt)?;
    let data = c.data.choice()?;
    let test = data.load(Split::Test)?;
    check_input(&net, &test)?;
    if c.image >= test.len() {
        return Err(HarnessError::Config(format!(
            "image {} out of range: test split has {} images",
            c.image,
            test.len()
        )));
    }
    let x = test.image(c.image);
    let class = match c.class {
        Some(k) => k,
        None => net.predict(&x)?,
    };
    let noise_seed = seed::derive_index(c.params.seed_noise, c.image as u64);
    let method = c.params.params().method(c.method, noise_seed)?;
    let map = Explainer::new(&net).explain(&x, class, &method)?;
    let stem = format!("{}_img{}", c.method.name(), c.image);
    let (t, j) = save_explanation(&map, &c.out, &stem)?;
    println!("{}\n{}", t.display(), j.display());
    Ok(())
}

fn cmd_sanity(c: &SanityCmd) -> Result<()> {
    let data = c.data.choice()?;
    let (net, label) = match &c.ckpt {
        Some(p) => (load_checkpoint(p)?, model_stem(p)),
        None => {
            let (net, acc) = build_and_train(c.model, &data, &c.train, c.threads)?;
            log::info!("trained {} to test accuracy {:.4}", c.model.name(), acc);
            (net, c.model.name().to_owned())
        }
    };
    let test = data.load(Split::Test)?;
    check_input(&net, &test)?;
    let cfg = ExperimentConfig {
        model: label,
        dataset: data.name().into(),
        methods: if c.methods.is_empty() {
            MethodKind::applicable(&net)
        } else {
            c.methods.clone()
        },
        modes: c.mode.modes(),
        testbed_size: c.testbed,
        seeds: Seeds {
            randomize: c.seed_randomize,
            noise: c.params.seed_noise,
            testbed: c.seed_testbed,
        },
        params: c.params.params(),
        preprocessing: c.preprocessing.list(),
        init: c.reinit.into(),
        threads: c.threads,
        save_variants: c.save_variants.clone(),
    };
    match run_experiment(&cfg, &net, &test) {
        Ok(bundle) => {
            emit_report(&bundle, &c.out)?;
            println!(
                "{} records ({} degenerate) in {:.1}s -> {}",
                bundle.records.len(),
                bundle.degenerate,
                bundle.wall_time_secs,
                c.out.display()
            );
            Ok(())
        }
        Err(failure) => {
            emit_report(&failure.partial, &c.out)?;
            write_error_manifest(&c.out, &failure.error)?;
            Err(failure.error)
        }
    }
}

fn cmd_report(c: &ReportCmd) -> Result<()> {
    for p in regenerate(&c.input)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Explain(c) => cmd_explain(c),
        Command::Sanity(c) => cmd_sanity(c),
        Command::Report(c) => cmd_report(c),
    }
}
