//! End-to-end randomization experiment.
//!
//! For each test-bed image the target class is frozen to the original
//! model's prediction. Original explanations are computed once; every
//! randomized variant is then explained for the same class and compared to
//! them with Spearman's rank correlation. Stage `-1` re-explains the
//! unmodified model as a self-check.
//!
//! Images are explained in parallel; each image's SmoothGrad/VarGrad noise
//! is keyed by `(noise seed, image id, sample index)`, and results are
//! gathered in index order, so output does not depend on the thread count.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sanity_core::attribution::{BaseMethod, Explainer, IgConfig, Method, NoiseConfig};
use sanity_core::data::{sample_testbed, Dataset};
use sanity_core::exec::Executor;
use sanity_core::metrics::{spearman, summarize, Correlation, CorrelationRecord, Preprocessing, StageSummary};
use sanity_core::nn::Network;
use sanity_core::randomize::{self, Mode};
use sanity_core::train::{accuracy_with, InitKind, InitScheme};
use sanity_core::{seed, Tensor};

use crate::checkpoint::save_checkpoint;
use crate::{HarnessError, Result};

/// Executor backed by the current rayon pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Runs `f` on a pool with `threads` workers (`None`: rayon's default).
pub fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Gradient,
    IntegratedGradients,
    GuidedBackprop,
    GuidedGradCam,
    SmoothGrad,
    VarGrad,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Gradient,
        MethodKind::IntegratedGradients,
        MethodKind::GuidedBackprop,
        MethodKind::GuidedGradCam,
        MethodKind::SmoothGrad,
        MethodKind::VarGrad,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Gradient => "gradient",
            MethodKind::IntegratedGradients => "integrated_gradients",
            MethodKind::GuidedBackprop => "guided_backprop",
            MethodKind::GuidedGradCam => "guided_grad_cam",
            MethodKind::SmoothGrad => "smooth_grad",
            MethodKind::VarGrad => "var_grad",
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, MethodKind::SmoothGrad | MethodKind::VarGrad)
    }

    /// Every method applicable to `net` (guided Grad-CAM needs a conv layer).
    pub fn applicable(net: &Network) -> Vec<MethodKind> {
        let has_conv = net.layers().iter().any(|l| l.kind.label() == "conv2d");
        MethodKind::ALL
            .into_iter()
            .filter(|m| has_conv || *m != MethodKind::GuidedGradCam)
            .collect()
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().replace('-', "_").as_str() {
            "gradient" | "grad" => MethodKind::Gradient,
            "integrated_gradients" | "ig" => MethodKind::IntegratedGradients,
            "guided_backprop" | "gbp" => MethodKind::GuidedBackprop,
            "guided_grad_cam" | "guided_gradcam" | "ggcam" => MethodKind::GuidedGradCam,
            "smooth_grad" | "smoothgrad" | "sg" => MethodKind::SmoothGrad,
            "var_grad" | "vargrad" | "vg" => MethodKind::VarGrad,
            other => return Err(format!("unknown method {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub ig_steps: usize,
    pub noise_samples: usize,
    pub sigma_fraction: f64,
    /// Method wrapped by SmoothGrad/VarGrad; never itself noisy.
    pub noise_base: MethodKind,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            ig_steps: IgConfig::default().steps,
            noise_samples: NoiseConfig::default().samples,
            sigma_fraction: NoiseConfig::default().sigma_fraction,
            noise_base: MethodKind::Gradient,
        }
    }
}

impl MethodParams {
    fn base(&self) -> Result<BaseMethod> {
        Ok(match self.noise_base {
            MethodKind::Gradient => BaseMethod::Gradient,
            MethodKind::IntegratedGradients => BaseMethod::IntegratedGradients(IgConfig::with_steps(self.ig_steps)),
            MethodKind::GuidedBackprop => BaseMethod::GuidedBackprop,
            MethodKind::GuidedGradCam => BaseMethod::GuidedGradCam,
            m => return Err(HarnessError::Config(format!("{m} cannot be a noise base method"))),
        })
    }

    /// Concrete method, with `noise_seed` for the noisy ones.
    pub fn method(&self, kind: MethodKind, noise_seed: u64) -> Result<Method> {
        let noise = NoiseConfig {
            samples: self.noise_samples,
            sigma_fraction: self.sigma_fraction,
            seed: noise_seed,
        };
        Ok(match kind {
            MethodKind::Gradient => Method::Gradient,
            MethodKind::IntegratedGradients => Method::IntegratedGradients(IgConfig::with_steps(self.ig_steps)),
            MethodKind::GuidedBackprop => Method::GuidedBackprop,
            MethodKind::GuidedGradCam => Method::GuidedGradCam,
            MethodKind::SmoothGrad => Method::SmoothGrad {
                base: self.base()?,
                noise,
            },
            MethodKind::VarGrad => Method::VarGrad {
                base: self.base()?,
                noise,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub randomize: u64,
    pub noise: u64,
    pub testbed: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            randomize: 1,
            noise: 2,
            testbed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: String,
    pub dataset: String,
    pub methods: Vec<MethodKind>,
    pub modes: Vec<Mode>,
    pub testbed_size: usize,
    pub seeds: Seeds,
    pub params: MethodParams,
    pub preprocessing: Vec<Preprocessing>,
    /// Distribution used to re-initialize layers.
    pub init: InitKind,
    pub threads: Option<usize>,
    /// Write every randomized variant's checkpoint here.
    pub save_variants: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "model".into(),
            dataset: "synthetic".into(),
            methods: MethodKind::ALL.to_vec(),
            modes: vec![Mode::Cascading, Mode::Independent],
            testbed_size: 200,
            seeds: Seeds::default(),
            params: MethodParams::default(),
            preprocessing: vec![Preprocessing::Absolute, Preprocessing::Signed],
            init: InitKind::UniformFan,
            threads: None,
            save_variants: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, net: &Network) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.modes.is_empty() {
            return bad("no randomization mode selected".into());
        }
        if self.preprocessing.is_empty() {
            return bad("no preprocessing selected".into());
        }
        if self.testbed_size == 0 {
            return bad("test bed size must be >= 1".into());
        }
        if self.threads == Some(0) {
            return bad("thread count must be >= 1".into());
        }
        let applicable = MethodKind::applicable(net);
        for m in &self.methods {
            if !applicable.contains(m) {
                return bad(format!("{m} needs a convolutional layer"));
            }
            self.params.method(*m, 0)?;
        }
        if self.methods.iter().any(|m| !m.is_deterministic()) {
            if self.params.noise_samples == 0 {
                return bad("noise samples must be >= 1".into());
            }
            if self.methods.contains(&MethodKind::VarGrad) && self.params.noise_samples < 2 {
                return bad("var_grad needs at least 2 noise samples".into());
            }
            if self.params.noise_base == MethodKind::GuidedGradCam && !applicable.contains(&MethodKind::GuidedGradCam) {
                return bad("guided_grad_cam base needs a convolutional layer".into());
            }
        }
        if self.params.ig_steps == 0 {
            return bad("integrated gradients needs at least 1 step".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAccuracy {
    pub mode: Option<Mode>,
    pub stage_index: i64,
    pub stage_label: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: ExperimentConfig,
    pub testbed: Vec<usize>,
    /// Frozen target class per test-bed image.
    pub targets: Vec<usize>,
    pub records: Vec<CorrelationRecord>,
    pub summaries: Vec<StageSummary>,
    /// Groups in which every comparison was degenerate.
    pub empty_groups: Vec<StageSummary>,
    pub stage_accuracy: Vec<StageAccuracy>,
    pub degenerate: usize,
    pub wall_time_secs: f64,
}

impl ReportBundle {
    /// Records with a defined correlation (the rows of `records.csv`).
    pub fn scored_records(&self) -> impl Iterator<Item = &CorrelationRecord> {
        self.records.iter().filter(|r| r.rho.is_some())
    }

    pub fn summary(&self, method: MethodKind, mode: Mode, stage: i64, pre: Preprocessing) -> Option<&StageSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method.name() && s.mode == mode && s.stage_index == stage && s.preprocessing == pre)
    }

    /// Index of the last stage for `mode` (full randomization when cascading).
    pub fn final_stage(&self, mode: Mode) -> Option<i64> {
        self.records
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.stage_index)
            .max()
    }

    fn finish(&mut self) {
        let (summaries, empty) = summarize(&self.records);
        self.summaries = summaries;
        self.empty_groups = empty;
        self.degenerate = self.records.iter().filter(|r| r.rho.is_none()).count();
    }
}

/// A run that stopped early; `partial` holds everything computed before the
/// failure.
#[derive(Debug)]
pub struct ExperimentFailure {
    pub partial: ReportBundle,
    pub error: HarnessError,
}

impl fmt::Display for ExperimentFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "experiment aborted: {}", self.error)
    }
}

struct Subject {
    image_id: usize,
    x: Tensor,
    target: usize,
}

/// Explanations of every subject under every method, `[image][method]`.
fn explain_all(
    net: &Network,
    subjects: &[Subject],
    methods: &[(MethodKind, Method)],
    noise_seed: u64,
) -> Result<Vec<Vec<Tensor>>> {
    let out = RayonExecutor.map(subjects.len(), |j| {
        let s = &subjects[j];
        let ex = Explainer::new(net);
        let image_seed = seed::derive_index(noise_seed, s.image_id as u64);
        methods
            .iter()
            .map(|(_, m)| {
                ex.explain(&s.x, s.target, &m.with_noise_seed(image_seed))
                    .map(|e| e.values)
                    .map_err(HarnessError::from)
            })
            .collect::<Result<Vec<_>>>()
    });
    out.into_iter().collect()
}

/// Correlation records for one stage, ordered method → image → preprocessing.
struct Stage<'a> {
    mode: Mode,
    index: i64,
    label: &'a str,
}

fn correlate(
    cfg: &ExperimentConfig,
    stage: Stage<'_>,
    subjects: &[Subject],
    methods: &[(MethodKind, Method)],
    originals: &[Vec<Tensor>],
    current: &[Vec<Tensor>],
) -> Result<Vec<CorrelationRecord>> {
    let mut out = Vec::with_capacity(methods.len() * subjects.len() * cfg.preprocessing.len());
    for (mi, (kind, _)) in methods.iter().enumerate() {
        for (j, s) in subjects.iter().enumerate() {
            for &pre in &cfg.preprocessing {
                let c = spearman(&originals[j][mi], &current[j][mi], pre)?;
                out.push(CorrelationRecord {
                    method: kind.name().to_owned(),
                    mode: stage.mode,
                    stage_index: stage.index,
                    stage_label: stage.label.to_owned(),
                    image_id: s.image_id,
                    preprocessing: pre,
                    rho: match c {
                        Correlation::Rho(r) => Some(r),
                        Correlation::Degenerate => None,
                    },
                });
            }
        }
    }
    Ok(out)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    net: &Network,
    test: &Dataset,
) -> std::result::Result<ReportBundle, Box<ExperimentFailure>> {
    let started = Instant::now();
    let mut bundle = ReportBundle {
        config: cfg.clone(),
        testbed: Vec::new(),
        targets: Vec::new(),
        records: Vec::new(),
        summaries: Vec::new(),
        empty_groups: Vec::new(),
        stage_accuracy: Vec::new(),
        degenerate: 0,
        wall_time_secs: 0.0,
    };
    let result = with_pool(cfg.threads, || run_stages(cfg, net, test, &mut bundle)).and_then(|r| r);
    bundle.finish();
    bundle.wall_time_secs = started.elapsed().as_secs_f64();
    for g in &bundle.empty_groups {
        log::warn!(
            "{} / {} / stage {} / {}: every comparison degenerate, group omitted",
            g.method,
            g.mode.name(),
            g.stage_index,
            g.preprocessing.name()
        );
    }
    if bundle.degenerate > 0 {
        log::warn!(
            "{} degenerate (constant-map) correlations excluded from summaries",
            bundle.degenerate
        );
    }
    match result {
        Ok(()) => Ok(bundle),
        Err(error) => Err(Box::new(ExperimentFailure { partial: bundle, error })),
    }
}

fn run_stages(cfg: &ExperimentConfig, net: &Network, test: &Dataset, bundle: &mut ReportBundle) -> Result<()> {
    cfg.validate(net)?;
    if test.image_shape() != net.input_shape() {
        return Err(HarnessError::Data(format!(
            "dataset images are {:?}, model expects {:?}",
            test.image_shape(),
            net.input_shape()
        )));
    }
    let testbed = sample_testbed(test, cfg.testbed_size, cfg.seeds.testbed)?;
    let subjects: Vec<Subject> = testbed
        .indices
        .iter()
        .map(|&i| {
            let x = test.image(i);
            net.predict(&x).map(|target| Subject { image_id: i, x, target })
        })
        .collect::<sanity_core::Result<_>>()?;
    bundle.testbed = testbed.indices.clone();
    bundle.targets = subjects.iter().map(|s| s.target).collect();

    let methods: Vec<(MethodKind, Method)> = cfg
        .methods
        .iter()
        .map(|&k| cfg.params.method(k, cfg.seeds.noise).map(|m| (k, m)))
        .collect::<Result<_>>()?;

    log::info!("explaining {} images with the original model", subjects.len());
    let originals = explain_all(net, &subjects, &methods, cfg.seeds.noise)?;
    let original_acc = accuracy_with(net, test, &RayonExecutor)?;
    bundle.stage_accuracy.push(StageAccuracy {
        mode: None,
        stage_index: -1,
        stage_label: "original".into(),
        accuracy: original_acc,
    });

    let recheck = explain_all(net, &subjects, &methods, cfg.seeds.noise)?;
    for &mode in &cfg.modes {
        let stage = Stage {
            mode,
            index: -1,
            label: "original",
        };
        let recs = correlate(cfg, stage, &subjects, &methods, &originals, &recheck)?;
        bundle.records.extend(recs);
    }

    let scheme = InitScheme::new(cfg.init, 0);
    for &mode in &cfg.modes {
        let plan = randomize::make_plan(net, mode, cfg.seeds.randomize)?;
        let variants = randomize::variants(net, &plan, &scheme)?;
        for v in &variants {
            log::info!("{} stage {} ({})", mode.name(), v.stage_index, v.stage_label);
            if let Some(dir) = &cfg.save_variants {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
                save_checkpoint(&v.network, dir.join(randomize::variant_file_name(&cfg.model, v)))?;
            }
            let stage = v.stage_index as i64;
            let maps = explain_all(&v.network, &subjects, &methods, cfg.seeds.noise)?;
            let recs = correlate(
                cfg,
                Stage {
                    mode,
                    index: stage,
                    label: &v.stage_label,
                },
                &subjects,
                &methods,
                &originals,
                &maps,
            )?;
            bundle.records.extend(recs);
            bundle.stage_accuracy.push(StageAccuracy {
                mode: Some(mode),
                stage_index: stage,
                stage_label: v.stage_label.clone(),
                accuracy: accuracy_with(&v.network, test, &RayonExecutor)?,
            });
        }
    }
    Ok(())
}
