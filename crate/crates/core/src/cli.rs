//! `cpm` subcommands. Every command writes its resolved configuration into
//! its output directory.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::architecture::{
    build_cpm, context_layers, design, receptive_field, CpmSpec, DesignOptions, Init, Model, Widths,
};
use crate::error::{CpmError, Result};
use crate::evaluation::{
    predict, rf_sweep, score_predictions, write_part_csv, write_rf_csv, write_stage_csv, PckResult, DEFAULT_RADII,
};
use crate::synthdata::{write_sample_png, DataConfig, Dataset, Manifest};
use crate::tensor::Float;
use crate::training::{gradient_report, save_final, train, write_metrics_csv, RunOptions, Scheme, TrainConfig};

/// Architecture section: a spec file, or design targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub spec_file: Option<PathBuf>,
    pub stages: usize,
    pub stage1_rf: usize,
    pub context_rf: usize,
    pub init: Init,
    pub widths: Option<Widths>,
    pub use_center_map: bool,
    pub share_image_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            spec_file: None,
            stages: 3,
            stage1_rf: 24,
            context_rf: 13,
            init: Init::HeUniform,
            widths: None,
            use_center_map: true,
            share_image_features: true,
        }
    }
}

impl ModelConfig {
    pub fn design_options(&self, data: &DataConfig) -> DesignOptions {
        let mut o = DesignOptions::for_input(data.skeleton.parts(), data.canvas, self.stage1_rf, self.context_rf);
        o.stages = self.stages;
        o.init = self.init;
        o.use_center_map = self.use_center_map;
        o.share_image_features = self.share_image_features;
        if let Some(w) = &self.widths {
            o.widths = w.clone();
        }
        o
    }

    pub fn spec(&self, data: &DataConfig) -> Result<CpmSpec> {
        match &self.spec_file {
            Some(path) => {
                let spec = CpmSpec::load(path)?;
                if spec.stages != self.stages {
                    return Ok(spec.truncated(self.stages.min(spec.stages)));
                }
                Ok(spec)
            }
            None => design(&self.design_options(data)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub radii: Vec<f32>,
    /// Samples whose belief stacks are exported as PNG.
    pub belief_images: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { radii: DEFAULT_RADII.to_vec(), belief_images: 0 }
    }
}

/// One member of the receptive-field family: its later-stage context
/// layers, `layers` convolutions of `kernel × kernel` and `width` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfMember {
    pub label: String,
    pub layers: usize,
    pub kernel: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfSweepConfig {
    pub members: Vec<RfMember>,
    /// Epoch budget of each member; the training section's when absent.
    pub epochs: Option<usize>,
}

impl Default for RfSweepConfig {
    fn default() -> Self {
        Self {
            members: vec![
                RfMember { label: "small".into(), layers: 3, kernel: 3, width: 32 },
                RfMember { label: "medium".into(), layers: 3, kernel: 5, width: 18 },
                RfMember { label: "large".into(), layers: 2, kernel: 9, width: 10 },
            ],
            epochs: None,
        }
    }
}

/// Everything a run depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub rf_sweep: RfSweepConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CpmError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        if let Some(spec) = &cfg.model.spec_file {
            if spec.is_relative() {
                cfg.model.spec_file = Some(path.parent().unwrap_or(Path::new(".")).join(spec));
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)?;
        fs::write(path, text).map_err(|e| CpmError::io(path, e))
    }

    pub fn spec(&self) -> Result<CpmSpec> {
        self.model.spec(&self.data)
    }

    /// Specs of the receptive-field family, all sharing stage 1 and the
    /// image features.
    pub fn rf_family(&self) -> Result<Vec<(String, CpmSpec)>> {
        let base = self.spec()?;
        let head = self.model.design_options(&self.data).widths.head;
        self.rf_sweep
            .members
            .iter()
            .map(|m| {
                let mut spec = base.clone();
                for s in spec.stage_specs.iter_mut().skip(1) {
                    s.context_layers = context_layers(m.layers, m.kernel, m.width, head, s.output_parts);
                }
                spec.validate()?;
                Ok((m.label.clone(), spec))
            })
            .collect()
    }
}

#[derive(Parser, Debug)]
#[command(name = "cpm", version, about = "Multi-stage belief-map pose estimation at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; built-in toy defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Also write the first N training images as PNG.
        #[arg(long, default_value_t = 0)]
        png: usize,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Manifest written by `gen`.
        #[arg(long)]
        dataset: PathBuf,
        /// Continue from a snapshot of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Spec of the checkpoint; `spec.toml` beside it by default.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Receptive-field report of a spec file.
    Rf {
        #[arg(long)]
        spec: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gen, train and eval chained for one of the analysis experiments.
    Experiment {
        name: Experiment,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Schemes,
    Stages,
    RfSweep,
    GradFlow,
}

impl clap::ValueEnum for Scheme {
    fn value_variants<'a>() -> &'a [Self] {
        &Scheme::ALL
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.id()))
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Creates `dir`, refusing a non-empty one unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| CpmError::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CpmError::Config(format!("{} is not empty; pass --force to overwrite", dir.display())));
            }
            fs::remove_dir_all(dir).map_err(|e| CpmError::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| CpmError::io(dir, e))
}

/// Exclusive ownership of a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| CpmError::Config(format!("{} is locked by another run ({e})", dir.display())))?;
        fs::write(&path, std::process::id().to_string()).map_err(|e| CpmError::io(&path, e))?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool, png: usize) -> Result<Manifest> {
    prepare_dir(out, force)?;
    cfg.save(&out.join("config.toml"))?;
    let manifest = Manifest::new(&cfg.data);
    manifest.save(&out.join("manifest.json"))?;
    if png > 0 {
        let dir = out.join("png");
        fs::create_dir_all(&dir).map_err(|e| CpmError::io(&dir, e))?;
        for i in 0..png.min(cfg.data.train) {
            write_sample_png(&cfg.data.sample(crate::synthdata::Split::Train, i), &dir.join(format!("train_{i:05}.png")))?;
        }
    }
    Ok(manifest)
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    if !manifest_path.exists() {
        return Err(CpmError::Config(format!("dataset manifest {} not found", manifest_path.display())));
    }
    Manifest::load(&manifest_path)?.dataset()
}

/// Outputs of a finished training run.
pub struct TrainRun {
    pub dir: PathBuf,
    pub model: Model<Float>,
    pub final_pck: Vec<f64>,
}

/// Trains into `out`: `config.toml`, `spec.toml`, `init.ckpt`, `model.ckpt`,
/// `metrics.csv`, `gradients.csv` and any snapshots.
pub fn cmd_train(cfg: &RunConfig, data: &Dataset, out: &Path, force: bool, resume: Option<&Path>, verbose: bool) -> Result<TrainRun> {
    if resume.is_none() {
        prepare_dir(out, force)?;
    } else {
        fs::create_dir_all(out).map_err(|e| CpmError::io(out, e))?;
    }
    let _lock = RunLock::acquire(out)?;
    let mut cfg = cfg.clone();
    cfg.data = data.config.clone();
    cfg.save(&out.join("config.toml"))?;
    let spec = cfg.spec()?;
    spec.save(&out.join("spec.toml"))?;
    let model = build_cpm::<Float>(&spec, cfg.train.seed)?;
    model.save(&out.join("init.ckpt"), serde_json::json!({ "kind": "init" }), &[])?;
    let opts = RunOptions { dir: Some(out.to_path_buf()), resume: resume.map(Path::to_path_buf), stop_after: None, verbose };
    let outcome = train(model, data, &cfg.train, &opts)?;
    write_metrics_csv(&outcome.metrics, &out.join("metrics.csv"))?;
    if !outcome.gradients.rows.is_empty() {
        gradient_report(&outcome.gradients, &out.join("gradients.csv"))?;
    }
    save_final(&outcome, &cfg.train, &out.join("model.ckpt"))?;
    let last = outcome.metrics.iter().map(|r| r.epoch).max();
    let final_pck = outcome.metrics.iter().filter(|r| Some(r.epoch) == last).map(|r| r.pck_at_0_2).collect();
    Ok(TrainRun { dir: out.to_path_buf(), model: outcome.model, final_pck })
}

/// Writes `parts.csv` (last stage), `stages.csv`, and optional belief PNGs.
pub fn cmd_eval(model: &Model<Float>, data: &Dataset, cfg: &RunConfig, out: &Path) -> Result<Vec<PckResult>> {
    let preds = predict(model, &data.test, cfg.train.sigma, 50)?;
    let evals = score_predictions(model.spec(), &data.test, &preds, cfg.train.sigma, &cfg.eval.radii)?;
    let curve: Vec<PckResult> = evals.into_iter().map(|e| e.pck).collect();
    fs::create_dir_all(out).map_err(|e| CpmError::io(out, e))?;
    write_part_csv(curve.last().expect("at least one stage"), &out.join("parts.csv"))?;
    write_stage_csv(&curve, &out.join("stages.csv"))?;
    for (i, stacks) in preds.iter().take(cfg.eval.belief_images).enumerate() {
        for (t, b) in stacks.iter().enumerate() {
            b.write_pngs(&out.join("beliefs"), &format!("sample{i:03}_stage{}", t + 1))?;
        }
    }
    Ok(curve)
}

fn load_checkpoint_model(checkpoint: &Path, spec_path: Option<&Path>) -> Result<Model<Float>> {
    let spec_path = match spec_path {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("spec.toml"),
    };
    let spec = CpmSpec::load(&spec_path)?;
    Ok(Model::<Float>::load(&spec, checkpoint)?.0)
}

/// Per-layer receptive fields as CSV rows.
pub fn rf_csv(spec: &CpmSpec, out: &mut dyn std::io::Write) -> Result<()> {
    let report = receptive_field(spec);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "block", "layer", "kind", "kernel", "stride", "receptive_field", "effective_stride", "offset"])?;
    for s in &report.stages {
        for (block, layers) in [("features", &s.image_features), ("context", &s.context)] {
            for e in layers.iter() {
                w.write_record([
                    s.stage.to_string(),
                    block.to_string(),
                    e.layer.to_string(),
                    e.kind.to_string(),
                    e.kernel.to_string(),
                    e.stride.to_string(),
                    e.receptive_field.to_string(),
                    e.effective_stride.to_string(),
                    e.offset.to_string(),
                ])?;
            }
        }
        w.write_record([s.stage.to_string(), "stage".into(), String::new(), "total".into(), String::new(), String::new(), s.image_rf.to_string(), s.effective_stride.to_string(), s.offset.to_string()])?;
    }
    w.flush().map_err(|e| CpmError::io(Path::new("<rf csv>"), e))
}

fn apply_overrides(cfg: &mut RunConfig, common: &Common, o: &TrainOverrides) {
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = o.scheme {
        cfg.train.scheme = s;
    }
    if let Some(t) = o.stages {
        cfg.model.stages = t;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
}

/// Runs experiment `name` under `out`, returning the summary CSV path.
pub fn cmd_experiment(name: Experiment, cfg: &RunConfig, out: &Path, force: bool, verbose: bool) -> Result<PathBuf> {
    prepare_dir(out, force)?;
    let _lock = RunLock::acquire(out)?;
    cfg.save(&out.join("config.toml"))?;
    cmd_gen(cfg, &out.join("data"), false, 0)?;
    let data = load_dataset(&out.join("data"))?;
    let run = |scheme: Scheme, dir: &str| -> Result<TrainRun> {
        let mut c = cfg.clone();
        c.train.scheme = scheme;
        cmd_train(&c, &data, &out.join(dir), false, None, verbose)
    };
    match name {
        Experiment::Schemes => {
            let path = out.join("schemes.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["scheme", "stage", "pck_at_0.2"])?;
            for s in Scheme::ALL {
                let r = run(s, &format!("scheme_{}", s.id()))?;
                for (t, p) in r.final_pck.iter().enumerate() {
                    w.write_record([s.id().to_string(), (t + 1).to_string(), p.to_string()])?;
                }
            }
            w.flush().map_err(|e| CpmError::io(&path, e))?;
            Ok(path)
        }
        Experiment::Stages => {
            let r = run(cfg.train.scheme, "train")?;
            cmd_eval(&r.model, &data, cfg, &out.join("eval"))?;
            let path = out.join("stages.csv");
            fs::copy(out.join("eval/stages.csv"), &path).map_err(|e| CpmError::io(&path, e))?;
            Ok(path)
        }
        Experiment::GradFlow => {
            let path = out.join("grad_flow.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["scheme", "epoch", "layer", "stage", "mean", "variance"])?;
            for s in [Scheme::GlobalWithIntermediate, Scheme::GlobalNoIntermediate] {
                let dir = format!("scheme_{}", s.id());
                run(s, &dir)?;
                let mut r = csv::Reader::from_path(out.join(&dir).join("gradients.csv"))?;
                for rec in r.records() {
                    let rec = rec?;
                    w.write_record([s.id(), &rec[0], &rec[1], &rec[2], &rec[4], &rec[5]])?;
                }
            }
            w.flush().map_err(|e| CpmError::io(&path, e))?;
            Ok(path)
        }
        Experiment::RfSweep => {
            let mut tc = cfg.train.clone();
            if let Some(e) = cfg.rf_sweep.epochs {
                tc.epochs = e;
            }
            let family = cfg.rf_family()?;
            let opts = RunOptions { dir: Some(out.join("members")), verbose, ..RunOptions::default() };
            let outcome = rf_sweep(&family, &data, &tc, &opts)?;
            let path = out.join("rf.csv");
            write_rf_csv(&outcome.rows, &path)?;
            Ok(path)
        }
    }
}

/// Entry point of the `cpm` binary.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, png } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.data.seed = s;
            }
            let m = cmd_gen(&cfg, &common.out, common.force, png)?;
            println!("wrote {} train / {} test samples to {}", m.train.len(), m.test.len(), common.out.display());
        }
        Command::Train { common, overrides, dataset, resume } => {
            let mut cfg = load_config(&common)?;
            apply_overrides(&mut cfg, &common, &overrides);
            let data = load_dataset(&dataset)?;
            let r = cmd_train(&cfg, &data, &common.out, common.force, resume.as_deref(), true)?;
            println!("final PCK@0.2 per stage: {:?}", r.final_pck);
        }
        Command::Eval { common, checkpoint, dataset, spec } => {
            let cfg = load_config(&common)?;
            let model = load_checkpoint_model(&checkpoint, spec.as_deref())?;
            let data = load_dataset(&dataset)?;
            let curve = cmd_eval(&model, &data, &cfg, &common.out)?;
            for (t, c) in curve.iter().enumerate() {
                println!("stage {}: PCK {:?} at r = {:?}", t + 1, c.overall, c.radii);
            }
        }
        Command::Rf { spec, out } => {
            let spec = CpmSpec::load(&spec)?;
            match out {
                Some(path) => {
                    let mut f = File::create(&path).map_err(|e| CpmError::io(&path, e))?;
                    rf_csv(&spec, &mut f)?;
                }
                None => rf_csv(&spec, &mut std::io::stdout())?,
            }
        }
        Command::Experiment { name, common, overrides } => {
            let mut cfg = load_config(&common)?;
            apply_overrides(&mut cfg, &common, &overrides);
            let path = cmd_experiment(name, &cfg, &common.out, common.force, true)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
