//! Objective, training schemes and gradient statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{CpmSpec, Model};
use crate::error::{CpmError, Result};
use crate::evaluation::evaluate;
use crate::synthdata::{derive_seed, make_training_pair, Dataset, TrainingPair};
use crate::tensor::{Real, Sgd, SlotId, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// (i) all stages end to end on the summed stage losses.
    #[serde(rename = "i")]
    GlobalWithIntermediate,
    /// (ii) one stage at a time on its own loss, earlier stages frozen.
    #[serde(rename = "ii")]
    Stagewise,
    /// (iii) (ii) on half the budget, then (i) from there.
    #[serde(rename = "iii")]
    StagewiseThenFinetune,
    /// (iv) end to end on the last stage's loss only.
    #[serde(rename = "iv")]
    GlobalNoIntermediate,
}

impl Scheme {
    pub const ALL: [Scheme; 4] =
        [Scheme::GlobalWithIntermediate, Scheme::Stagewise, Scheme::StagewiseThenFinetune, Scheme::GlobalNoIntermediate];

    pub fn id(self) -> &'static str {
        match self {
            Scheme::GlobalWithIntermediate => "i",
            Scheme::Stagewise => "ii",
            Scheme::StagewiseThenFinetune => "iii",
            Scheme::GlobalNoIntermediate => "iv",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scheme {
    type Err = CpmError;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.id() == s)
            .ok_or_else(|| CpmError::Config(format!("unknown scheme `{s}` (expected i, ii, iii or iv)")))
    }
}

/// Stagewise convergence: stop once the held-out stage loss of the last
/// `patience` epochs is not `min_improvement` (relative) below the best
/// before them, or after `cap` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    pub patience: usize,
    pub min_improvement: f64,
    pub cap: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { patience: 3, min_improvement: 0.01, cap: 30 }
    }
}

impl StopRule {
    pub fn converged(&self, history: &[f64]) -> bool {
        if history.len() >= self.cap {
            return true;
        }
        if history.len() <= self.patience {
            return false;
        }
        let split = history.len() - self.patience;
        let before = history[..split].iter().copied().fold(f64::INFINITY, f64::min);
        let recent = history[split..].iter().copied().fold(f64::INFINITY, f64::min);
        recent > before * (1.0 - self.min_improvement)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Total epoch budget shared by all phases of the scheme.
    pub epochs: usize,
    pub seed: u64,
    pub sigma: f32,
    pub scheme: Scheme,
    /// Rescale the batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    /// Snapshot every this many epochs; 0 disables.
    pub snapshot_every: usize,
    pub stop: StopRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            momentum: 0.0,
            batch_size: 16,
            epochs: 20,
            seed: 1,
            sigma: 21.0 * 64.0 / 368.0,
            scheme: Scheme::GlobalWithIntermediate,
            clip_norm: None,
            snapshot_every: 0,
            stop: StopRule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(CpmError::Config("learning rate must be ≥ 0 and momentum in [0, 1)".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(CpmError::Config("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 || !(self.sigma > 0.0) {
            return Err(CpmError::Config("batch size and sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Sum of squared differences over every channel and cell.
pub fn stage_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(CpmError::shape("stage_loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(pred.data().iter().zip(target.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum())
}

/// Stage losses added left to right.
pub fn total_loss(per_stage: &[f64]) -> f64 {
    per_stage.iter().fold(0.0, |acc, &f| acc + f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum Group {
    Stagewise,
    Joint,
}

/// One leg of a scheme: which stages learn and which losses count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub trained: Vec<usize>,
    pub objective: Vec<usize>,
    pub upto: usize,
    group: Group,
}

pub fn phases(scheme: Scheme, stages: usize) -> Vec<Phase> {
    let all: Vec<usize> = (1..=stages).collect();
    let joint = |objective: Vec<usize>| Phase { trained: all.clone(), objective, upto: stages, group: Group::Joint };
    let stagewise = || (1..=stages).map(|t| Phase { trained: vec![t], objective: vec![t], upto: t, group: Group::Stagewise });
    match scheme {
        Scheme::GlobalWithIntermediate => vec![joint(all.clone())],
        Scheme::GlobalNoIntermediate => vec![joint(vec![stages])],
        Scheme::Stagewise => stagewise().collect(),
        Scheme::StagewiseThenFinetune => stagewise().chain([joint(all.clone())]).collect(),
    }
}

pub const GRAD_BINS: usize = 64;
pub const GRAD_MIN: f64 = 1e-12;
pub const GRAD_MAX: f64 = 1e2;

/// The `GRAD_BINS + 1` log-spaced bin edges over `[GRAD_MIN, GRAD_MAX]`.
pub fn grad_bin_edges() -> Vec<f64> {
    let (lo, hi) = (GRAD_MIN.log10(), GRAD_MAX.log10());
    (0..=GRAD_BINS).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / GRAD_BINS as f64)).collect()
}

/// Bin of `|g|`; values outside the range go to the end bins.
pub fn grad_bin(g: f64) -> usize {
    let a = g.abs();
    if !(a > GRAD_MIN) {
        return 0;
    }
    let (lo, hi) = (GRAD_MIN.log10(), GRAD_MAX.log10());
    let i = ((a.log10() - lo) / (hi - lo) * GRAD_BINS as f64).floor();
    (i.max(0.0) as usize).min(GRAD_BINS - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGradStats {
    pub epoch: usize,
    pub layer: String,
    pub stage: usize,
    pub count: usize,
    /// Mean and population variance of `|g|`.
    pub mean: f64,
    pub variance: f64,
    pub bins: Vec<u64>,
}

impl LayerGradStats {
    pub fn from_grads(epoch: usize, layer: &str, stage: usize, grads: &[f64]) -> Self {
        let mut bins = vec![0u64; GRAD_BINS];
        let n = grads.len();
        let mut sum = 0.0;
        for g in grads {
            bins[grad_bin(*g)] += 1;
            sum += g.abs();
        }
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        let variance = if n > 0 { grads.iter().map(|g| (g.abs() - mean).powi(2)).sum::<f64>() / n as f64 } else { 0.0 };
        Self { epoch, layer: layer.to_string(), stage, count: n, mean, variance, bins }
    }
}

/// Per-layer, per-epoch `|g|` histograms from the first batch of each epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    pub rows: Vec<LayerGradStats>,
}

impl GradientStats {
    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = &LayerGradStats> {
        self.rows.iter().filter(move |r| r.epoch == epoch)
    }

    /// Mean `|g|` pooled over the stage-`t` layers recorded in `epoch`.
    pub fn stage_mean(&self, epoch: usize, stage: usize) -> Option<f64> {
        let rows: Vec<_> = self.epoch(epoch).filter(|r| r.stage == stage).collect();
        let n: usize = rows.iter().map(|r| r.count).sum();
        (n > 0).then(|| rows.iter().map(|r| r.mean * r.count as f64).sum::<f64>() / n as f64)
    }
}

/// One CSV row per layer and epoch: identifiers, count, mean, variance and
/// the bin counts. A second file lists the bin edges.
pub fn gradient_report(stats: &GradientStats, path: &Path) -> Result<()> {
    if stats.rows.is_empty() {
        return Err(CpmError::Config("no gradient statistics recorded".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string(), "layer".into(), "stage".into(), "count".into(), "mean".into(), "variance".into()];
    header.extend((0..GRAD_BINS).map(|i| format!("bin{i}")));
    w.write_record(&header)?;
    for r in &stats.rows {
        let mut rec = vec![r.epoch.to_string(), r.layer.clone(), r.stage.to_string(), r.count.to_string(), r.mean.to_string(), r.variance.to_string()];
        rec.extend(r.bins.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CpmError::io(path, e))?;
    let edges_path = path.with_extension("bins.csv");
    let mut e = csv::Writer::from_path(&edges_path)?;
    e.write_record(["bin", "lower", "upper"])?;
    let edges = grad_bin_edges();
    for i in 0..GRAD_BINS {
        e.write_record([i.to_string(), edges[i].to_string(), edges[i + 1].to_string()])?;
    }
    e.flush().map_err(|e| CpmError::io(&edges_path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub stage: usize,
    /// Held-out mean per-sample stage loss.
    pub loss: f64,
    #[serde(rename = "pck_at_0.2")]
    pub pck_at_0_2: f64,
    pub phase: usize,
    pub in_objective: bool,
    pub trained: bool,
    /// Mean per-sample training loss of the stage over the epoch, when computed.
    pub train_loss: Option<f64>,
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CpmError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Snapshots and divergence dumps go here.
    pub dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Return after this many epochs in total (for interrupted runs).
    pub stop_after: Option<usize>,
    pub verbose: bool,
}

impl RunOptions {
    pub fn for_member(&self, label: &str) -> Self {
        Self { dir: self.dir.as_ref().map(|d| d.join(label)), resume: None, ..self.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    phase: usize,
    phase_epoch: usize,
    phase_cap: usize,
    stagewise_used: usize,
    history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    kind: String,
    config: TrainConfig,
    progress: Progress,
    metrics: Vec<MetricRow>,
    gradients: GradientStats,
}

pub struct TrainOutcome<T: Real = crate::tensor::Float> {
    pub model: Model<T>,
    pub metrics: Vec<MetricRow>,
    pub gradients: GradientStats,
    pub epochs_run: usize,
    /// False when stopped by `stop_after` before the budget was spent.
    pub completed: bool,
}

fn stagewise_budget(cfg: &TrainConfig) -> usize {
    match cfg.scheme {
        Scheme::Stagewise => cfg.epochs,
        Scheme::StagewiseThenFinetune => cfg.epochs / 2,
        _ => 0,
    }
}

fn phase_cap(cfg: &TrainConfig, plan: &[Phase], p: &Progress) -> usize {
    let phase = &plan[p.phase];
    match phase.group {
        Group::Joint => cfg.epochs.saturating_sub(p.epoch),
        Group::Stagewise => {
            let left = stagewise_budget(cfg).saturating_sub(p.stagewise_used);
            let phases_left = plan[p.phase..].iter().filter(|q| q.group == Group::Stagewise).count();
            left.div_ceil(phases_left.max(1)).min(cfg.stop.cap)
        }
    }
}

struct Batch<T: Real> {
    image: Tensor<T>,
    center: Tensor<T>,
    stage1: Tensor<T>,
    later: Tensor<T>,
}

fn make_batch<T: Real>(pairs: &[TrainingPair]) -> Result<Batch<T>> {
    let images: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.image).collect();
    let centers: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.center).collect();
    Ok(Batch {
        image: Tensor::stack(&images)?.cast(),
        center: Tensor::stack(&centers)?.cast(),
        stage1: crate::beliefs::BeliefStack::batch(&pairs.iter().map(|p| &p.stage1).collect::<Vec<_>>())?,
        later: crate::beliefs::BeliefStack::batch(&pairs.iter().map(|p| &p.later).collect::<Vec<_>>())?,
    })
}

/// Batch order of `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0bad_5eed, epoch as u64)));
    order
}

/// Records one batch: forward up to `phase.upto`, per-stage losses, and
/// the objective of `phase`. Returns the objective node and the loss nodes.
pub fn record_objective<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    trainable: &BTreeSet<SlotId>,
    image: &Tensor<T>,
    center: &Tensor<T>,
    stage1: &Tensor<T>,
    later: &Tensor<T>,
    objective: &[usize],
    upto: usize,
) -> Result<(Vec<Var>, Var, Vec<Var>)> {
    let bound = model.store().bind(tape, |id| trainable.contains(&id));
    let img = tape.constant(image.detach());
    let cm = model.spec().use_center_map.then(|| tape.constant(center.detach()));
    let beliefs = model.forward_on_tape(tape, &bound, img, cm, upto)?;
    let mut losses = Vec::with_capacity(beliefs.len());
    for (i, &b) in beliefs.iter().enumerate() {
        losses.push(tape.sq_err_sum(b, if i == 0 { stage1 } else { later })?);
    }
    let mut total: Option<Var> = None;
    for &t in objective {
        let l = losses[t - 1];
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| CpmError::Config("empty objective".into()))?;
    Ok((bound, total, losses))
}

/// Global L2 norm of the gradients held by `slots`.
pub fn grad_norm<T: Real>(store: &crate::tensor::ParamStore<T>, slots: &BTreeSet<SlotId>) -> f64 {
    slots
        .iter()
        .filter_map(|&id| store.slot(id).grad())
        .flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()))
        .sum::<f64>()
        .sqrt()
}

fn clip_grads<T: Real>(store: &mut crate::tensor::ParamStore<T>, slots: &BTreeSet<SlotId>, max: f64) {
    let norm = grad_norm(store, slots);
    if norm > max {
        let k = T::from_f64_lossy(max / norm);
        for &id in slots {
            if let Some(g) = store.slot_mut(id).grad_mut().as_mut() {
                for x in g.iter_mut() {
                    *x = *x * k;
                }
            }
        }
    }
}

fn velocity_name(store_name: &str) -> String {
    format!("velocity/{store_name}")
}

fn save_state<T: Real>(
    model: &Model<T>,
    sgd: &Sgd<T>,
    path: &Path,
    cfg: &TrainConfig,
    progress: &Progress,
    metrics: &[MetricRow],
    gradients: &GradientStats,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CpmError::io(dir, e))?;
    }
    let state = SavedState {
        kind: "train-state".into(),
        config: cfg.clone(),
        progress: progress.clone(),
        metrics: metrics.to_vec(),
        gradients: gradients.clone(),
    };
    let extra: Vec<(String, Vec<T>)> =
        sgd.velocity().iter().map(|(id, v)| (velocity_name(model.store().slot_name(*id)), v.clone())).collect();
    model.save(path, serde_json::to_value(&state)?, &extra)
}

/// Writes a checkpoint of `model` carrying the training state of a
/// finished run.
pub fn save_final<T: Real>(outcome: &TrainOutcome<T>, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let progress = Progress { epoch: outcome.epochs_run, phase: usize::MAX, ..Progress::default() };
    save_state(&outcome.model, &Sgd::new(T::zero(), T::zero()), path, cfg, &progress, &outcome.metrics, &outcome.gradients)
}

fn log(verbose: bool, msg: impl FnOnce() -> String) {
    if verbose {
        eprintln!("{}", msg());
    }
}

/// Runs `cfg.scheme` for `cfg.epochs` epochs in total. Every epoch ends
/// with a held-out evaluation of all stages.
pub fn train<T: Real>(mut model: Model<T>, data: &Dataset, cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let spec: CpmSpec = model.spec().clone();
    let stages = spec.stages;
    let plan = phases(cfg.scheme, stages);
    let mut sgd = Sgd::new(T::from_f64_lossy(cfg.learning_rate), T::from_f64_lossy(cfg.momentum));
    let mut progress = Progress::default();
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut gradients = GradientStats::default();

    if let Some(path) = &opts.resume {
        let (loaded, ck) = Model::<T>::load(&spec, path)?;
        let state: SavedState = serde_json::from_value(ck.header.state.clone())?;
        if state.kind != "train-state" || state.config != *cfg {
            return Err(CpmError::Config(format!("{}: snapshot was taken under a different training config", path.display())));
        }
        let mut velocity = BTreeMap::new();
        for id in loaded.store().slot_ids() {
            if let Some((_, v)) = ck.blob(&velocity_name(loaded.store().slot_name(id))) {
                velocity.insert(id, v.to_vec());
            }
        }
        sgd.set_velocity(velocity);
        model = loaded;
        progress = state.progress;
        metrics = state.metrics;
        gradients = state.gradients;
    }

    let n = data.train.len();
    while progress.phase < plan.len() {
        if opts.stop_after.is_some_and(|k| progress.epoch >= k) {
            return Ok(TrainOutcome { model, metrics, gradients, epochs_run: progress.epoch, completed: false });
        }
        if progress.phase_epoch == 0 {
            progress.phase_cap = phase_cap(cfg, &plan, &progress);
            progress.history.clear();
        }
        if progress.phase_epoch >= progress.phase_cap {
            progress.phase += 1;
            progress.phase_epoch = 0;
            continue;
        }
        let phase = plan[progress.phase].clone();
        let trainable: BTreeSet<SlotId> = phase.trained.iter().flat_map(|&t| model.stage_slots(t)).collect();
        let params = model.store().params_for(&trainable);
        let epoch = progress.epoch + 1;

        let mut train_sums = vec![0.0f64; phase.upto];
        for (b, chunk) in epoch_order(cfg.seed, progress.epoch, n).chunks(cfg.batch_size).enumerate() {
            let pairs = chunk
                .iter()
                .map(|&i| make_training_pair(&data.config.augmented(&data.train[i], progress.epoch, i), &spec, cfg.sigma))
                .collect::<Result<Vec<_>>>()?;
            let batch = make_batch::<T>(&pairs)?;
            let mut tape = Tape::new();
            let (bound, total, losses) = record_objective(
                &model,
                &mut tape,
                &trainable,
                &batch.image,
                &batch.center,
                &batch.stage1,
                &batch.later,
                &phase.objective,
                phase.upto,
            )?;
            let value = tape.value(total).data()[0].as_f64();
            if !value.is_finite() {
                if let Some(dir) = &opts.dir {
                    save_state(&model, &sgd, &dir.join("diverged.ckpt"), cfg, &progress, &metrics, &gradients)?;
                }
                return Err(CpmError::Divergence { epoch, batch: b, loss: value });
            }
            for (s, &l) in train_sums.iter_mut().zip(&losses) {
                *s += tape.value(l).data()[0].as_f64();
            }
            tape.backward(total)?;
            if b == 0 {
                for layer in model.conv_layers() {
                    if !trainable.contains(&layer.kernel) {
                        continue;
                    }
                    let mut g: Vec<f64> = Vec::new();
                    for slot in [layer.kernel, layer.bias] {
                        match tape.grad(bound[slot.0]) {
                            Some(gr) => g.extend(gr.iter().map(|x| x.as_f64())),
                            None => g.extend(std::iter::repeat_n(0.0, model.store().slot(slot).numel())),
                        }
                    }
                    gradients.rows.push(LayerGradStats::from_grads(epoch, &layer.name, layer.stage, &g));
                }
            }
            model.store_mut().collect_grads(&tape, &bound)?;
            if let Some(max) = cfg.clip_norm {
                clip_grads(model.store_mut(), &trainable, max);
            }
            sgd.step(model.store_mut(), &params)?;
        }

        let evals = evaluate(&model, &data.test, cfg.sigma, &[0.2])?;
        for e in &evals {
            metrics.push(MetricRow {
                epoch,
                stage: e.stage,
                loss: e.loss,
                pck_at_0_2: e.pck.overall[0],
                phase: progress.phase + 1,
                in_objective: phase.objective.contains(&e.stage),
                trained: phase.trained.contains(&e.stage),
                train_loss: (e.stage <= phase.upto).then(|| train_sums[e.stage - 1] / n.max(1) as f64),
            });
        }
        log(opts.verbose, || {
            let parts: Vec<String> =
                evals.iter().map(|e| format!("s{} loss {:.2} pck {:.3}", e.stage, e.loss, e.pck.overall[0])).collect();
            format!("[{}] epoch {epoch} phase {}: {}", cfg.scheme, progress.phase + 1, parts.join(", "))
        });

        progress.epoch += 1;
        progress.phase_epoch += 1;
        if phase.group == Group::Stagewise {
            progress.stagewise_used += 1;
            let t = *phase.objective.last().expect("stage");
            progress.history.push(evals[t - 1].loss);
            if cfg.stop.converged(&progress.history) {
                progress.phase_cap = progress.phase_epoch;
            }
        }
        if let Some(dir) = &opts.dir {
            if cfg.snapshot_every > 0 && progress.epoch % cfg.snapshot_every == 0 {
                let path = dir.join(format!("snapshot_e{:04}.ckpt", progress.epoch));
                save_state(&model, &sgd, &path, cfg, &progress, &metrics, &gradients)?;
            }
        }
    }
    Ok(TrainOutcome { model, metrics, gradients, epochs_run: progress.epoch, completed: true })
}
