//! PCK, per-stage curves and the receptive-field sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::architecture::{build_cpm, receptive_field, CpmSpec, Model};
use crate::beliefs::{extract_keypoints, BeliefStack, Keypoints};
use crate::error::{CpmError, Result};
use crate::synthdata::{make_training_pair, Dataset, PoseSample};
use crate::tensor::{Real, Tensor};
use crate::training::{train, RunOptions, TrainConfig};

pub const DEFAULT_RADII: [f32; 4] = [0.05, 0.1, 0.15, 0.2];

/// Fraction of correct parts at each radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckResult {
    pub radii: Vec<f32>,
    /// `per_part[p][i]` at `radii[i]`; `None` when part `p` never had ground truth.
    pub per_part: Vec<Vec<Option<f64>>>,
    pub overall: Vec<f64>,
}

impl PckResult {
    /// Overall PCK at radius `r`, if `r` is on the grid.
    pub fn at(&self, r: f32) -> Option<f64> {
        self.radii.iter().position(|&x| (x - r).abs() < 1e-6).map(|i| self.overall[i])
    }
}

#[derive(Clone, Debug)]
pub struct PckAccumulator {
    radii: Vec<f32>,
    correct: Vec<Vec<u64>>,
    total: Vec<u64>,
}

impl PckAccumulator {
    pub fn new(parts: usize, radii: &[f32]) -> Self {
        Self { radii: radii.to_vec(), correct: vec![vec![0; radii.len()]; parts], total: vec![0; parts] }
    }

    /// A part counts as correct when `‖pred − gt‖ ≤ r·normalizer`. Parts
    /// without ground truth are skipped; a missing prediction is wrong.
    pub fn add(&mut self, pred: &Keypoints, gt: &Keypoints, normalizer: f32) {
        for p in 0..self.total.len() {
            let Some(g) = gt.get(p) else { continue };
            self.total[p] += 1;
            let Some(q) = pred.get(p) else { continue };
            let d = (((q[0] - g[0]) as f64).powi(2) + ((q[1] - g[1]) as f64).powi(2)).sqrt();
            for (i, &r) in self.radii.iter().enumerate() {
                if d <= r as f64 * normalizer as f64 {
                    self.correct[p][i] += 1;
                }
            }
        }
    }

    /// Uses the ground-truth bounding-box max side as normalizer; samples
    /// with a degenerate box are skipped.
    pub fn add_sample(&mut self, pred: &Keypoints, gt: &Keypoints) {
        if let Some(n) = gt.bbox_max_side().filter(|&n| n > 0.0) {
            self.add(pred, gt, n);
        }
    }

    pub fn result(&self) -> PckResult {
        let per_part = self
            .correct
            .iter()
            .zip(&self.total)
            .map(|(c, &t)| c.iter().map(|&k| (t > 0).then(|| k as f64 / t as f64)).collect())
            .collect();
        let total: u64 = self.total.iter().sum();
        let overall = (0..self.radii.len())
            .map(|i| {
                let k: u64 = self.correct.iter().map(|c| c[i]).sum();
                if total == 0 {
                    0.0
                } else {
                    k as f64 / total as f64
                }
            })
            .collect();
        PckResult { radii: self.radii.clone(), per_part, overall }
    }
}

pub fn pck(pred: &Keypoints, gt: &Keypoints, radii: &[f32], normalizer: f32) -> PckResult {
    let mut acc = PckAccumulator::new(gt.len(), radii);
    acc.add(pred, gt, normalizer);
    acc.result()
}

/// Belief stacks of every stage for each sample, computed in batches.
pub fn predict<T: Real>(model: &Model<T>, samples: &[PoseSample], sigma: f32, batch: usize) -> Result<Vec<Vec<BeliefStack>>> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let pairs = chunk.iter().map(|s| make_training_pair(s, spec, sigma)).collect::<Result<Vec<_>>>()?;
        let images: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.image).collect();
        let centers: Vec<&Tensor<f32>> = pairs.iter().map(|p| &p.center).collect();
        let image = Tensor::stack(&images)?.cast::<T>();
        let center = Tensor::stack(&centers)?.cast::<T>();
        let stages = model.forward(&image, spec.use_center_map.then_some(&center))?;
        for n in 0..chunk.len() {
            out.push(stages.iter().map(|b| BeliefStack::from_tensor(b, n)).collect::<Result<Vec<_>>>()?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEval {
    pub stage: usize,
    /// Mean per-sample stage loss against that stage's training target.
    pub loss: f64,
    pub pck: PckResult,
}

/// Held-out loss and PCK of every stage, from precomputed predictions.
pub fn score_predictions(
    spec: &CpmSpec,
    samples: &[PoseSample],
    predictions: &[Vec<BeliefStack>],
    sigma: f32,
    radii: &[f32],
) -> Result<Vec<StageEval>> {
    let stages = predictions.first().map_or(0, Vec::len);
    let mut acc = vec![PckAccumulator::new(spec.parts, radii); stages];
    let mut loss = vec![0.0f64; stages];
    for (sample, preds) in samples.iter().zip(predictions) {
        let pair = make_training_pair(sample, spec, sigma)?;
        for (t, b) in preds.iter().enumerate() {
            let target = if t == 0 { &pair.stage1 } else { &pair.later };
            loss[t] += b.data.iter().zip(&target.data).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>();
            acc[t].add_sample(&extract_keypoints(b, spec.heatmap_stride), &sample.keypoints);
        }
    }
    let n = samples.len().max(1) as f64;
    Ok((0..stages).map(|t| StageEval { stage: t + 1, loss: loss[t] / n, pck: acc[t].result() }).collect())
}

pub fn evaluate<T: Real>(model: &Model<T>, samples: &[PoseSample], sigma: f32, radii: &[f32]) -> Result<Vec<StageEval>> {
    let preds = predict(model, samples, sigma, 50)?;
    score_predictions(model.spec(), samples, &preds, sigma, radii)
}

/// PCK of each stage's own beliefs.
pub fn stage_curve<T: Real>(model: &Model<T>, samples: &[PoseSample], sigma: f32, radii: &[f32]) -> Result<Vec<PckResult>> {
    Ok(evaluate(model, samples, sigma, radii)?.into_iter().map(|e| e.pck).collect())
}

/// Rejects a family whose parameter counts stray more than 10% from their mean.
pub fn check_family_balance(counts: &[usize]) -> Result<()> {
    if counts.is_empty() {
        return Err(CpmError::Config("empty spec family".into()));
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    if counts.iter().any(|&c| (c as f64 - mean).abs() > 0.1 * mean) {
        return Err(CpmError::UnbalancedFamily { counts: counts.to_vec() });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfRow {
    pub label: String,
    /// Effective image receptive field of the last stage.
    pub rf: usize,
    /// Receptive field of the last stage's context layers, in heatmap cells.
    pub context_rf: usize,
    pub params: usize,
    pub pck_at_0_2: f64,
}

pub struct SweepOutcome {
    pub rows: Vec<RfRow>,
    /// Final-stage keypoints of each member on the test split.
    pub predictions: Vec<Vec<Keypoints>>,
}

/// Trains one model per spec under `config` and scores the last stage.
pub fn rf_sweep(family: &[(String, CpmSpec)], data: &Dataset, config: &TrainConfig, opts: &RunOptions) -> Result<SweepOutcome> {
    let mut counts = Vec::new();
    for (_, spec) in family {
        counts.push(build_cpm::<f32>(spec, config.seed)?.parameter_count());
    }
    check_family_balance(&counts)?;
    let mut rows = Vec::new();
    let mut predictions = Vec::new();
    for ((label, spec), &params) in family.iter().zip(&counts) {
        let member_opts = opts.for_member(label);
        let outcome = train(build_cpm::<f32>(spec, config.seed)?, data, config, &member_opts)?;
        let preds = predict(&outcome.model, &data.test, config.sigma, 50)?;
        let kps: Vec<Keypoints> =
            preds.iter().map(|p| extract_keypoints(p.last().expect("stages"), spec.heatmap_stride)).collect();
        let mut acc = PckAccumulator::new(spec.parts, &[0.2]);
        for (k, s) in kps.iter().zip(&data.test) {
            acc.add_sample(k, &s.keypoints);
        }
        let report = receptive_field(spec);
        let last = report.stages.last().expect("stages");
        rows.push(RfRow {
            label: label.clone(),
            rf: last.image_rf,
            context_rf: if spec.stages > 1 { last.context_rf() } else { 0 },
            params,
            pck_at_0_2: acc.result().overall[0],
        });
        predictions.push(kps);
    }
    Ok(SweepOutcome { rows, predictions })
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(CpmError::from)
}

/// Rows `(part, r, pck)`; an overall row uses part `all`.
pub fn write_part_csv(result: &PckResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["part", "r", "pck"])?;
    for (p, row) in result.per_part.iter().enumerate() {
        for (r, v) in result.radii.iter().zip(row) {
            if let Some(v) = v {
                w.write_record([p.to_string(), r.to_string(), v.to_string()])?;
            }
        }
    }
    for (r, v) in result.radii.iter().zip(&result.overall) {
        w.write_record(["all".to_string(), r.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| CpmError::io(path, e))
}

/// Rows `(stage, r, pck)`.
pub fn write_stage_csv(curve: &[PckResult], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["stage", "r", "pck"])?;
    for (t, res) in curve.iter().enumerate() {
        for (r, v) in res.radii.iter().zip(&res.overall) {
            w.write_record([(t + 1).to_string(), r.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| CpmError::io(path, e))
}

/// Rows `(rf, params, pck)` plus label and context field.
pub fn write_rf_csv(rows: &[RfRow], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["label", "rf", "context_rf", "params", "pck"])?;
    for r in rows {
        w.write_record([r.label.clone(), r.rf.to_string(), r.context_rf.to_string(), r.params.to_string(), r.pck_at_0_2.to_string()])?;
    }
    w.flush().map_err(|e| CpmError::io(path, e))
}
