//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 1 2 3`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{analytic_grad, check_grad, random_tensor, rng, GradCheck};
use cpm_core::architecture::{build_cpm, receptive_field, CpmSpec, Init, LayerSpec, Model, StageSpec};
use cpm_core::beliefs::{cell_center, extract_keypoints, ideal_beliefs, BeliefMode, Keypoints};
use cpm_core::cli::{cmd_train, RunConfig};
use cpm_core::evaluation::rf_sweep;
use cpm_core::synthdata::Dataset;
use cpm_core::tensor::{Real, Tape, Tensor, Var};
use cpm_core::training::{stage_loss, total_loss, train, MetricRow, RunOptions, Scheme, TrainOutcome};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn toy_config() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    RunConfig::load(&path).expect("configs/toy.toml loads")
}

struct SchemeRun {
    outcome: TrainOutcome,
    elapsed: Duration,
}

/// Toy benchmark runs, trained once and shared between criteria.
#[derive(Default)]
struct Runs {
    data: Option<Dataset>,
    schemes: BTreeMap<&'static str, SchemeRun>,
}

impl Runs {
    fn data(&mut self) -> &Dataset {
        self.data.get_or_insert_with(|| Dataset::generate(&toy_config().data).expect("toy dataset"))
    }

    fn scheme(&mut self, scheme: Scheme) -> &SchemeRun {
        if !self.schemes.contains_key(scheme.id()) {
            let cfg = toy_config();
            let spec = cfg.spec().expect("toy spec");
            let mut tc = cfg.train.clone();
            tc.scheme = scheme;
            tc.snapshot_every = 0;
            let model = build_cpm(&spec, tc.seed).expect("toy model");
            let data = self.data();
            let start = Instant::now();
            let outcome = train(model, data, &tc, &RunOptions::default()).expect("toy training");
            let run = SchemeRun { outcome, elapsed: start.elapsed() };
            eprintln!("  trained scheme ({}) in {:.0}s", scheme.id(), run.elapsed.as_secs_f64());
            self.schemes.insert(scheme.id(), run);
        }
        &self.schemes[scheme.id()]
    }
}

fn final_rows(metrics: &[MetricRow]) -> Vec<&MetricRow> {
    let last = metrics.iter().map(|r| r.epoch).max().unwrap_or(0);
    let mut rows: Vec<&MetricRow> = metrics.iter().filter(|r| r.epoch == last).collect();
    rows.sort_by_key(|r| r.stage);
    rows
}

fn final_pck(metrics: &[MetricRow]) -> f64 {
    final_rows(metrics).last().map_or(0.0, |r| r.pck_at_0_2)
}

// ---------------------------------------------------------------- 1

/// Every checked function is piecewise quadratic, so central differences
/// carry no truncation error away from kinks and a wide step only reduces
/// rounding.
const FD_EPS: f64 = 1e-4;

fn check_both(name: &str, inputs: &[Tensor<f64>], which: &[usize], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, build32: &dyn Fn(&mut Tape<f32>, &[Var]) -> Var) -> Result<(GradCheck, GradCheck), String> {
    let (mut r64, mut r32) = (GradCheck::default(), GradCheck::default());
    for &w in which {
        let g64 = analytic_grad::<f64>(inputs, w, build);
        let a = check_grad(inputs, w, &g64, FD_EPS, build);
        let g32 = analytic_grad::<f32>(inputs, w, build32);
        let b = check_grad(inputs, w, &g32, FD_EPS, build);
        for (acc, r) in [(&mut r64, a), (&mut r32, b)] {
            acc.checked += r.checked;
            acc.skipped_kinks += r.skipped_kinks;
            acc.max_rel_err = acc.max_rel_err.max(r.max_rel_err);
        }
    }
    if r64.checked == 0 {
        return Err(format!("{name}: no probes checked"));
    }
    if r64.max_rel_err >= 1e-6 || r32.max_rel_err >= 1e-4 {
        return Err(format!("{name}: f64 {:.2e} f32 {:.2e}", r64.max_rel_err, r32.max_rel_err));
    }
    Ok((r64, r32))
}

/// `sum(op(x) ⊙ w)` with a fixed random weight as the last input.
fn weighted<T: Real>(tape: &mut Tape<T>, out: Var, w: Var) -> Var {
    let m = tape.mul(out, w).unwrap();
    tape.sum(m)
}

fn primitive_checks() -> Result<Vec<String>, String> {
    let mut r = rng(101);
    let mut lines = Vec::new();
    let mut report = |name: &str, res: (GradCheck, GradCheck)| {
        lines.push(format!("{name} f64 {:.1e} f32 {:.1e} ({} probes, {} kinks)", res.0.max_rel_err, res.1.max_rel_err, res.0.checked, res.0.skipped_kinks));
    };

    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 2)] {
        let x = random_tensor::<f64>(&mut r, &[2, 3, 7, 6], 1.0);
        let k = random_tensor::<f64>(&mut r, &[4, 3, 3, 3], 0.5);
        let b = random_tensor::<f64>(&mut r, &[4], 0.3);
        let out_h = (7 + 2 * pad - 3) / stride + 1;
        let out_w = (6 + 2 * pad - 3) / stride + 1;
        let w = random_tensor::<f64>(&mut r, &[2, 4, out_h, out_w], 1.0);
        macro_rules! net {
            () => {
                |t: &mut Tape<_>, v: &[Var]| {
                    let c = t.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
                    weighted(t, c, v[3])
                }
            };
        }
        report(&format!("conv2d s{stride} p{pad}"), check_both("conv2d", &[x, k, b, w], &[0, 1, 2], &net!(), &net!())?);
    }

    let x = random_tensor::<f64>(&mut r, &[2, 2, 6, 8], 1.0);
    let w = random_tensor::<f64>(&mut r, &[2, 2, 3, 4], 1.0);
    macro_rules! pool {
        () => {
            |t: &mut Tape<_>, v: &[Var]| {
                let p = t.maxpool2(v[0]).unwrap();
                weighted(t, p, v[1])
            }
        };
    }
    report("maxpool2", check_both("maxpool2", &[x, w], &[0], &pool!(), &pool!())?);

    let x = random_tensor::<f64>(&mut r, &[3, 5], 1.0);
    let w = random_tensor::<f64>(&mut r, &[3, 5], 1.0);
    macro_rules! relu {
        () => {
            |t: &mut Tape<_>, v: &[Var]| {
                let y = t.relu(v[0]);
                weighted(t, y, v[1])
            }
        };
    }
    report("relu", check_both("relu", &[x, w], &[0], &relu!(), &relu!())?);

    let a = random_tensor::<f64>(&mut r, &[2, 2, 3, 3], 1.0);
    let b = random_tensor::<f64>(&mut r, &[2, 3, 3, 3], 1.0);
    let w = random_tensor::<f64>(&mut r, &[2, 5, 3, 3], 1.0);
    macro_rules! cat {
        () => {
            |t: &mut Tape<_>, v: &[Var]| {
                let c = t.concat_channels(&[v[0], v[1]]).unwrap();
                weighted(t, c, v[2])
            }
        };
    }
    report("concat", check_both("concat", &[a, b, w], &[0, 1], &cat!(), &cat!())?);

    let a = random_tensor::<f64>(&mut r, &[4, 3], 1.0);
    let b = random_tensor::<f64>(&mut r, &[4, 3], 1.0);
    let w = random_tensor::<f64>(&mut r, &[4, 3], 1.0);
    macro_rules! mul {
        () => {
            |t: &mut Tape<_>, v: &[Var]| {
                let m = t.mul(v[0], v[1]).unwrap();
                weighted(t, m, v[2])
            }
        };
    }
    report("mul", check_both("mul", &[a.clone(), b.clone(), w.clone()], &[0, 1], &mul!(), &mul!())?);
    macro_rules! add {
        () => {
            |t: &mut Tape<_>, v: &[Var]| {
                let m = t.add(v[0], v[1]).unwrap();
                weighted(t, m, v[2])
            }
        };
    }
    report("add", check_both("add", &[a.clone(), b.clone(), w], &[0, 1], &add!(), &add!())?);
    macro_rules! sum {
        () => {
            |t: &mut Tape<_>, v: &[Var]| {
                let s = t.sum(v[0]);
                let sq = t.mul(s, s).unwrap();
                t.sum(sq)
            }
        };
    }
    report("sum", check_both("sum", &[a.clone()], &[0], &sum!(), &sum!())?);
    let target = b.clone();
    let t32: Tensor<f32> = target.cast();
    let sq64 = |t: &mut Tape<f64>, v: &[Var]| t.sq_err_sum(v[0], &target).unwrap();
    let sq32 = |t: &mut Tape<f32>, v: &[Var]| t.sq_err_sum(v[0], &t32).unwrap();
    report("sq_err_sum", check_both("sq_err_sum", &[a], &[0], &sq64, &sq32)?);
    Ok(lines)
}

/// Two-stage CPM on 16×16 inputs with center map and unshared features.
fn fd_spec() -> CpmSpec {
    let spec = CpmSpec {
        stages: 2,
        parts: 2,
        input_size: [16, 16],
        image_channels: 1,
        heatmap_stride: 2,
        use_center_map: true,
        share_image_features: false,
        init: Init::HeUniform,
        stage_specs: vec![
            StageSpec {
                image_feature_layers: vec![LayerSpec::same_conv(3, 4), LayerSpec::Relu, LayerSpec::Pool, LayerSpec::same_conv(1, 3)],
                context_layers: vec![],
                output_parts: 3,
            },
            StageSpec {
                image_feature_layers: vec![LayerSpec::same_conv(3, 3), LayerSpec::Relu, LayerSpec::Pool],
                context_layers: vec![LayerSpec::same_conv(3, 4), LayerSpec::Relu, LayerSpec::same_conv(1, 3)],
                output_parts: 3,
            },
        ],
    };
    spec.validate().expect("fd spec");
    spec
}

fn cpm_objective<T: Real>(model: &Model<T>, targets: &[Tensor<T>], tape: &mut Tape<T>, v: &[Var]) -> Var {
    let n = model.store().num_slots();
    let beliefs = model.forward_on_tape(tape, &v[..n], v[n], Some(v[n + 1]), 2).unwrap();
    let l1 = tape.sq_err_sum(beliefs[0], &targets[0]).unwrap();
    let l2 = tape.sq_err_sum(beliefs[1], &targets[1]).unwrap();
    tape.add(l1, l2).unwrap()
}

fn cpm_check() -> Result<String, String> {
    let spec = fd_spec();
    let m64 = build_cpm::<f64>(&spec, 17).unwrap();
    let m32 = build_cpm::<f32>(&spec, 17).unwrap();
    let mut r = rng(55);
    let mut inputs: Vec<Tensor<f64>> = m64.store().slot_ids().map(|id| m64.store().slot(id).detach()).collect();
    let n = inputs.len();
    inputs.push(random_tensor(&mut r, &[2, 1, 16, 16], 1.0));
    inputs.push(random_tensor(&mut r, &[2, 1, 8, 8], 1.0));
    let targets: Vec<Tensor<f64>> = (0..2).map(|_| random_tensor(&mut r, &[2, 3, 8, 8], 1.0)).collect();
    let t32: Vec<Tensor<f32>> = targets.iter().map(|t| t.cast()).collect();
    let b64 = |t: &mut Tape<f64>, v: &[Var]| cpm_objective(&m64, &targets, t, v);
    let b32 = |t: &mut Tape<f32>, v: &[Var]| cpm_objective(&m32, &t32, t, v);
    let which: Vec<usize> = (0..=n).collect();
    let (a, b) = check_both("2-stage CPM", &inputs, &which, &b64, &b32)?;
    Ok(format!("2-stage CPM f64 {:.1e} f32 {:.1e} ({} probes, {} kinks)", a.max_rel_err, b.max_rel_err, a.checked, a.skipped_kinks))
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut lines = primitive_checks()?;
    lines.push(cpm_check()?);
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        eprintln!("    {l}");
    }
    ensure(secs < 120.0, format!("{} gradient checks within tolerance in {secs:.1}s", lines.len()))
}

// ---------------------------------------------------------------- 2

/// Random stack of `n` layers with `downs` halvings, ending in a conv with
/// `out` channels.
fn random_stack(r: &mut ChaCha8Rng, n: usize, downs: usize, out: usize) -> Vec<LayerSpec> {
    let mut slots: Vec<usize> = (0..n - 1).collect();
    let mut down_at = Vec::new();
    for _ in 0..downs {
        let i = r.random_range(0..slots.len());
        down_at.push(slots.swap_remove(i));
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                let k = [1, 3, 5, 7][r.random_range(0..4)];
                LayerSpec::same_conv(k, out)
            } else if down_at.contains(&i) {
                if r.random_bool(0.5) {
                    LayerSpec::Pool
                } else {
                    let k = [3, 5][r.random_range(0..2)];
                    LayerSpec::Conv { kernel: k, stride: 2, padding: k / 2, channels_out: r.random_range(1..4) }
                }
            } else if r.random_bool(0.3) {
                LayerSpec::Relu
            } else {
                let k = [1, 3, 5, 7][r.random_range(0..4)];
                LayerSpec::same_conv(k, r.random_range(1..4))
            }
        })
        .collect()
}

fn random_spec(r: &mut ChaCha8Rng, stages: usize) -> CpmSpec {
    let downs = r.random_range(0..3);
    let stride = 1 << downs;
    let n = r.random_range(3..9);
    let mut stage_specs = vec![StageSpec {
        image_feature_layers: random_stack(r, n, downs, 2),
        context_layers: vec![],
        output_parts: 2,
    }];
    for _ in 1..stages {
        let (n, width, m) = (r.random_range(3..9), r.random_range(1..4), r.random_range(1..4));
        let feats = random_stack(r, n, downs, width);
        let ctx = random_stack(r, m, 0, 2);
        stage_specs.push(StageSpec { image_feature_layers: feats, context_layers: ctx, output_parts: 2 });
    }
    let mut spec = CpmSpec {
        stages,
        parts: 1,
        input_size: [0, 0],
        image_channels: 1,
        heatmap_stride: stride,
        use_center_map: false,
        share_image_features: false,
        init: Init::Uniform,
        stage_specs,
    };
    let rf = receptive_field(&spec);
    let side = (rf.receptive_field + 4 * stride).div_ceil(stride) * stride;
    spec.input_size = [side, side];
    spec.validate().expect("random spec is valid");
    spec
}

/// Extent and centre (in pixel indices) of the input columns and rows whose
/// perturbation changes the middle output cell of the last stage.
fn perturbation_field(spec: &CpmSpec) -> ((usize, f64), (usize, f64), (usize, usize)) {
    let mut model = build_cpm::<f64>(spec, 0).unwrap();
    for id in model.store().slot_ids().collect::<Vec<_>>() {
        let t = model.store_mut().slot_mut(id);
        let shape = t.shape().to_vec();
        let fill = if shape.len() == 4 { 1.0 / (shape[1] * shape[2] * shape[3]) as f64 } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = fill);
    }
    let [h, w] = spec.input_size;
    let (gh, gw) = spec.heatmap_size();
    let cell = (gh / 2, gw / 2);
    let probe = |img: &Tensor<f64>| -> f64 {
        let out = model.forward(img, None).unwrap();
        out.last().unwrap().data()[cell.0 * gw + cell.1]
    };
    let base_img = Tensor::full(vec![1, 1, h, w], 1.0);
    let base = probe(&base_img);
    let sweep = |n: usize, set: &dyn Fn(&mut Tensor<f64>, usize)| -> (usize, f64) {
        let hits: Vec<usize> = (0..n)
            .filter(|&i| {
                let mut img = base_img.clone();
                set(&mut img, i);
                probe(&img) != base
            })
            .collect();
        let (lo, hi) = (hits[0], *hits.last().unwrap());
        assert_eq!(hits.len(), hi - lo + 1, "affected set is not contiguous");
        assert!(lo > 0 && hi + 1 < n, "field reaches the border; enlarge the input");
        (hi - lo + 1, (lo + hi) as f64 / 2.0)
    };
    let cols = sweep(w, &|img, x| (0..h).for_each(|y| img.data_mut()[y * w + x] += 1.0));
    let rows = sweep(h, &|img, y| (0..w).for_each(|x| img.data_mut()[y * w + x] += 1.0));
    (cols, rows, cell)
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut checked = 0;
    for i in 0..28 {
        let spec = random_spec(&mut r, if i < 20 { 1 } else { 2 });
        let report = receptive_field(&spec);
        let ((cw, cx), (ch, cy), (my, mx)) = perturbation_field(&spec);
        let jump = report.stages.last().unwrap().effective_stride as f64;
        let want = report.receptive_field;
        let want_x = report.offset + mx as f64 * jump;
        let want_y = report.offset + my as f64 * jump;
        if cw != want || ch != want || (cx - want_x).abs() > 1e-9 || (cy - want_y).abs() > 1e-9 {
            return Err(format!(
                "spec {i}: closed form rf {want} centre ({want_x}, {want_y}), oracle {cw}x{ch} centre ({cx}, {cy}); {:?}",
                spec.stage_specs
            ));
        }
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("{checked} random specs (20 one-stage, 8 two-stage) match the oracle in {secs:.1}s"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut r = rng(3);
    for _ in 0..200 {
        let shape = [r.random_range(1..3), r.random_range(1..7), r.random_range(1..9), r.random_range(1..9)];
        let pred = random_tensor::<f32>(&mut r, &shape, 2.0);
        if stage_loss(&pred, &pred).unwrap() != 0.0 {
            return Err("stage_loss(pred, pred) != 0".into());
        }

        let losses: Vec<f64> = (0..r.random_range(1..6))
            .map(|_| {
                let a = random_tensor::<f32>(&mut r, &shape, 1.0);
                let b = random_tensor::<f32>(&mut r, &shape, 1.0);
                stage_loss(&a, &b).unwrap()
            })
            .collect();
        let mut exact = 0.0f64;
        for l in &losses {
            exact += l;
        }
        if total_loss(&losses).to_bits() != exact.to_bits() {
            return Err(format!("total_loss {} != sum {exact}", total_loss(&losses)));
        }

        // Dyadic values and δ keep every f32 operation exact.
        let target = Tensor::<f32>::from_fn(shape.to_vec(), |_| r.random_range(-256i32..256) as f32 / 64.0);
        let delta = r.random_range(-64i32..64) as f32 / 32.0;
        let cell = r.random_range(0..target.numel());
        let mut moved = target.clone();
        moved.data_mut()[cell] += delta;
        let f = stage_loss(&moved, &target).unwrap();
        if f != (delta as f64).powi(2) {
            return Err(format!("single-cell δ={delta}: loss {f}"));
        }
        // Off the dyadic grid the identity holds to rounding.
        let t = random_tensor::<f64>(&mut r, &shape, 1.0);
        let d = r.random_range(-1.0..1.0);
        let mut m = t.clone();
        m.data_mut()[cell] += d;
        let f = stage_loss(&m, &t).unwrap();
        if (f - d * d).abs() > 1e-15 {
            return Err(format!("single-cell δ={d}: loss {f}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("identities hold on 200 random cases in {secs:.2}s"))
}

// ---------------------------------------------------------------- 4, 5

fn criterion_4(runs: &mut Runs) -> Check {
    let run = runs.scheme(Scheme::GlobalWithIntermediate);
    let pck = final_pck(&run.outcome.metrics);
    let mins = run.elapsed.as_secs_f64() / 60.0;
    let epochs = run.outcome.epochs_run;
    ensure(
        pck >= 0.90 && epochs <= 30 && mins <= 20.0,
        format!("scheme (i) PCK@0.2 {pck:.3} after {epochs} epochs in {mins:.1} min (need ≥ 0.90, ≤ 30, ≤ 20)"),
    )
}

fn criterion_5(runs: &mut Runs) -> Check {
    let run = runs.scheme(Scheme::GlobalWithIntermediate);
    let rows = final_rows(&run.outcome.metrics);
    let (s1, s3) = (rows[0].pck_at_0_2, rows[2].pck_at_0_2);
    ensure(s3 >= s1 + 0.02, format!("stage 1 {s1:.3}, stage 2 {:.3}, stage 3 {s3:.3}", rows[1].pck_at_0_2))
}

// ---------------------------------------------------------------- 6, 7

fn criterion_6(runs: &mut Runs) -> Check {
    let (g_i, p_i, t_i) = {
        let r = runs.scheme(Scheme::GlobalWithIntermediate);
        (r.outcome.gradients.stage_mean(1, 1), final_pck(&r.outcome.metrics), r.elapsed)
    };
    let (g_iv, p_iv, t_iv) = {
        let r = runs.scheme(Scheme::GlobalNoIntermediate);
        (r.outcome.gradients.stage_mean(1, 1), final_pck(&r.outcome.metrics), r.elapsed)
    };
    let (g_i, g_iv) = (g_i.ok_or("no stage-1 gradients under (i)")?, g_iv.ok_or("no stage-1 gradients under (iv)")?);
    let mins = (t_i + t_iv).as_secs_f64() / 60.0;
    ensure(
        g_i > g_iv && p_i >= p_iv && mins <= 40.0,
        format!(
            "(a) epoch-1 stage-1 mean |g| (i) {g_i:.3e} vs (iv) {g_iv:.3e}; (b) final PCK@0.2 (i) {p_i:.3} vs (iv) {p_iv:.3}; {mins:.1} min"
        ),
    )
}

fn criterion_7(runs: &mut Runs) -> Check {
    let p = |runs: &mut Runs, s| final_pck(&runs.scheme(s).outcome.metrics);
    let i = p(runs, Scheme::GlobalWithIntermediate);
    let iii = p(runs, Scheme::StagewiseThenFinetune);
    let ii = p(runs, Scheme::Stagewise);
    ensure(i >= iii - 0.01 && iii >= ii - 0.01, format!("(i) {i:.3}, (iii) {iii:.3}, (ii) {ii:.3}"))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Check {
    let start = Instant::now();
    let mut r = rng(8);
    let (stride, grid, sigma) = (4usize, (16usize, 16usize), 3.0f32);
    let aligned = |x: usize, y: usize| [cell_center(x, stride), cell_center(y, stride)];
    for _ in 0..300 {
        let parts = r.random_range(1..6);
        // Well-separated grid-aligned keypoints.
        let mut cells: Vec<(usize, usize)> = Vec::new();
        while cells.len() < parts {
            let c = (r.random_range(1..grid.1 - 4), r.random_range(1..grid.0 - 4));
            if cells.iter().all(|d| c.0.abs_diff(d.0) >= 2 || c.1.abs_diff(d.1) >= 2) {
                cells.push(c);
            }
        }
        let primary = Keypoints::new(cells.iter().map(|&(x, y)| Some(aligned(x, y))).collect());
        let other = Keypoints::new((0..parts).map(|_| Some([r.random_range(0.0..64.0), r.random_range(0.0..64.0)])).collect());
        let people = [primary.clone(), other];
        for mode in [BeliefMode::AllPeople, BeliefMode::PrimaryOnly] {
            let b = ideal_beliefs(&people, grid, sigma, stride, mode);
            if b.background().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err("background outside [0, 1]".into());
            }
            for (p, &(x, y)) in cells.iter().enumerate() {
                if b.at(p, y, x) != 1.0 {
                    return Err(format!("peak {} at aligned truth", b.at(p, y, x)));
                }
            }
        }

        let b = ideal_beliefs(&[primary.clone()], grid, sigma, stride, BeliefMode::PrimaryOnly);
        if extract_keypoints(&b, stride) != primary {
            return Err(format!("extract∘ideal lost keypoints {cells:?}"));
        }

        let (dx, dy) = (r.random_range(0..3), r.random_range(0..3));
        let shifted = Keypoints::new(cells.iter().map(|&(x, y)| Some(aligned(x + dx, y + dy))).collect());
        let s = ideal_beliefs(&[shifted], grid, sigma, stride, BeliefMode::PrimaryOnly);
        for c in 0..=parts {
            for y in 0..grid.0 - dy {
                for x in 0..grid.1 - dx {
                    if (b.at(c, y, x) - s.at(c, y + dy, x + dx)).abs() > 1e-6 {
                        return Err(format!("shift ({dx}, {dy}) breaks equivariance at channel {c}"));
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("peak, range, equivariance and extract∘ideal hold on 300 cases in {secs:.2}s"))
}

// ---------------------------------------------------------------- 9

fn small_config() -> RunConfig {
    let mut cfg = toy_config();
    cfg.data.train = 64;
    cfg.data.test = 32;
    cfg.train.scheme = Scheme::StagewiseThenFinetune;
    cfg.train.epochs = 6;
    cfg.train.snapshot_every = 1;
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = small_config();
    let data = Dataset::generate(&cfg.data).map_err(|e| e.to_string())?;
    let out = |name: &str| -> PathBuf { dir.path().join(name) };
    cmd_train(&cfg, &data, &out("a"), false, None, false).map_err(|e| e.to_string())?;
    cmd_train(&cfg, &data, &out("b"), false, None, false).map_err(|e| e.to_string())?;
    let same_metrics = read(&out("a/metrics.csv")) == read(&out("b/metrics.csv"));
    let same_model = read(&out("a/model.ckpt")) == read(&out("b/model.ckpt"));

    let snapshot = out("a/snapshot_e0003.ckpt");
    cmd_train(&cfg, &data, &out("c"), false, Some(&snapshot), false).map_err(|e| e.to_string())?;
    let resumed_metrics = read(&out("a/metrics.csv")) == read(&out("c/metrics.csv"));
    let resumed_model = read(&out("a/model.ckpt")) == read(&out("c/model.ckpt"));
    ensure(
        same_metrics && same_model && resumed_metrics && resumed_model,
        format!(
            "rerun metrics {same_metrics}, model {same_model}; resume from epoch 3 metrics {resumed_metrics}, model {resumed_model}"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10(runs: &mut Runs) -> Check {
    let cfg = toy_config();
    let family = cfg.rf_family().map_err(|e| e.to_string())?;
    let mut tc = cfg.train.clone();
    tc.snapshot_every = 0;
    if let Some(e) = cfg.rf_sweep.epochs {
        tc.epochs = e;
    }
    let start = Instant::now();
    let outcome = rf_sweep(&family, runs.data(), &tc, &RunOptions::default()).map_err(|e| e.to_string())?;
    let mins = start.elapsed().as_secs_f64() / 60.0;
    let rows = &outcome.rows;
    let table: Vec<String> = rows.iter().map(|r| format!("{} rf {} params {} pck {:.3}", r.label, r.rf, r.params, r.pck_at_0_2)).collect();
    let (small, large) = (rows.first().ok_or("empty sweep")?, rows.last().ok_or("empty sweep")?);
    ensure(
        large.rf > small.rf && large.pck_at_0_2 > small.pck_at_0_2 && mins <= 60.0,
        format!("{}; {mins:.1} min", table.join(", ")),
    )
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut runs = Runs::default();
    let criteria: Vec<(usize, &str, Box<dyn FnMut(&mut Runs) -> Check>)> = vec![
        (1, "gradient correctness", Box::new(|_| criterion_1())),
        (2, "receptive-field oracle", Box::new(|_| criterion_2())),
        (3, "loss identities", Box::new(|_| criterion_3())),
        (8, "belief-map properties", Box::new(|_| criterion_8())),
        (9, "reproducibility", Box::new(|_| criterion_9())),
        (4, "toy end-to-end", Box::new(criterion_4)),
        (5, "stage-wise improvement", Box::new(criterion_5)),
        (6, "intermediate supervision", Box::new(criterion_6)),
        (7, "training scheme ordering", Box::new(criterion_7)),
        (10, "receptive-field sweep", Box::new(criterion_10)),
    ];
    let mut results = Vec::new();
    for (n, name, mut f) in criteria {
        if !selected(n) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(|| f(&mut runs))).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
        results.push((n, res.is_ok()));
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
