#![allow(dead_code)]

use cpm_core::tensor::{Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.random_range(-scale..scale)))
}

/// Six-nested-loop cross-correlation with zero padding.
pub fn reference_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (f, _, kh, kw) = k.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![n, f, ho, wo]);
    for i in 0..n {
        for fi in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((i * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((fi * c + ci) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out.data_mut()[((i * f + fi) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
}

/// Relative error with a floor proportional to the largest gradient entry,
/// so entries that are zero up to rounding do not dominate.
pub fn rel_err(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3 * scale).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Central finite differences (in f64) of `loss` with respect to every entry
/// of `inputs[which]`, compared against `analytic`. `build` records the graph
/// on a fresh tape and returns its scalar output. Probes whose ±eps
/// evaluation changes the ReLU/maxpool activation pattern are skipped.
pub fn check_grad(
    inputs: &[Tensor<f64>],
    which: usize,
    analytic: &[f64],
    eps: f64,
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> GradCheck {
    let eval = |ins: &[Tensor<f64>]| -> (f64, u64) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape.value(out).data()[0], tape.activation_pattern())
    };
    let (_, base_pattern) = eval(inputs);
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for idx in 0..inputs[which].numel() {
        let orig = inputs[which].data()[idx];
        work[which].data_mut()[idx] = orig + eps;
        let (fp, pp) = eval(&work);
        work[which].data_mut()[idx] = orig - eps;
        let (fm, pm) = eval(&work);
        work[which].data_mut()[idx] = orig;
        if pp != base_pattern || pm != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic[idx], numeric, scale));
    }
    report
}

/// Analytic gradient, in precision `T`, of the scalar built by `build` with
/// respect to `inputs[which]`.
pub fn analytic_grad<T: Real>(
    inputs: &[Tensor<f64>],
    which: usize,
    build: &dyn Fn(&mut Tape<T>, &[Var]) -> Var,
) -> Vec<f64> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(t.cast::<T>().with_requires_grad(i == which)))
        .collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    tape.grad(vars[which]).unwrap().iter().map(|g| g.as_f64()).collect()
}
