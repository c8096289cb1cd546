//! Times forward+backward of the toy three-stage model.

use std::time::Instant;

use cpm_core::architecture::{build_cpm, design, DesignOptions};
use cpm_core::tensor::{Tape, Tensor};

fn main() {
    let spec = design(&DesignOptions::toy(3)).unwrap();
    let model = build_cpm::<f32>(&spec, 1).unwrap();
    println!("params: {}", model.parameter_count());
    let batch = 16;
    let image = Tensor::from_fn(vec![batch, 1, 64, 64], |i| ((i * 7919) % 255) as f32 / 255.0);
    let center = Tensor::from_fn(vec![batch, 1, 16, 16], |i| ((i * 31) % 7) as f32 / 7.0);
    let target = Tensor::zeros(vec![batch, 6, 16, 16]);
    let iters = 20;
    let start = Instant::now();
    for _ in 0..iters {
        let mut tape = Tape::new();
        let bound = model.store().bind(&mut tape, |_| true);
        let img = tape.constant(image.clone());
        let cm = tape.constant(center.clone());
        let outs = model.forward_on_tape(&mut tape, &bound, img, Some(cm), 3).unwrap();
        let mut total = tape.sq_err_sum(outs[0], &target).unwrap();
        for &o in &outs[1..] {
            let l = tape.sq_err_sum(o, &target).unwrap();
            total = tape.add(total, l).unwrap();
        }
        tape.backward(total).unwrap();
    }
    let per_sample = start.elapsed().as_secs_f64() / (iters * batch) as f64;
    println!("{:.3} ms per sample, {:.1} s per 2000-sample epoch", per_sample * 1e3, per_sample * 2000.0);
}
