//! Heuristic construction of CPM specs from receptive-field targets.
//!
//! Stage 1 is `[conv k, relu, pool] × log2(stride)` followed by `m` more
//! `k×k` convolutions and a two-layer 1×1 head. Later stages reuse that
//! trunk for image features and add `n` context convolutions of size `k'`
//! on the heatmaps, again followed by a 1×1 head.

use serde::{Deserialize, Serialize};

use super::rf::receptive_field_layers;
use super::spec::{CpmSpec, Init, LayerSpec, StageSpec};
use crate::error::{CpmError, Result};

pub const MAX_KERNEL: usize = 11;
pub const MAX_LAYERS: usize = 9;
const KERNELS: [usize; 5] = [3, 5, 7, 9, 11];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Output channels of the first convolution.
    pub first: usize,
    pub trunk: usize,
    /// Channels of the image features handed to stages ≥ 2.
    pub features: usize,
    pub context: usize,
    pub head: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub stages: usize,
    pub parts: usize,
    pub input_size: [usize; 2],
    pub heatmap_stride: usize,
    pub stage1_rf: usize,
    /// Target receptive field of each later stage on the previous beliefs,
    /// in heatmap cells.
    pub context_rf: usize,
    pub widths: Widths,
    pub use_center_map: bool,
    pub share_image_features: bool,
    #[serde(default)]
    pub init: Init,
}

impl DesignOptions {
    /// Defaults scaled to the input: stride 8 and wide layers from 256 px up,
    /// stride 4 with narrow layers below.
    pub fn for_input(parts: usize, input_size: [usize; 2], stage1_rf: usize, context_rf: usize) -> Self {
        let side = input_size[0].min(input_size[1]);
        let (heatmap_stride, widths) = if side >= 256 {
            (8, Widths { first: 32, trunk: 64, features: 32, context: 64, head: 128 })
        } else if side >= 32 {
            (4, Widths { first: 8, trunk: 16, features: 16, context: 16, head: 32 })
        } else {
            (1, Widths { first: 4, trunk: 4, features: 4, context: 4, head: 8 })
        };
        Self {
            stages: 3,
            parts,
            input_size,
            heatmap_stride,
            stage1_rf,
            context_rf,
            widths,
            use_center_map: true,
            share_image_features: true,
            init: Init::default(),
        }
    }

    /// The 64×64, five-part, stride-4 toy geometry.
    pub fn toy(stages: usize) -> Self {
        Self { stages, ..Self::for_input(5, [64, 64], 24, 13) }
    }

    /// The full-size geometry: 368×368 input, stride 8, context field of
    /// 31 heatmap cells.
    pub fn full_size(parts: usize, stages: usize) -> Self {
        Self { stages, ..Self::for_input(parts, [368, 368], 160, 31) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct TrunkChoice {
    kernel: usize,
    extra: usize,
    rf: usize,
}

fn pools_for(stride: usize) -> Result<usize> {
    if !stride.is_power_of_two() {
        return Err(CpmError::Config(format!("heatmap stride {stride} is not a power of two")));
    }
    Ok(stride.trailing_zeros() as usize)
}

fn trunk_layers(kernel: usize, pools: usize, extra: usize, w: &Widths, last_width: usize) -> Vec<LayerSpec> {
    let total = pools + extra;
    let mut layers = Vec::new();
    for i in 0..total {
        let width = if i + 1 == total {
            last_width
        } else if i == 0 {
            w.first
        } else {
            w.trunk
        };
        layers.push(LayerSpec::same_conv(kernel, width));
        layers.push(LayerSpec::Relu);
        if i < pools {
            layers.push(LayerSpec::Pool);
        }
    }
    layers
}

fn choose_trunk(target: usize, pools: usize) -> Result<TrunkChoice> {
    let mut best: Option<TrunkChoice> = None;
    let mut reach = 0;
    for extra in 0..=MAX_LAYERS.saturating_sub(pools) {
        if pools + extra == 0 {
            continue;
        }
        for kernel in KERNELS {
            let rf = receptive_field_layers(&trunk_layers(kernel, pools, extra, &Widths::unit(), 1)).receptive_field;
            reach = reach.max(rf);
            if rf < target {
                continue;
            }
            let cand = TrunkChoice { kernel, extra, rf };
            let better = match best {
                None => true,
                Some(b) => (rf, pools + extra, kernel) < (b.rf, pools + b.extra, b.kernel),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best.ok_or(CpmError::InfeasibleTarget { target, best: reach })
}

/// `(layers, kernel)` of the context convolutions.
fn choose_context(target: usize) -> Result<(usize, usize)> {
    if target <= 1 {
        return Ok((0, 1));
    }
    let mut best: Option<(usize, usize, usize)> = None;
    for n in 1..=MAX_LAYERS {
        for k in KERNELS {
            let rf = 1 + n * (k - 1);
            if rf < target {
                continue;
            }
            let key = (rf, n * k * k, n);
            if best.is_none_or(|b| key < (b.0, b.1, b.2)) {
                best = Some((rf, n * k * k, n));
            }
        }
    }
    let (rf, params, n) = best.ok_or(CpmError::InfeasibleTarget { target, best: 1 + MAX_LAYERS * (MAX_KERNEL - 1) })?;
    let k = ((params / n) as f64).sqrt().round() as usize;
    debug_assert_eq!(1 + n * (k - 1), rf);
    Ok((n, k))
}

impl Widths {
    fn unit() -> Self {
        Widths { first: 1, trunk: 1, features: 1, context: 1, head: 1 }
    }
}

/// Context layers of `n` `k×k` convolutions plus the 1×1 head.
pub fn context_layers(n: usize, k: usize, width: usize, head: usize, outputs: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for _ in 0..n {
        layers.push(LayerSpec::same_conv(k, width));
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::same_conv(1, head));
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::same_conv(1, outputs));
    layers
}

pub fn design(opts: &DesignOptions) -> Result<CpmSpec> {
    let pools = pools_for(opts.heatmap_stride)?;
    let trunk = choose_trunk(opts.stage1_rf, pools)?;
    let (n_ctx, k_ctx) = choose_context(opts.context_rf)?;
    let out = opts.parts + 1;
    let w = &opts.widths;

    let mut stage1 = trunk_layers(trunk.kernel, pools, trunk.extra, w, w.trunk);
    stage1.extend([LayerSpec::same_conv(1, w.head), LayerSpec::Relu, LayerSpec::same_conv(1, out)]);
    let mut stage_specs = vec![StageSpec { image_feature_layers: stage1, context_layers: vec![], output_parts: out }];
    let features = trunk_layers(trunk.kernel, pools, trunk.extra, w, w.features);
    for _ in 1..opts.stages {
        stage_specs.push(StageSpec {
            image_feature_layers: features.clone(),
            context_layers: context_layers(n_ctx, k_ctx, w.context, w.head, out),
            output_parts: out,
        });
    }
    let spec = CpmSpec {
        stages: opts.stages,
        parts: opts.parts,
        input_size: opts.input_size,
        image_channels: 1,
        heatmap_stride: opts.heatmap_stride,
        use_center_map: opts.use_center_map,
        share_image_features: opts.share_image_features,
        init: opts.init,
        stage_specs,
    };
    spec.validate()?;
    Ok(spec)
}

/// Three-stage spec meeting both receptive-field targets with defaults
/// scaled to `input_size`.
pub fn design_default_specs(
    parts: usize,
    input_size: [usize; 2],
    target_stage1_rf: usize,
    target_context_rf: usize,
) -> Result<CpmSpec> {
    design(&DesignOptions::for_input(parts, input_size, target_stage1_rf, target_context_rf))
}
