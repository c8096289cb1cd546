//! Closed-form receptive fields.
//!
//! Offsets give the input coordinate of the centre of output cell 0's
//! receptive field, with input pixel `i` centred at `i`. They assume kernels
//! are centred and borders zero-padded as configured.

use serde::Serialize;

use super::spec::{CpmSpec, LayerSpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RfEntry {
    pub layer: usize,
    pub kind: &'static str,
    pub kernel: usize,
    pub stride: usize,
    pub receptive_field: usize,
    pub effective_stride: usize,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRf {
    pub stage: usize,
    pub image_features: Vec<RfEntry>,
    /// Context layers in heatmap units, measured on the previous beliefs.
    pub context: Vec<RfEntry>,
    /// Receptive field of the stage output on the original image.
    pub image_rf: usize,
    pub effective_stride: usize,
    /// Image coordinate of the centre of output cell 0's field.
    pub offset: f64,
}

impl StageRf {
    /// Receptive field of this stage's output on the previous stage's beliefs.
    pub fn context_rf(&self) -> usize {
        self.context.last().map_or(1, |e| e.receptive_field)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RfReport {
    pub layers: Vec<RfEntry>,
    pub receptive_field: usize,
    pub effective_stride: usize,
    pub offset: f64,
    pub stages: Vec<StageRf>,
}

fn kind(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Conv { .. } => "conv",
        LayerSpec::Pool => "pool",
        LayerSpec::Relu => "relu",
    }
}

/// Runs `rf ← rf + (k−1)·jump; jump ← jump·stride` over `layers`.
pub fn layer_receptive_fields(layers: &[LayerSpec]) -> Vec<RfEntry> {
    let (mut rf, mut jump, mut offset) = (1usize, 1usize, 0.0f64);
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (k, s, p) = (l.kernel(), l.stride(), l.padding());
            rf += (k - 1) * jump;
            offset += ((k as f64 - 1.0) / 2.0 - p as f64) * jump as f64;
            jump *= s;
            RfEntry {
                layer: i,
                kind: kind(l),
                kernel: k,
                stride: s,
                receptive_field: rf,
                effective_stride: jump,
                offset,
            }
        })
        .collect()
}

pub fn receptive_field_layers(layers: &[LayerSpec]) -> RfReport {
    let entries = layer_receptive_fields(layers);
    let (rf, jump, offset) = entries.last().map_or((1, 1, 0.0), |e| (e.receptive_field, e.effective_stride, e.offset));
    RfReport { layers: entries, receptive_field: rf, effective_stride: jump, offset, stages: Vec::new() }
}

/// Per-stage analysis of a whole CPM. A later stage sees the image through
/// two branches (its own image features and the previous beliefs); its
/// reach is the union of both branch spans widened by the context layers.
pub fn receptive_field(spec: &CpmSpec) -> RfReport {
    let mut stages: Vec<StageRf> = Vec::with_capacity(spec.stages);
    // Image-coordinate span `[lo, hi]` of output cell 0 of the previous stage.
    let mut prev: Option<(f64, f64)> = None;
    for (i, s) in spec.stage_specs.iter().enumerate() {
        let features = layer_receptive_fields(&s.image_feature_layers);
        let (feat_rf, jump, feat_off) =
            features.last().map_or((1, 1, 0.0), |e| (e.receptive_field, e.effective_stride, e.offset));
        let half = (feat_rf as f64 - 1.0) / 2.0;
        let (mut lo, mut hi) = (feat_off - half, feat_off + half);
        if let Some((plo, phi)) = prev {
            lo = lo.min(plo);
            hi = hi.max(phi);
        }
        let context = layer_receptive_fields(&s.context_layers);
        if let Some(c) = context.last() {
            let half = (c.receptive_field as f64 - 1.0) / 2.0;
            lo += (c.offset - half) * jump as f64;
            hi += (c.offset + half) * jump as f64;
        }
        prev = Some((lo, hi));
        stages.push(StageRf {
            stage: i + 1,
            image_features: features,
            context,
            image_rf: (hi - lo).round() as usize + 1,
            effective_stride: jump * s.context_layers.iter().map(LayerSpec::stride).product::<usize>(),
            offset: (lo + hi) / 2.0,
        });
    }
    let first = receptive_field_layers(spec.stage_specs.first().map_or(&[][..], |s| &s.image_feature_layers[..]));
    let last = stages.last();
    RfReport {
        layers: first.layers,
        receptive_field: last.map_or(first.receptive_field, |s| s.image_rf),
        effective_stride: last.map_or(first.effective_stride, |s| s.effective_stride),
        offset: last.map_or(first.offset, |s| s.offset),
        stages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_double_3x3() {
        let one = receptive_field_layers(&[LayerSpec::same_conv(3, 1)]);
        assert_eq!((one.receptive_field, one.effective_stride), (3, 1));
        let two = receptive_field_layers(&[LayerSpec::same_conv(3, 1), LayerSpec::Relu, LayerSpec::same_conv(3, 1)]);
        assert_eq!(two.receptive_field, 5);
    }

    #[test]
    fn pooling_doubles_jump() {
        let r = receptive_field_layers(&[LayerSpec::same_conv(3, 1), LayerSpec::Pool, LayerSpec::same_conv(3, 1)]);
        assert_eq!(r.layers[1].receptive_field, 4);
        assert_eq!(r.receptive_field, 8);
        assert_eq!(r.effective_stride, 2);
        assert!(r.layers.windows(2).all(|w| w[0].receptive_field <= w[1].receptive_field));
    }
}
