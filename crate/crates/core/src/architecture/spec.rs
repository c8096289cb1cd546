use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CpmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { kernel: usize, stride: usize, padding: usize, channels_out: usize },
    /// 2×2 max pooling with stride 2.
    Pool,
    Relu,
}

impl LayerSpec {
    /// Stride-1 convolution keeping the spatial size (odd kernels).
    pub fn same_conv(kernel: usize, channels_out: usize) -> Self {
        LayerSpec::Conv { kernel, stride: 1, padding: kernel / 2, channels_out }
    }

    pub fn kernel(&self) -> usize {
        match *self {
            LayerSpec::Conv { kernel, .. } => kernel,
            LayerSpec::Pool => 2,
            LayerSpec::Relu => 1,
        }
    }

    pub fn stride(&self) -> usize {
        match *self {
            LayerSpec::Conv { stride, .. } => stride,
            LayerSpec::Pool => 2,
            LayerSpec::Relu => 1,
        }
    }

    pub fn padding(&self) -> usize {
        match *self {
            LayerSpec::Conv { padding, .. } => padding,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let LayerSpec::Conv { kernel, stride, channels_out, .. } = *self {
            if kernel == 0 || stride == 0 || channels_out == 0 {
                return Err(CpmError::Architecture(format!("degenerate conv layer {self:?}")));
            }
        }
        Ok(())
    }
}

/// Layers of one stage. Stage 1 has only image-feature layers ending in the
/// belief output; later stages also have context layers that consume image
/// features, the previous beliefs and (optionally) the center map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub image_feature_layers: Vec<LayerSpec>,
    #[serde(default)]
    pub context_layers: Vec<LayerSpec>,
    pub output_parts: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpmSpec {
    pub stages: usize,
    pub parts: usize,
    /// `(H, W)` of the input image.
    pub input_size: [usize; 2],
    #[serde(default = "one")]
    pub image_channels: usize,
    pub heatmap_stride: usize,
    pub use_center_map: bool,
    pub share_image_features: bool,
    #[serde(default, skip_serializing_if = "Init::is_default")]
    pub init: Init,
    pub stage_specs: Vec<StageSpec>,
}

fn one() -> usize {
    1
}

/// Weight initialisation; biases always start at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform in `±√(1/fan_in)`.
    #[default]
    Uniform,
    /// Uniform in `±√(6/fan_in)`, variance `2/fan_in`.
    HeUniform,
}

impl Init {
    pub fn bound(self, fan_in: usize) -> f64 {
        let num = match self {
            Init::Uniform => 1.0,
            Init::HeUniform => 6.0,
        };
        (num / fan_in as f64).sqrt()
    }

    fn is_default(&self) -> bool {
        *self == Init::Uniform
    }
}

/// Spatial size and channel count after running `layers`.
pub(crate) fn propagate(layers: &[LayerSpec], mut c: usize, mut h: usize, mut w: usize) -> Result<(usize, usize, usize)> {
    for (i, layer) in layers.iter().enumerate() {
        layer.validate()?;
        match *layer {
            LayerSpec::Conv { kernel, stride, padding, channels_out } => {
                if kernel > h + 2 * padding || kernel > w + 2 * padding {
                    return Err(CpmError::Architecture(format!(
                        "layer {i}: kernel {kernel} exceeds padded input {h}x{w}+{padding}"
                    )));
                }
                h = (h + 2 * padding - kernel) / stride + 1;
                w = (w + 2 * padding - kernel) / stride + 1;
                c = channels_out;
            }
            LayerSpec::Pool => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(CpmError::Architecture(format!("layer {i}: pooling odd size {h}x{w}")));
                }
                h /= 2;
                w /= 2;
            }
            LayerSpec::Relu => {}
        }
    }
    Ok((c, h, w))
}

impl CpmSpec {
    pub fn belief_channels(&self) -> usize {
        self.parts + 1
    }

    /// `(h, w)` of every belief map.
    pub fn heatmap_size(&self) -> (usize, usize) {
        (self.input_size[0] / self.heatmap_stride, self.input_size[1] / self.heatmap_stride)
    }

    /// Channels leaving the image-feature layers of stage `t` (1-based).
    pub fn feature_channels(&self, t: usize) -> Result<usize> {
        let s = &self.stage_specs[t - 1];
        let [h, w] = self.input_size;
        Ok(propagate(&s.image_feature_layers, self.image_channels, h, w)?.0)
    }

    /// Input channels of the first context layer of stage `t ≥ 2`.
    pub fn context_input_channels(&self, t: usize) -> Result<usize> {
        Ok(self.feature_channels(t)? + self.belief_channels() + usize::from(self.use_center_map))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CpmError::Architecture(m));
        if self.stages == 0 || self.parts == 0 || self.heatmap_stride == 0 || self.image_channels == 0 {
            return err("stages, parts, heatmap_stride and image_channels must be positive".into());
        }
        if self.stage_specs.len() != self.stages {
            return err(format!("{} stage specs for {} stages", self.stage_specs.len(), self.stages));
        }
        let [h, w] = self.input_size;
        if h % self.heatmap_stride != 0 || w % self.heatmap_stride != 0 {
            return err(format!("input {h}x{w} not divisible by stride {}", self.heatmap_stride));
        }
        let (hh, hw) = self.heatmap_size();
        let out_c = self.belief_channels();
        for (i, s) in self.stage_specs.iter().enumerate() {
            let t = i + 1;
            if s.output_parts != out_c {
                return err(format!("stage {t} declares {} outputs, expected {out_c}", s.output_parts));
            }
            let (c, fh, fw) = propagate(&s.image_feature_layers, self.image_channels, h, w)?;
            if (fh, fw) != (hh, hw) {
                return err(format!("stage {t} image features are {fh}x{fw}, heatmaps are {hh}x{hw}"));
            }
            let last = if t == 1 {
                if !s.context_layers.is_empty() {
                    return err("stage 1 must not have context layers".into());
                }
                if c != out_c {
                    return err(format!("stage 1 emits {c} channels, expected {out_c}"));
                }
                s.image_feature_layers.last()
            } else {
                if s.context_layers.is_empty() {
                    return err(format!("stage {t} has no context layers"));
                }
                let cin = c + out_c + usize::from(self.use_center_map);
                let (cc, ch, cw) = propagate(&s.context_layers, cin, hh, hw)?;
                if (ch, cw) != (hh, hw) {
                    return err(format!("stage {t} context layers change the heatmap size to {ch}x{cw}"));
                }
                if cc != out_c {
                    return err(format!("stage {t} emits {cc} channels, expected {out_c}"));
                }
                s.context_layers.last()
            };
            if !matches!(last, Some(LayerSpec::Conv { .. })) {
                return err(format!("stage {t} must end with a convolution"));
            }
        }
        if self.share_image_features && self.stages > 2 {
            let first = &self.stage_specs[1].image_feature_layers;
            if self.stage_specs[2..].iter().any(|s| &s.image_feature_layers != first) {
                return err("shared image-feature layers must be identical across stages 2..T".into());
            }
        }
        Ok(())
    }

    /// Stable content hash stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: CpmSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CpmError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| CpmError::io(path, e))
    }

    /// Copy keeping only the first `stages` stages.
    pub fn truncated(&self, stages: usize) -> Self {
        let mut s = self.clone();
        s.stages = stages.min(self.stages);
        s.stage_specs.truncate(s.stages);
        s
    }
}
