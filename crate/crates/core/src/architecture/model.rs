use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{CpmSpec, Init, LayerSpec};
use crate::error::{CpmError, Result};
use crate::tensor::{
    read_checkpoint, write_checkpoint, FORMAT_VERSION, Checkpoint, CheckpointHeader, ParamStore, Real, SlotId, Tape, Tensor,
    TensorEntry, Var,
};

pub const SHARE_GROUP: &str = "image_features";

#[derive(Clone, Copy, Debug)]
enum Built {
    Conv { kernel: SlotId, bias: SlotId, stride: usize, padding: usize },
    Pool,
    Relu,
}

#[derive(Clone, Debug)]
struct BuiltStage {
    features: Vec<Built>,
    context: Vec<Built>,
}

/// One convolution's parameters, listed once even when shared.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerInfo {
    pub name: String,
    pub stage: usize,
    pub kernel: SlotId,
    pub bias: SlotId,
}

/// A built CPM. Forward passes never mutate it.
#[derive(Clone, Debug)]
pub struct Model<T: Real = crate::tensor::Float> {
    spec: CpmSpec,
    store: ParamStore<T>,
    stages: Vec<BuiltStage>,
    conv_layers: Vec<ConvLayerInfo>,
}

/// Builds every parameter of `spec`, initialised per `spec.init` (by default `[−√(1/fan_in), √(1/fan_in)]`) with zero biases.
pub fn build_cpm<T: Real>(spec: &CpmSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut stages = Vec::with_capacity(spec.stages);
    let mut conv_layers = Vec::new();

    for (i, s) in spec.stage_specs.iter().enumerate() {
        let t = i + 1;
        let shared = spec.share_image_features && t >= 2;
        let mut cin = spec.image_channels;
        let features = build_layers(
            &s.image_feature_layers,
            &format!("stage{t}/features"),
            shared.then_some(SHARE_GROUP),
            t,
            spec.init,
            &mut cin,
            &mut store,
            &mut rng,
            &mut conv_layers,
        )?;
        let context = if t == 1 {
            Vec::new()
        } else {
            let expected = spec.context_input_channels(t)?;
            let mut cin = cin + spec.belief_channels() + usize::from(spec.use_center_map);
            if cin != expected {
                return Err(CpmError::Architecture(format!("stage {t}: context expects {expected} inputs, has {cin}")));
            }
            build_layers(
                &s.context_layers,
                &format!("stage{t}/context"),
                None,
                t,
                spec.init,
                &mut cin,
                &mut store,
                &mut rng,
                &mut conv_layers,
            )?
        };
        stages.push(BuiltStage { features, context });
    }
    Ok(Model { spec: spec.clone(), store, stages, conv_layers })
}

#[allow(clippy::too_many_arguments)]
fn build_layers<T: Real>(
    layers: &[LayerSpec],
    prefix: &str,
    share: Option<&str>,
    stage: usize,
    init: Init,
    cin: &mut usize,
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    conv_layers: &mut Vec<ConvLayerInfo>,
) -> Result<Vec<Built>> {
    let mut out = Vec::with_capacity(layers.len());
    let mut conv_idx = 0;
    for layer in layers {
        out.push(match *layer {
            LayerSpec::Conv { kernel, stride, padding, channels_out } => {
                conv_idx += 1;
                let name = format!("{prefix}/conv{conv_idx}");
                let role = format!("conv{conv_idx}");
                let fan_in = *cin * kernel * kernel;
                let bound = init.bound(fan_in);
                let shape = vec![channels_out, *cin, kernel, kernel];
                let (kernel_role, bias_role) = (format!("{role}/kernel"), format!("{role}/bias"));
                let before = store.num_slots();
                let k = store.register(format!("{name}/kernel"), share.map(|g| (g, kernel_role.as_str())), || {
                    Tensor::from_fn(shape.clone(), |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                })?;
                let b = store.register(format!("{name}/bias"), share.map(|g| (g, bias_role.as_str())), || {
                    Tensor::zeros(vec![channels_out])
                })?;
                if store.slot(k).shape() != shape {
                    return Err(CpmError::Architecture(format!("{name}: shared kernel shape mismatch")));
                }
                if store.num_slots() > before {
                    conv_layers.push(ConvLayerInfo { name, stage, kernel: k, bias: b });
                }
                *cin = channels_out;
                Built::Conv { kernel: k, bias: b, stride, padding }
            }
            LayerSpec::Pool => Built::Pool,
            LayerSpec::Relu => Built::Relu,
        });
    }
    Ok(out)
}

impl<T: Real> Model<T> {
    pub fn spec(&self) -> &CpmSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Distinct trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn conv_layers(&self) -> &[ConvLayerInfo] {
        &self.conv_layers
    }

    /// Storage slots first created by stage `t`. Shared image features
    /// belong to stage 2.
    pub fn stage_slots(&self, t: usize) -> BTreeSet<SlotId> {
        self.conv_layers.iter().filter(|l| l.stage == t).flat_map(|l| [l.kernel, l.bias]).collect()
    }

    /// Scalars in the image-feature layers of stage `t`.
    pub fn image_feature_param_count(&self, t: usize) -> usize {
        self.stages[t - 1]
            .features
            .iter()
            .filter_map(|b| match b {
                Built::Conv { kernel, bias, .. } => Some(self.store.slot(*kernel).numel() + self.store.slot(*bias).numel()),
                _ => None,
            })
            .sum()
    }

    fn check_inputs(&self, image: &Tensor<T>, center: Option<&Tensor<T>>, upto: usize) -> Result<()> {
        let (n, c, h, w) = image.dims4()?;
        let [sh, sw] = self.spec.input_size;
        if (c, h, w) != (self.spec.image_channels, sh, sw) {
            return Err(CpmError::shape(
                "forward",
                format!("image is {c}x{h}x{w}, model expects {}x{sh}x{sw}", self.spec.image_channels),
            ));
        }
        if self.spec.use_center_map && upto >= 2 {
            let (hh, hw) = self.spec.heatmap_size();
            match center {
                Some(cm) if cm.shape() == [n, 1, hh, hw] => {}
                Some(cm) => {
                    return Err(CpmError::shape("forward", format!("center map {:?}, expected [{n},1,{hh},{hw}]", cm.shape())))
                }
                None => return Err(CpmError::shape("forward", "model expects a center map")),
            }
        }
        Ok(())
    }

    fn run(&self, tape: &mut Tape<T>, bound: &[Var], layers: &[Built], mut x: Var) -> Result<Var> {
        for layer in layers {
            x = match *layer {
                Built::Conv { kernel, bias, stride, padding } => tape.conv2d(x, bound[kernel.0], bound[bias.0], stride, padding)?,
                Built::Pool => tape.maxpool2(x)?,
                Built::Relu => tape.relu(x),
            };
        }
        Ok(x)
    }

    /// Records stages `1..=upto` on `tape`; `bound` comes from
    /// [`ParamStore::bind`]. Returns one `[N, P+1, h, w]` belief node per stage.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &[Var],
        image: Var,
        center: Option<Var>,
        upto: usize,
    ) -> Result<Vec<Var>> {
        let upto = upto.clamp(1, self.spec.stages);
        self.check_inputs(tape.value(image), center.map(|c| tape.value(c)), upto)?;
        let mut beliefs = Vec::with_capacity(upto);
        beliefs.push(self.run(tape, bound, &self.stages[0].features, image)?);
        let mut shared_features = None;
        for t in 2..=upto {
            let stage = &self.stages[t - 1];
            let feats = match shared_features {
                Some(f) if self.spec.share_image_features => f,
                _ => {
                    let f = self.run(tape, bound, &stage.features, image)?;
                    shared_features = Some(f);
                    f
                }
            };
            let mut inputs = vec![feats, *beliefs.last().expect("stage 1 ran")];
            if self.spec.use_center_map {
                inputs.push(center.expect("checked above"));
            }
            let x = tape.concat_channels(&inputs)?;
            beliefs.push(self.run(tape, bound, &stage.context, x)?);
        }
        Ok(beliefs)
    }

    /// Inference over a batch; one `[N, P+1, h, w]` tensor per stage.
    pub fn forward(&self, image: &Tensor<T>, center: Option<&Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        self.forward_upto(image, center, self.spec.stages)
    }

    pub fn forward_upto(&self, image: &Tensor<T>, center: Option<&Tensor<T>>, upto: usize) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, |_| false);
        let img = tape.constant(image.detach());
        let cm = center.map(|c| tape.constant(c.detach()));
        let outs = self.forward_on_tape(&mut tape, &bound, img, cm, upto)?;
        Ok(outs.into_iter().map(|v| tape.take(v)).collect())
    }

    /// Image features of stage `t ≥ 2`.
    pub fn image_features(&self, t: usize, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, |_| false);
        let img = tape.constant(image.detach());
        let f = self.run(&mut tape, &bound, &self.stages[t - 1].features, img)?;
        Ok(tape.take(f))
    }

    /// Context head of stage `t ≥ 2` on explicit inputs.
    pub fn stage_context(
        &self,
        t: usize,
        features: &Tensor<T>,
        beliefs: &Tensor<T>,
        center: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        if t < 2 || t > self.spec.stages {
            return Err(CpmError::shape("stage_context", format!("stage {t} has no context layers")));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, |_| false);
        let mut inputs = vec![tape.constant(features.detach()), tape.constant(beliefs.detach())];
        if self.spec.use_center_map {
            let c = center.ok_or_else(|| CpmError::shape("stage_context", "missing center map"))?;
            inputs.push(tape.constant(c.detach()));
        }
        let x = tape.concat_channels(&inputs)?;
        let y = self.run(&mut tape, &bound, &self.stages[t - 1].context, x)?;
        Ok(tape.take(y))
    }

    fn header(&self, state: serde_json::Value) -> CheckpointHeader {
        let tensors = self
            .store
            .slot_ids()
            .map(|id| {
                let name = self.store.slot_name(id).to_string();
                let share_group = self.store.params().iter().find(|p| p.slot == id).and_then(|p| p.share_group.clone());
                TensorEntry { name, shape: self.store.slot(id).shape().to_vec(), share_group }
            })
            .collect();
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            fingerprint: self.spec.fingerprint(),
            tensors,
            state,
        }
    }

    /// Writes parameters plus `extra` blobs (e.g. optimizer state) after them.
    pub fn save(&self, path: &Path, state: serde_json::Value, extra: &[(String, Vec<T>)]) -> Result<()> {
        let mut header = self.header(state);
        let mut blobs: Vec<&[T]> = self.store.slot_ids().map(|id| self.store.slot(id).data()).collect();
        for (name, data) in extra {
            header.tensors.push(TensorEntry { name: name.clone(), shape: vec![data.len()], share_group: None });
            blobs.push(data);
        }
        write_checkpoint(path, &header, &blobs)
    }

    /// Loads parameters from `path` into a model of `spec`, refusing a
    /// checkpoint whose fingerprint differs. Returns the checkpoint too.
    pub fn load(spec: &CpmSpec, path: &Path) -> Result<(Self, Checkpoint<T>)> {
        let ck = read_checkpoint::<T>(path)?;
        ck.verify_fingerprint(&spec.fingerprint())?;
        let mut model = build_cpm::<T>(spec, 0)?;
        model.load_params(&ck)?;
        Ok((model, ck))
    }

    pub fn load_params(&mut self, ck: &Checkpoint<T>) -> Result<()> {
        for id in self.store.slot_ids().collect::<Vec<_>>() {
            let name = self.store.slot_name(id).to_string();
            let (entry, blob) = ck.blob(&name).ok_or_else(|| CpmError::Checkpoint(format!("missing tensor {name}")))?;
            if entry.shape != self.store.slot(id).shape() {
                return Err(CpmError::Checkpoint(format!("{name}: shape {:?} in checkpoint", entry.shape)));
            }
            self.store.slot_mut(id).data_mut().copy_from_slice(blob);
        }
        Ok(())
    }
}
