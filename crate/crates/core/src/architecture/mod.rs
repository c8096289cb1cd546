//! CPM specs, model construction and receptive-field analysis.

mod design;
mod model;
mod rf;
mod spec;

pub use design::{context_layers, design, design_default_specs, DesignOptions, Widths, MAX_KERNEL, MAX_LAYERS};
pub use model::{build_cpm, ConvLayerInfo, Model, SHARE_GROUP};
pub use rf::{layer_receptive_fields, receptive_field, receptive_field_layers, RfEntry, RfReport, StageRf};
pub use spec::{CpmSpec, Init, LayerSpec, StageSpec};
