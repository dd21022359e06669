//! Network architecture: residual blocks, spatial-adaptive blocks with
//! coarse-to-fine offset transfer, the dilated context block, and the
//! encoder-decoder that assembles them.

mod blocks;
mod config;
mod cost;
mod export;
mod net;

pub use blocks::{upsample_offsets, ContextBlock, ConvKind, ConvLayer, OffsetFields, OffsetHead, ResBlock, Rsab};
pub use config::{FieldDiff, ModelConfig};
pub use cost::{count_params_flops, CostReport, LayerCost};
pub use export::{collect_offsets, grid_points, offsets_to_csv, OffsetRow, OFFSET_CSV_HEADER};
pub use net::{DecoderStage, EncoderStage, ForwardPass, Sadnet, ScaleState};

#[cfg(test)]
mod tests;
