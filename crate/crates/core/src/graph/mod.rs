//! The synthetic graph family: structure, validity rules, rewards, dataset
//! generation, dense relaxation, and distribution distance.

mod dataset;
mod dense;
mod mmd;
mod reward;
mod structure;
mod validity;

pub use dataset::{sample_dataset, GrowthConfig};
pub use dense::{decode_dense, encode_dense, DenseGraphTensor, GraphLayout, NODE_CHANNELS};
pub use mmd::{graph_features, mmd_distance, MMD_BANDWIDTH};
pub use reward::{reward, saturation_fraction, triangle_density, RewardSpec};
pub use structure::{Graph, EDGE_CATEGORIES, NODE_CATEGORIES};
pub use validity::{check_validity, repair_validity, ValidityReport, ValidityRule};
