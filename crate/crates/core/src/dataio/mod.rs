//! Feature files, synthetic data and session partitions.

mod fvec;
mod meta;
mod partition;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use fvec::{decode_fvec, encode_fvec, read_fvec, read_fvec_with_dim, write_fvec, FvecData, FVEC_HEADER_LEN, FVEC_MAGIC, FVEC_VERSION};
pub use meta::{meta_path, DatasetMeta};
pub use partition::{make_partition, make_partition_over, PartitionPlan, PartitionSpec};
pub use synthetic::{gen_synthetic, SyntheticData};

/// A backbone feature vector with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub label: u32,
    pub features: Vec<f64>,
}

impl LabeledFeature {
    pub fn new(label: u32, features: Vec<f64>) -> Self {
        LabeledFeature { label, features }
    }
}
