//! Multi-scale tensor-network learning.
//!
//! Signals are encoded as product-state MPS, coarse-grained through
//! wavelet-derived MERA layers, and fed to an MPS weight tensor trained with
//! two-site sweeps. A trained model can be pushed back through a layer to the
//! next finer scale without changing its outputs.

mod binio;
pub mod coarsegrain;
pub mod error;
pub mod finegrain;
pub mod ingest;
pub mod mps;
pub mod tensor;
pub mod trainer;
pub mod wavelet;

pub use binio::OffsetReader;
pub use error::{Error, Result};
pub use mps::{BondTensor, Mps};
pub use tensor::{svd_split, DenseTensor, SvdResult, Truncation};
pub use coarsegrain::{Compression, ScaleCache, ScaleData};
pub use trainer::{SweepStats, Task, TrainConfig};
pub use wavelet::{build_daub4_layer, build_haar_layer, WaveletMeraLayer};
