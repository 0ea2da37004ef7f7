//! Shared weight bit-sparsity (SWIS) quantization toolkit.
//!
//! Weights are split into small depthwise groups. Each group shares a handful
//! of active bit positions ("shifts"), and every weight keeps one mask bit per
//! shift plus its sign. The crate covers the whole offline pipeline:
//!
//! - [`model_io`]: manifests, sign-magnitude conversion, the `SWISQ1` file format
//! - [`quantizer`]: exhaustive shift-set selection for SWIS, SWIS-C and layer truncation
//! - [`scheduler`]: non-uniform per-filter shift budgets with exact layer averages
//! - [`analytics`]: lossless-quantization probabilities, compression accounting, RMSE sweeps
//! - [`bitserial`]: bit-exact shared-sparsity MAC and bit-serial baselines
//! - [`sysarray`]: analytical output-stationary systolic array model
//! - [`synth`]: seeded synthetic models with ResNet/MobileNet/VGG geometry
//! - [`commands`]: the batch front end used by the `swis` binary

pub mod analytics;
pub mod bitserial;
pub mod commands;
pub mod model_io;
pub mod quantizer;
pub mod scheduler;
pub mod synth;
pub mod sysarray;

pub use model_io::{LayerKind, LayerSpec, LayerTensor, ModelManifest, Sign, SignMagWeight};
pub use quantizer::{GroupEncoding, Metric, QuantConfig, QuantMode, ShiftMode, ShiftSet};

/// Default weight magnitude width.
pub const DEFAULT_BITS: u8 = 8;
/// Largest supported magnitude width. Shift positions are stored in 3 bits.
pub const MAX_BITS: u8 = 8;
