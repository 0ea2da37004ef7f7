//! Model ingestion: manifests, raw tensor blobs and the sign-magnitude domain.

mod manifest;
mod qfile;
mod signmag;

pub use manifest::{
    load_manifest, load_manifest_resolved, LayerKind, LayerSpec, LoadedManifest, ModelManifest,
};
pub use qfile::{
    group_record_bits, load_quantized, read_quantized, save_quantized, shift_field_bits,
    write_quantized, QFILE_MAGIC,
};
pub use signmag::{reference_quantize, signmag_from_int, LayerTensor, Sign, SignMagWeight};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("unsupported file version or bad magic (expected {expected:?})")]
    Version { expected: String },
    #[error("truncated quantized file: {0}")]
    Truncated(String),
}

pub type Result<T> = std::result::Result<T, ModelIoError>;
