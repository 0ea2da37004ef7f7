use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelIoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "depthwise-conv")]
    DepthwiseConv,
    /// Accepted by the manifest so it can be carried through, but every
    /// quantization and simulation path rejects it.
    #[serde(rename = "fc")]
    FullyConnected,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise-conv",
            LayerKind::FullyConnected => "fc",
        }
    }
}

/// Geometry of one layer plus its byte range inside the tensor blob.
///
/// For depthwise layers `in_channels` is the per-filter channel count (1);
/// the layer consumes `out_channels` input feature maps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub stride: usize,
    pub weight_offset: u64,
    pub weight_len: u64,
}

impl LayerSpec {
    /// Builds a spec with the weight range derived from the dims.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        input_hw: usize,
        stride: usize,
        weight_offset: u64,
    ) -> Self {
        let mut spec = LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            input_h: input_hw,
            input_w: input_hw,
            stride,
            weight_offset,
            weight_len: 0,
        };
        spec.weight_len = spec.weight_count() as u64 * 4;
        spec
    }

    pub fn weights_per_filter(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.weights_per_filter()
    }

    pub fn output_h(&self) -> usize {
        (self.input_h - self.kernel_h) / self.stride + 1
    }

    pub fn output_w(&self) -> usize {
        (self.input_w - self.kernel_w) / self.stride + 1
    }

    pub fn output_pixels(&self) -> usize {
        self.output_h() * self.output_w()
    }

    /// Number of input feature maps the layer reads.
    pub fn input_channels(&self) -> usize {
        match self.kind {
            LayerKind::DepthwiseConv => self.out_channels,
            _ => self.in_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("out_channels", self.out_channels),
            ("in_channels", self.in_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("input_h", self.input_h),
            ("input_w", self.input_w),
            ("stride", self.stride),
        ];
        for (field, v) in dims {
            if v == 0 {
                return Err(ModelIoError::Invalid(format!(
                    "layer `{}`: {field} must be positive",
                    self.name
                )));
            }
        }
        if self.kernel_h > self.input_h || self.kernel_w > self.input_w {
            return Err(ModelIoError::Invalid(format!(
                "layer `{}`: kernel {}x{} larger than input {}x{}",
                self.name, self.kernel_h, self.kernel_w, self.input_h, self.input_w
            )));
        }
        if self.kind == LayerKind::DepthwiseConv && self.in_channels != 1 {
            return Err(ModelIoError::Invalid(format!(
                "layer `{}`: depthwise-conv must have in_channels = 1 per filter",
                self.name
            )));
        }
        let expected = self.weight_count() as u64 * 4;
        if self.weight_len != expected {
            return Err(ModelIoError::Range(format!(
                "layer `{}`: weight_len {} does not match dims ({} bytes expected)",
                self.name, self.weight_len, expected
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub model_name: String,
    pub layers: Vec<LayerSpec>,
    /// Relative paths resolve against the manifest's directory.
    pub data_file: PathBuf,
    /// Per-layer dequantization scales keyed by layer name. Layers without an
    /// entry get the symmetric max-abs scale at quantization time.
    #[serde(default)]
    pub scale_policy: BTreeMap<String, f64>,
}

impl ModelManifest {
    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Checks every invariant that does not need the blob.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(ModelIoError::DuplicateLayer(layer.name.clone()));
            }
            layer.validate()?;
        }
        for (name, scale) in &self.scale_policy {
            if !seen.contains(name.as_str()) {
                return Err(ModelIoError::Invalid(format!(
                    "scale_policy names unknown layer `{name}`"
                )));
            }
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(ModelIoError::Invalid(format!(
                    "scale for layer `{name}` must be strictly positive, got {scale}"
                )));
            }
        }
        Ok(())
    }

    fn check_blob_bounds(&self, blob_len: u64) -> Result<()> {
        for layer in &self.layers {
            let end = layer.weight_offset.checked_add(layer.weight_len);
            if end.is_none_or(|end| end > blob_len) {
                return Err(ModelIoError::Range(format!(
                    "layer `{}`: bytes {}..{} exceed data file of {} bytes",
                    layer.name,
                    layer.weight_offset,
                    layer.weight_offset.saturating_add(layer.weight_len),
                    blob_len
                )));
            }
        }
        Ok(())
    }

    /// Reads one layer's real-valued weights (little-endian f32) from `blob`.
    pub fn layer_weights<'a>(&self, blob: &'a [u8], layer: &LayerSpec) -> Result<Vec<f32>> {
        let start = layer.weight_offset as usize;
        let end = start + layer.weight_len as usize;
        let bytes: &'a [u8] = blob.get(start..end).ok_or_else(|| {
            ModelIoError::Range(format!("layer `{}` outside blob", layer.name))
        })?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// A manifest together with its resolved blob location.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: ModelManifest,
    pub data_path: PathBuf,
}

impl LoadedManifest {
    pub fn read_blob(&self) -> Result<Vec<u8>> {
        fs::read(&self.data_path).map_err(|source| ModelIoError::Io {
            path: self.data_path.clone(),
            source,
        })
    }
}

/// Parses and validates a manifest, including blob bounds.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ModelManifest> {
    load_manifest_resolved(path).map(|l| l.manifest)
}

pub fn load_manifest_resolved(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| ModelIoError::Parse(e.to_string()))?;
    manifest.validate()?;
    let data_path = if manifest.data_file.is_absolute() {
        manifest.data_file.clone()
    } else {
        path.parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.data_file)
    };
    let blob_len = fs::metadata(&data_path)
        .map_err(|source| ModelIoError::Io {
            path: data_path.clone(),
            source,
        })?
        .len();
    manifest.check_blob_bounds(blob_len)?;
    Ok(LoadedManifest {
        manifest,
        data_path,
    })
}
