//! Seeded synthetic models.
//!
//! Layer geometries follow ResNet-18 and MobileNet-v2 at 224×224 and VGG-16
//! at 32×32; spatial inputs are stored pre-padded so `out = (in - k)/s + 1`.
//! Weights are Gaussian with He scaling and a per-filter spread so filters
//! differ in how hard they are to quantize.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model_io::{LayerKind, LayerSpec, ModelIoError, ModelManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "resnet18")]
    ResNet18,
    #[serde(rename = "mobilenet-v2")]
    MobileNetV2,
    #[serde(rename = "vgg16")]
    Vgg16,
    /// Two small layers, used as the test fixture.
    #[serde(rename = "tiny")]
    Tiny,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::ResNet18 => "resnet18",
            Arch::MobileNetV2 => "mobilenet-v2",
            Arch::Vgg16 => "vgg16",
            Arch::Tiny => "tiny",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "resnet18" | "resnet-18" => Ok(Arch::ResNet18),
            "mobilenet-v2" | "mobilenetv2" | "mobilenet_v2" => Ok(Arch::MobileNetV2),
            "vgg16" | "vgg-16" => Ok(Arch::Vgg16),
            "tiny" => Ok(Arch::Tiny),
            other => Err(format!("unknown synthetic architecture `{other}`")),
        }
    }
}

struct Builder {
    layers: Vec<LayerSpec>,
    offset: u64,
}

impl Builder {
    fn new() -> Self {
        Builder {
            layers: Vec::new(),
            offset: 0,
        }
    }

    /// `input` is the unpadded size; padding is `k / 2` on each side.
    fn conv(&mut self, name: String, out: usize, cin: usize, k: usize, input: usize, stride: usize) {
        let padded = input + 2 * (k / 2);
        let spec = LayerSpec::conv(name, out, cin, k, padded, stride, self.offset);
        self.offset += spec.weight_len;
        self.layers.push(spec);
    }

    fn depthwise(&mut self, name: String, channels: usize, input: usize, stride: usize) {
        let mut spec = LayerSpec::conv(name, channels, 1, 3, input + 2, stride, self.offset);
        spec.kind = LayerKind::DepthwiseConv;
        self.offset += spec.weight_len;
        self.layers.push(spec);
    }
}

fn resnet18() -> Vec<LayerSpec> {
    let mut b = Builder::new();
    b.conv("conv1".into(), 64, 3, 7, 224, 2);
    let mut size = 56;
    let mut cin = 64;
    for (stage, &c) in [64usize, 128, 256, 512].iter().enumerate() {
        let layer = format!("layer{}", stage + 1);
        for block in 0..2 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let out_size = size / stride;
            b.conv(format!("{layer}.{block}.conv1"), c, cin, 3, size, stride);
            b.conv(format!("{layer}.{block}.conv2"), c, c, 3, out_size, 1);
            if stride != 1 || cin != c {
                let mut spec =
                    LayerSpec::conv(format!("{layer}.{block}.downsample"), c, cin, 1, size, 2, b.offset);
                spec.input_h = size;
                spec.input_w = size;
                b.offset += spec.weight_len;
                b.layers.push(spec);
            }
            cin = c;
            size = out_size;
        }
    }
    b.layers
}

fn mobilenet_v2() -> Vec<LayerSpec> {
    let mut b = Builder::new();
    b.conv("features.0".into(), 32, 3, 3, 224, 2);
    let mut size = 112;
    let mut cin = 32;
    let settings: [(usize, usize, usize, usize); 7] = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ];
    let mut idx = 1;
    for (t, c, n, s) in settings {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            let hidden = cin * t;
            let name = format!("features.{idx}");
            if t != 1 {
                b.conv(format!("{name}.expand"), hidden, cin, 1, size, 1);
            }
            b.depthwise(format!("{name}.dw"), hidden, size, stride);
            size = (size + 2 - 3) / stride + 1;
            b.conv(format!("{name}.project"), c, hidden, 1, size, 1);
            cin = c;
            idx += 1;
        }
    }
    b.conv(format!("features.{idx}"), 1280, cin, 1, size, 1);
    b.layers
}

fn vgg16() -> Vec<LayerSpec> {
    let mut b = Builder::new();
    let plan: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
    let mut size = 32;
    let mut cin = 3;
    for (block, chans) in plan.iter().enumerate() {
        for (i, &c) in chans.iter().enumerate() {
            b.conv(format!("block{}.conv{}", block + 1, i + 1), c, cin, 3, size, 1);
            cin = c;
        }
        size /= 2;
    }
    b.layers
}

fn tiny() -> Vec<LayerSpec> {
    let mut b = Builder::new();
    b.conv("conv_a".into(), 8, 4, 3, 4, 1);
    b.conv("conv_b".into(), 16, 8, 1, 4, 1);
    b.layers
}

/// Layer geometry with blob offsets for a synthetic architecture.
pub fn arch_layers(arch: Arch) -> Vec<LayerSpec> {
    match arch {
        Arch::ResNet18 => resnet18(),
        Arch::MobileNetV2 => mobilenet_v2(),
        Arch::Vgg16 => vgg16(),
        Arch::Tiny => tiny(),
    }
}

/// Seeded zero-mean Gaussian values.
pub fn gaussian_values(count: usize, std: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..count).map(|_| normal.sample(&mut rng) as f32).collect()
}

/// Weights for one layer: He-scaled Gaussian, with each filter's spread
/// multiplied by `exp(0.5·z)` for a per-filter normal `z`.
pub fn layer_values(spec: &LayerSpec, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = spec.weights_per_filter() as f64;
    let base = (2.0 / fan_in).sqrt();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(spec.weight_count());
    for _ in 0..spec.out_channels {
        let spread: f64 = unit.sample(&mut rng);
        let std = base * (0.5 * spread).exp();
        for _ in 0..spec.weights_per_filter() {
            let z: f64 = unit.sample(&mut rng);
            out.push((z * std) as f32);
        }
    }
    out
}

fn layer_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Manifest for `arch` with its data file named `<arch>.bin`.
pub fn synthetic_manifest(arch: Arch) -> ModelManifest {
    ModelManifest {
        model_name: format!("synthetic-{}", arch.as_str()),
        layers: arch_layers(arch),
        data_file: PathBuf::from(format!("{}.bin", arch.as_str())),
        scale_policy: BTreeMap::new(),
    }
}

/// Raw little-endian f32 blob matching [`synthetic_manifest`].
pub fn synthetic_blob(manifest: &ModelManifest, seed: u64) -> Vec<u8> {
    let total: u64 = manifest.layers.iter().map(|l| l.weight_len).sum();
    let mut blob = Vec::with_capacity(total as usize);
    for (i, layer) in manifest.layers.iter().enumerate() {
        debug_assert_eq!(blob.len() as u64, layer.weight_offset);
        for v in layer_values(layer, layer_seed(seed, i)) {
            blob.extend(v.to_le_bytes());
        }
    }
    blob
}

/// Writes `<arch>.json` and `<arch>.bin` into `dir`; returns the manifest path.
pub fn write_synthetic_model(arch: Arch, seed: u64, dir: &Path) -> Result<PathBuf, ModelIoError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ModelIoError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = synthetic_manifest(arch);
    let blob = synthetic_blob(&manifest, seed);
    let data_path = dir.join(&manifest.data_file);
    fs::write(&data_path, blob).map_err(io(&data_path))?;
    let path = dir.join(format!("{}.json", arch.as_str()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(path)
}
