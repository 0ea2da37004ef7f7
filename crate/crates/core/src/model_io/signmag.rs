use serde::{Deserialize, Serialize};

use super::{LayerSpec, ModelIoError, Result};
use crate::MAX_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Sign {
    #[default]
    Pos,
    Neg,
}

impl Sign {
    pub fn of(v: i64) -> Sign {
        if v < 0 {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }

    pub fn factor(self) -> i32 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }

    pub fn is_neg(self) -> bool {
        self == Sign::Neg
    }
}

/// A weight in sign-magnitude form. Zero always carries `Sign::Pos`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SignMagWeight {
    sign: Sign,
    magnitude: u16,
}

impl SignMagWeight {
    pub const ZERO: SignMagWeight = SignMagWeight {
        sign: Sign::Pos,
        magnitude: 0,
    };

    pub fn new(sign: Sign, magnitude: u16, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if u32::from(magnitude) >= 1u32 << bits {
            return Err(ModelIoError::Range(format!(
                "magnitude {magnitude} does not fit in {bits} bits"
            )));
        }
        Ok(Self::canonical(sign, magnitude))
    }

    /// No range check; callers guarantee `magnitude < 2^B`.
    pub(crate) fn canonical(sign: Sign, magnitude: u16) -> Self {
        let sign = if magnitude == 0 { Sign::Pos } else { sign };
        SignMagWeight { sign, magnitude }
    }

    pub fn sign(self) -> Sign {
        self.sign
    }

    pub fn magnitude(self) -> u16 {
        self.magnitude
    }

    pub fn value(self) -> i32 {
        self.sign.factor() * i32::from(self.magnitude)
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(ModelIoError::Invalid(format!(
            "bit width {bits} outside 1..={MAX_BITS}"
        )));
    }
    Ok(())
}

/// Converts a two's-complement integer into sign-magnitude form.
pub fn signmag_from_int(v: i32, bits: u8) -> Result<SignMagWeight> {
    check_bits(bits)?;
    let max = (1i64 << bits) - 1;
    let v = i64::from(v);
    if v.abs() > max {
        return Err(ModelIoError::Range(format!(
            "{v} outside ±{max} for {bits}-bit magnitudes"
        )));
    }
    Ok(SignMagWeight::canonical(Sign::of(v), v.unsigned_abs() as u16))
}

/// Symmetric linear quantization of real weights.
///
/// With no explicit scale, `scale = max|w| / (2^(B-1) - 1)`. Magnitudes are
/// rounded half away from zero and clamped to `2^(B-1) - 1`. An all-zero
/// tensor gets scale 1.0.
pub fn reference_quantize(
    values: &[f32],
    bits: u8,
    scale: Option<f64>,
) -> Result<(Vec<SignMagWeight>, f64)> {
    check_bits(bits)?;
    if values.is_empty() {
        return Err(ModelIoError::Invalid("cannot quantize an empty tensor".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(ModelIoError::Invalid(format!("non-finite weight {bad}")));
    }
    let qmax = (1u32 << (bits - 1)).saturating_sub(1).max(1);
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(f64::from(v.abs())));
    // Without an explicit scale, go through |w|·qmax/max|w| so that exact
    // fractions like 0.5·127 survive instead of dividing by an inexact scale.
    let (scale, to_level): (f64, Box<dyn Fn(f64) -> f64>) = match scale {
        Some(s) => {
            if !(s.is_finite() && s > 0.0) {
                return Err(ModelIoError::Invalid(format!("scale {s} must be positive")));
            }
            (s, Box::new(move |a| a / s))
        }
        None if max_abs == 0.0 => (1.0, Box::new(|a| a)),
        None => (
            max_abs / f64::from(qmax),
            Box::new(move |a| a * f64::from(qmax) / max_abs),
        ),
    };
    let weights = values
        .iter()
        .map(|&v| {
            let level = to_level(f64::from(v).abs()).round().min(f64::from(qmax));
            SignMagWeight::canonical(Sign::of(if v < 0.0 { -1 } else { 1 }), level as u16)
        })
        .collect();
    Ok((weights, scale))
}

/// One layer's weights in the sign-magnitude domain, filter-major
/// (`[out][in][kh][kw]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    pub spec: LayerSpec,
    pub bits: u8,
    pub weights: Vec<SignMagWeight>,
    pub scale: f64,
}

impl LayerTensor {
    pub fn new(spec: LayerSpec, bits: u8, weights: Vec<SignMagWeight>, scale: f64) -> Result<Self> {
        check_bits(bits)?;
        if weights.len() != spec.weight_count() {
            return Err(ModelIoError::Range(format!(
                "layer `{}`: {} weights, dims require {}",
                spec.name,
                weights.len(),
                spec.weight_count()
            )));
        }
        if let Some(w) = weights.iter().find(|w| u32::from(w.magnitude()) >= 1 << bits) {
            return Err(ModelIoError::Range(format!(
                "layer `{}`: magnitude {} exceeds {bits} bits",
                spec.name,
                w.magnitude()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModelIoError::Invalid(format!("scale {scale} must be positive")));
        }
        Ok(LayerTensor {
            spec,
            bits,
            weights,
            scale,
        })
    }

    pub fn from_real(spec: LayerSpec, values: &[f32], bits: u8, scale: Option<f64>) -> Result<Self> {
        let (weights, scale) = reference_quantize(values, bits, scale)?;
        LayerTensor::new(spec, bits, weights, scale)
    }

    pub fn filter(&self, f: usize) -> &[SignMagWeight] {
        let n = self.spec.weights_per_filter();
        &self.weights[f * n..(f + 1) * n]
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| f64::from(w.value()) * self.scale)
            .collect()
    }
}
