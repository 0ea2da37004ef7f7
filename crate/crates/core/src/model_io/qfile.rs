//! `SWISQ1` quantized model files.
//!
//! ```text
//! "SWISQ1"                       magic + version
//! u8  bits                       magnitude width B
//! str model_name                 (u32 length + UTF-8)
//! u32 layer_count
//! per layer:
//!   str name, u8 kind
//!   u32 out, in, kh, kw, ih, iw, stride
//!   u64 weight_offset, weight_len
//!   f64 scale
//!   u8  mode                     0 swis, 1 swis-c, 2 trunc
//!   u32 group_size M
//!   u32 groups_per_filter
//!   u8  shifts[out]              per-filter N
//!   u64 payload_len
//!   payload: one record per group, filter-major, each padded to a byte:
//!     M sign bits | shift fields | M·N mask bits (weight-major)
//! ```
//!
//! Shift fields are `N` positions for swis and a single window offset for
//! the consecutive modes, each `ceil(log2 B)` bits wide (3 for B = 8).
//! Integers are little-endian, bits are packed LSB first.

use std::fs;
use std::path::Path;

use super::{LayerKind, LayerSpec, ModelIoError, Result, Sign};
use crate::quantizer::{
    group_layout, GroupEncoding, QuantMode, QuantizedLayer, QuantizedModel, ShiftSet,
};

pub const QFILE_MAGIC: &[u8; 6] = b"SWISQ1";

/// Width of one stored shift position.
pub fn shift_field_bits(bits: u8) -> u32 {
    let positions = u32::from(bits.max(2));
    32 - (positions - 1).leading_zeros()
}

/// Bits in one group record before byte padding.
pub fn group_record_bits(mode: QuantMode, group_size: usize, n: usize, bits: u8) -> u64 {
    let fields = match mode {
        QuantMode::Swis => n as u64,
        QuantMode::SwisC | QuantMode::LayerTrunc => 1,
    };
    group_size as u64 * (1 + n as u64) + fields * u64::from(shift_field_bits(bits))
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    used: u32,
}

impl BitWriter {
    fn push(&mut self, value: u32, width: u32) {
        for i in 0..width {
            if self.used.is_multiple_of(8) {
                self.bytes.push(0);
            }
            let bit = (value >> i & 1) as u8;
            *self.bytes.last_mut().unwrap() |= bit << (self.used % 8);
            self.used += 1;
        }
    }

    fn align(&mut self) {
        self.used = self.used.div_ceil(8) * 8;
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn pull(&mut self, width: u32) -> Result<u32> {
        let mut v = 0u32;
        for i in 0..width {
            let byte = self
                .bytes
                .get(self.pos / 8)
                .ok_or_else(|| ModelIoError::Truncated("group payload ends early".into()))?;
            v |= u32::from(byte >> (self.pos % 8) & 1) << i;
            self.pos += 1;
        }
        Ok(v)
    }

    fn align(&mut self) {
        self.pos = self.pos.div_ceil(8) * 8;
    }
}

fn mode_tag(mode: QuantMode) -> u8 {
    match mode {
        QuantMode::Swis => 0,
        QuantMode::SwisC => 1,
        QuantMode::LayerTrunc => 2,
    }
}

fn kind_tag(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Conv => 0,
        LayerKind::DepthwiseConv => 1,
        LayerKind::FullyConnected => 2,
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u32).to_le_bytes());
}

fn encode_groups(layer: &QuantizedLayer) -> Result<Vec<u8>> {
    let per_filter = layer.layout().groups_per_filter();
    let field = shift_field_bits(layer.bits);
    let mut w = BitWriter::default();
    for (idx, enc) in layer.groups.iter().enumerate() {
        enc.validate()
            .map_err(|e| ModelIoError::Invalid(format!("group {idx}: {e}")))?;
        let n = usize::from(layer.filter_shifts[idx / per_filter]);
        if enc.group_size() != layer.group_size || enc.shift_count() != n {
            return Err(ModelIoError::Invalid(format!(
                "group {idx}: shape {}x{} does not match layer ({}x{n})",
                enc.group_size(),
                enc.shift_count(),
                layer.group_size
            )));
        }
        for s in &enc.signs {
            w.push(u32::from(s.is_neg()), 1);
        }
        match layer.mode {
            QuantMode::Swis => {
                for &s in enc.shift_set.shifts() {
                    w.push(u32::from(s), field);
                }
            }
            _ => w.push(u32::from(enc.shift_set.offset()), field),
        }
        for &m in &enc.masks {
            w.push(u32::from(m), n as u32);
        }
        w.align();
    }
    Ok(w.bytes)
}

/// Serializes a model to bytes.
pub fn write_quantized(model: &QuantizedModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend(QFILE_MAGIC);
    out.push(model.bits);
    put_str(&mut out, &model.model_name);
    put_u32(&mut out, model.layers.len());
    for layer in &model.layers {
        if layer.bits != model.bits {
            return Err(ModelIoError::Invalid(format!(
                "layer `{}` has {} bits, model has {}",
                layer.spec.name, layer.bits, model.bits
            )));
        }
        let spec = &layer.spec;
        if layer.filter_shifts.len() != spec.out_channels
            || layer.groups.len() != spec.out_channels * layer.layout().groups_per_filter()
        {
            return Err(ModelIoError::Invalid(format!(
                "layer `{}`: group or shift count does not match dims",
                spec.name
            )));
        }
        put_str(&mut out, &spec.name);
        out.push(kind_tag(spec.kind));
        for v in [
            spec.out_channels,
            spec.in_channels,
            spec.kernel_h,
            spec.kernel_w,
            spec.input_h,
            spec.input_w,
            spec.stride,
        ] {
            put_u32(&mut out, v);
        }
        out.extend(spec.weight_offset.to_le_bytes());
        out.extend(spec.weight_len.to_le_bytes());
        out.extend(layer.scale.to_bits().to_le_bytes());
        out.push(mode_tag(layer.mode));
        put_u32(&mut out, layer.group_size);
        put_u32(&mut out, layer.layout().groups_per_filter());
        out.extend(&layer.filter_shifts);
        let payload = encode_groups(layer)?;
        out.extend((payload.len() as u64).to_le_bytes());
        out.extend(payload);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelIoError::Truncated(format!("missing {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| ModelIoError::Invalid(format!("{what} is not UTF-8")))
    }
}

fn decode_groups(
    payload: &[u8],
    mode: QuantMode,
    bits: u8,
    group_size: usize,
    per_filter: usize,
    filter_shifts: &[u8],
) -> Result<Vec<GroupEncoding>> {
    let field = shift_field_bits(bits);
    let mut r = BitReader {
        bytes: payload,
        pos: 0,
    };
    let mut groups = Vec::with_capacity(per_filter * filter_shifts.len());
    for &n in filter_shifts {
        for _ in 0..per_filter {
            let signs = (0..group_size)
                .map(|_| r.pull(1).map(|b| if b == 1 { Sign::Neg } else { Sign::Pos }))
                .collect::<Result<Vec<_>>>()?;
            let bad = |e: crate::quantizer::QuantError| ModelIoError::Invalid(e.to_string());
            let shift_set = match mode {
                QuantMode::Swis => {
                    let shifts = (0..n)
                        .map(|_| r.pull(field).map(|s| s as u8))
                        .collect::<Result<Vec<_>>>()?;
                    ShiftSet::new(shifts, mode.shift_mode(), bits).map_err(bad)?
                }
                _ => ShiftSet::window(r.pull(field)? as u8, n, bits).map_err(bad)?,
            };
            let masks = (0..group_size)
                .map(|_| r.pull(u32::from(n)).map(|m| m as u16))
                .collect::<Result<Vec<_>>>()?;
            r.align();
            groups.push(GroupEncoding::new(shift_set, signs, masks).map_err(bad)?);
        }
    }
    if r.pos / 8 != payload.len() {
        return Err(ModelIoError::Invalid(format!(
            "group payload has {} trailing bytes",
            payload.len() - r.pos / 8
        )));
    }
    Ok(groups)
}

/// Parses bytes produced by [`write_quantized`].
pub fn read_quantized(bytes: &[u8]) -> Result<QuantizedModel> {
    if bytes.len() < QFILE_MAGIC.len() || &bytes[..QFILE_MAGIC.len()] != QFILE_MAGIC {
        return Err(ModelIoError::Version {
            expected: String::from_utf8_lossy(QFILE_MAGIC).into_owned(),
        });
    }
    let mut c = Cursor {
        bytes,
        pos: QFILE_MAGIC.len(),
    };
    let bits = c.u8("bit width")?;
    super::signmag::check_bits(bits)?;
    let model_name = c.string("model name")?;
    let count = c.u32("layer count")?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let name = c.string("layer name")?;
        let kind = match c.u8("layer kind")? {
            0 => LayerKind::Conv,
            1 => LayerKind::DepthwiseConv,
            2 => LayerKind::FullyConnected,
            k => return Err(ModelIoError::Invalid(format!("unknown layer kind tag {k}"))),
        };
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = c.u32("layer dims")?;
        }
        let spec = LayerSpec {
            name,
            kind,
            out_channels: dims[0],
            in_channels: dims[1],
            kernel_h: dims[2],
            kernel_w: dims[3],
            input_h: dims[4],
            input_w: dims[5],
            stride: dims[6],
            weight_offset: c.u64("weight offset")?,
            weight_len: c.u64("weight length")?,
        };
        spec.validate()?;
        let scale = f64::from_bits(c.u64("scale")?);
        let mode = match c.u8("mode")? {
            0 => QuantMode::Swis,
            1 => QuantMode::SwisC,
            2 => QuantMode::LayerTrunc,
            m => return Err(ModelIoError::Invalid(format!("unknown mode tag {m}"))),
        };
        let group_size = c.u32("group size")?;
        if group_size == 0 {
            return Err(ModelIoError::Invalid("group size 0".into()));
        }
        let per_filter = c.u32("groups per filter")?;
        if per_filter != group_layout(&spec, group_size).groups_per_filter() {
            return Err(ModelIoError::Invalid(format!(
                "layer `{}`: {per_filter} groups per filter does not match dims",
                spec.name
            )));
        }
        let filter_shifts = c.take(spec.out_channels, "filter shifts")?.to_vec();
        if let Some(&n) = filter_shifts.iter().find(|&&n| n == 0 || n > bits) {
            return Err(ModelIoError::Invalid(format!("filter shift count {n}")));
        }
        let payload_len = c.u64("payload length")? as usize;
        let payload = c.take(payload_len, "group payload")?;
        let groups = decode_groups(payload, mode, bits, group_size, per_filter, &filter_shifts)?;
        layers.push(QuantizedLayer {
            spec,
            bits,
            scale,
            mode,
            group_size,
            filter_shifts,
            groups,
        });
    }
    if c.pos != bytes.len() {
        return Err(ModelIoError::Invalid(format!(
            "{} trailing bytes after last layer",
            bytes.len() - c.pos
        )));
    }
    Ok(QuantizedModel {
        model_name,
        bits,
        layers,
    })
}

pub fn save_quantized(model: &QuantizedModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_quantized(model)?;
    fs::write(path.as_ref(), bytes).map_err(|source| ModelIoError::Io {
        path: path.as_ref().to_path_buf(),
        source,
    })
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    let bytes = fs::read(path.as_ref()).map_err(|source| ModelIoError::Io {
        path: path.as_ref().to_path_buf(),
        source,
    })?;
    read_quantized(&bytes)
}
