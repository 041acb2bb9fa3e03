//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "KGEMBED\0"
//! version  u32
//! kind     u32      model kind tag
//! dim      u64
//! entities u64
//! relations u64
//! norm     u32
//! flags    u32      bit 0: masked, bit 1: sparse values
//! ```
//!
//! A dense body follows with one f32 array per table (entity, relation,
//! projection when present). Masked checkpoints then carry the pruning ratio
//! and threshold as two f64 values and one mask per table. Sparse
//! checkpoints carry, per table, the mask followed by the kept values only.
//!
//! A mask is one encoding byte and a u64 payload length. Encoding 0 is a
//! bitmap (bit set = kept, least significant bit first); encoding 1 is a
//! run-length list of LEB128 lengths alternating pruned and kept runs,
//! starting with a (possibly empty) pruned run. The smaller encoding is
//! written.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, ModelKind, NormKind, Table};
use crate::prune::PruneMask;

pub const MAGIC: &[u8; 8] = b"KGEMBED\0";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 48;
pub const FLAG_MASKED: u32 = 0x1;
pub const FLAG_SPARSE: u32 = 0x2;
/// Upper bound on the parameter count a checkpoint may declare.
pub const MAX_PARAMETERS: u64 = 1 << 28;

const MASK_BITMAP: u8 = 0;
const MASK_RUNS: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub mask: Option<PruneMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Dense,
    /// Dense values plus masks.
    Masked,
    /// Masks plus kept values.
    Sparse,
}

struct Header {
    kind: ModelKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    norm: NormKind,
    flags: u32,
}

fn table_lens(kind: ModelKind, dim: u64, entities: u64, relations: u64) -> Option<Vec<(Table, usize)>> {
    let d = usize::try_from(dim).ok()?;
    let ew = kind.entity_width(d) as u64;
    let rw = kind.relation_width(d) as u64;
    let mut out = vec![(Table::Entity, entities.checked_mul(ew)?), (Table::Relation, relations.checked_mul(rw)?)];
    if kind.has_projection() {
        out.push((Table::Projection, relations.checked_mul(dim.checked_mul(dim)?)?));
    }
    let total = out.iter().try_fold(0u64, |a, (_, n)| a.checked_add(*n))?;
    if total > MAX_PARAMETERS {
        return None;
    }
    Some(out.into_iter().map(|(t, n)| (t, n as usize)).collect())
}

/// Serializes `model`. `Masked` and `Sparse` require a mask.
pub fn encode(model: &EmbeddingModel, mask: Option<&PruneMask>, encoding: Encoding) -> Result<Vec<u8>> {
    let mask = match (encoding, mask) {
        (Encoding::Dense, _) => None,
        (_, Some(m)) => {
            m.check_shape(model)?;
            Some(m)
        }
        (_, None) => return Err(Error::Config("masked checkpoints need a mask".into())),
    };
    let flags = match encoding {
        Encoding::Dense => 0,
        Encoding::Masked => FLAG_MASKED,
        Encoding::Sparse => FLAG_MASKED | FLAG_SPARSE,
    };
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.kind().tag().to_le_bytes());
    out.extend_from_slice(&(model.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(model.num_entities() as u64).to_le_bytes());
    out.extend_from_slice(&(model.num_relations() as u64).to_le_bytes());
    out.extend_from_slice(&model.norm().tag().to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());

    match (encoding, mask) {
        (Encoding::Sparse, Some(m)) => {
            out.extend_from_slice(&m.pruning_ratio.to_le_bytes());
            out.extend_from_slice(&m.threshold.to_le_bytes());
            for table in model.tables() {
                let keep = m.keep(table);
                write_mask(&mut out, keep);
                for (v, k) in model.table(table).iter().zip(keep) {
                    if *k {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        _ => {
            for table in model.tables() {
                for v in model.table(table) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            if let Some(m) = mask {
                out.extend_from_slice(&m.pruning_ratio.to_le_bytes());
                out.extend_from_slice(&m.threshold.to_le_bytes());
                for table in model.tables() {
                    write_mask(&mut out, m.keep(table));
                }
            }
        }
    }
    Ok(out)
}

fn write_mask(out: &mut Vec<u8>, keep: &[bool]) {
    let bitmap_len = keep.len().div_ceil(8);
    let runs = run_lengths(keep);
    let runs_len: usize = runs.iter().map(|&r| leb128_len(r)).sum();
    if runs_len < bitmap_len {
        out.push(MASK_RUNS);
        out.extend_from_slice(&(runs_len as u64).to_le_bytes());
        for r in runs {
            write_leb128(out, r);
        }
    } else {
        out.push(MASK_BITMAP);
        out.extend_from_slice(&(bitmap_len as u64).to_le_bytes());
        let start = out.len();
        out.resize(start + bitmap_len, 0);
        for (i, k) in keep.iter().enumerate() {
            if *k {
                out[start + i / 8] |= 1 << (i % 8);
            }
        }
    }
}

/// Alternating pruned/kept run lengths, starting with pruned.
fn run_lengths(keep: &[bool]) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &k in keep {
        if k == current {
            len += 1;
        } else {
            runs.push(len);
            current = k;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn leb128_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

fn write_leb128(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7f) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn leb128(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8("mask run")?;
            let bits = (b & 0x7f) as u64;
            if shift == 63 && bits > 1 {
                return Err(Error::Format("mask run overflows".into()));
            }
            v |= bits << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Format("mask run overflows".into()))
    }
}

fn read_header(r: &mut Reader) -> Result<(Header, Vec<(Table, usize)>)> {
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind_tag = r.u32("kind")?;
    let kind = ModelKind::from_tag(kind_tag).ok_or_else(|| Error::Format(format!("unknown model kind tag {kind_tag}")))?;
    let dim = r.u64("dim")?;
    let entities = r.u64("entity count")?;
    let relations = r.u64("relation count")?;
    let norm_tag = r.u32("norm")?;
    let norm = NormKind::from_tag(norm_tag).ok_or_else(|| Error::Format(format!("unknown norm tag {norm_tag}")))?;
    let flags = r.u32("flags")?;
    if flags & !(FLAG_MASKED | FLAG_SPARSE) != 0 || flags == FLAG_SPARSE {
        return Err(Error::Format(format!("invalid flags {flags:#x}")));
    }
    if dim == 0 || entities == 0 || relations == 0 {
        return Err(Error::Format("zero-sized model".into()));
    }
    let lens = table_lens(kind, dim, entities, relations)
        .ok_or_else(|| Error::Format("declared model exceeds the parameter limit".into()))?;
    let header = Header {
        kind,
        dim: dim as usize,
        num_entities: entities as usize,
        num_relations: relations as usize,
        norm,
        flags,
    };
    Ok((header, lens))
}

fn read_mask(r: &mut Reader, n: usize) -> Result<Vec<bool>> {
    let encoding = r.u8("mask encoding")?;
    let len = r.u64("mask length")?;
    if len > r.remaining() as u64 {
        return Err(Error::Format("mask payload exceeds checkpoint".into()));
    }
    let payload = r.take(len as usize, "mask")?;
    match encoding {
        MASK_BITMAP => {
            if payload.len() != n.div_ceil(8) {
                return Err(Error::Format("mask bitmap has the wrong length".into()));
            }
            if !n.is_multiple_of(8) && payload[payload.len() - 1] >> (n % 8) != 0 {
                return Err(Error::Format("mask bitmap has stray padding bits".into()));
            }
            Ok((0..n).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect())
        }
        MASK_RUNS => {
            let mut sub = Reader { bytes: payload, pos: 0 };
            let mut keep = Vec::with_capacity(n);
            let mut value = false;
            while sub.remaining() > 0 {
                let run = sub.leb128()?;
                if run > (n - keep.len()) as u64 {
                    return Err(Error::Format("mask runs exceed table size".into()));
                }
                keep.resize(keep.len() + run as usize, value);
                value = !value;
            }
            if keep.len() != n {
                return Err(Error::Format("mask runs do not cover the table".into()));
            }
            Ok(keep)
        }
        other => Err(Error::Format(format!("unknown mask encoding {other}"))),
    }
}

/// Parses a checkpoint produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let (h, lens) = read_header(&mut r)?;
    let masked = h.flags & FLAG_MASKED != 0;
    let sparse = h.flags & FLAG_SPARSE != 0;
    let mut values: Vec<Vec<f32>> = Vec::with_capacity(lens.len());
    let mut masks: Vec<(Table, Vec<bool>)> = Vec::new();
    let mut ratio_threshold = (0.0, 0.0);

    if sparse {
        ratio_threshold = (r.f64("pruning ratio")?, r.f64("threshold")?);
        for &(table, n) in &lens {
            let keep = read_mask(&mut r, n)?;
            let kept = keep.iter().filter(|k| **k).count();
            let packed = r.f32s(kept, "kept values")?;
            let mut dense = vec![0.0f32; n];
            let mut it = packed.into_iter();
            for (slot, k) in dense.iter_mut().zip(&keep) {
                if *k {
                    *slot = it.next().expect("counted");
                }
            }
            values.push(dense);
            masks.push((table, keep));
        }
    } else {
        let total: usize = lens.iter().map(|(_, n)| n).sum();
        if total.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(Error::Format("truncated checkpoint body".into()));
        }
        for &(_, n) in &lens {
            values.push(r.f32s(n, "parameters")?);
        }
        if masked {
            ratio_threshold = (r.f64("pruning ratio")?, r.f64("threshold")?);
            for &(table, n) in &lens {
                masks.push((table, read_mask(&mut r, n)?));
            }
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite parameter".into()));
    }

    let mut tables = values.into_iter();
    let entities = tables.next().expect("entity table");
    let relations = tables.next().expect("relation table");
    let projections = tables.next();
    let model = EmbeddingModel::from_tables(h.kind, h.dim, h.norm, h.num_entities, h.num_relations, entities, relations, projections)?;
    let mask = if masked {
        let (pruning_ratio, threshold) = ratio_threshold;
        let mask = PruneMask::from_parts(masks, pruning_ratio, threshold);
        if !mask.is_consistent_with(&model) {
            return Err(Error::Format("masked parameter is nonzero".into()));
        }
        Some(mask)
    } else {
        None
    };
    Ok(Checkpoint { model, mask })
}

pub fn save(path: impl AsRef<Path>, model: &EmbeddingModel, mask: Option<&PruneMask>, encoding: Encoding) -> Result<usize> {
    let path = path.as_ref();
    let bytes = encode(model, mask, encoding)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
