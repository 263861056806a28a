//! Binary formats for embedding shards, checkpoints and anomaly maps, plus
//! binary PGM for masks and greyscale renderings.
//!
//! All integers and floats are little-endian. Readers load the whole file
//! and parse from memory; every length is checked against the bytes that
//! remain before anything is allocated, so corrupt headers surface as
//! [`FormatError`]s rather than panics or huge allocations.
//!
//! Shard layout:
//!
//! ```text
//! "ADNE" | u32 version=1 | u32 D | u32 flags (bit0: rows L2-normalized) | u64 record_count
//! per record:
//!   u32 id_len | id bytes | u32 grid_h | u32 grid_w | u8 has_mask | [u32 mask_len | mask bytes]
//!   grid_h·grid_w·D f32, row-major, patch (i, j) at row i·grid_w + j
//! ```
//!
//! Checkpoint layout:
//!
//! ```text
//! "DPMM" | u32 version=1 | u32 K | u32 D | u8 normalized_input | f64 alpha
//! K f64 sticks | K·D f64 means | K·D f64 vars | u8 has_stats
//! [K f64 p_bar | K·D f64 m_bar | K·D f64 c_bar | u32 batch_size]
//! ```
//!
//! Map layout: `"AMAP" | u32 version=1 | u32 H | u32 W | H·W f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, FormatError, Result};
use crate::mixture::{DpmmModel, EmbeddingBatch, SufficientStats};
use crate::score::AnomalyMap;

pub const SHARD_MAGIC: [u8; 4] = *b"ADNE";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DPMM";
pub const MAP_MAGIC: [u8; 4] = *b"AMAP";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_NORMALIZED: u32 = 1;

/// One image's patch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardRecord {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub mask_path: Option<String>,
    /// `(grid_h·grid_w) × D`, widened from the on-disk f32.
    pub data: Array2<f64>,
}

impl ShardRecord {
    pub fn new(
        image_id: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        mask_path: Option<String>,
        data: Array2<f64>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if data.nrows() != grid_h * grid_w {
            return Err(Error::dims(grid_h * grid_w, data.nrows()));
        }
        Ok(Self {
            image_id: image_id.into(),
            grid_h,
            grid_w,
            mask_path,
            data,
        })
    }
}

/// A shard file: records sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub dim: usize,
    pub normalized: bool,
    pub records: Vec<ShardRecord>,
}

impl Shard {
    /// Per-record embedding batches, flagged as normalized when the shard
    /// header says so.
    pub fn batches(&self) -> Result<Vec<EmbeddingBatch>> {
        self.records
            .iter()
            .map(|r| {
                if self.normalized {
                    EmbeddingBatch::new_normalized(r.data.clone())
                } else {
                    Ok(EmbeddingBatch::new(r.data.clone()))
                }
            })
            .collect()
    }
}

/// Model plus, optionally, the statistics needed to resume fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DpmmModel,
    pub stats: Option<SufficientStats>,
}

impl Checkpoint {
    /// Model and statistics for resuming; fails when stats were not saved.
    pub fn resume_state(self) -> Result<(DpmmModel, SufficientStats)> {
        match self.stats {
            Some(stats) => Ok((self.model, stats)),
            None => Err(FormatError::MissingStats.into()),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(what).into());
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice has length N"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn flag(&mut self, what: &'static str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(FormatError::Malformed(format!("{what} flag is {other}, expected 0 or 1")).into()),
        }
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed(format!("{what} is not UTF-8")).into())
    }

    /// Checks that `count` values of `width` bytes fit in what is left.
    fn reserve(&self, count: usize, width: usize, what: &'static str) -> Result<usize> {
        let bytes = count
            .checked_mul(width)
            .ok_or_else(|| FormatError::Overflow(format!("{what}: {count} values")))?;
        if bytes > self.remaining() {
            return Err(FormatError::Truncated(what).into());
        }
        Ok(bytes)
    }

    fn f32s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.reserve(count, 4, what)?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect())
    }

    fn f64s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.reserve(count, 8, what)?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found = self.array::<4>("magic")?;
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found }.into());
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(FormatError::Malformed(format!("{} trailing bytes", self.remaining())).into());
        }
        Ok(())
    }
}

fn checked_area(a: usize, b: usize, what: &str) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| FormatError::Overflow(format!("{what}: {a} x {b}")).into())
}

fn u32_field(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| FormatError::Overflow(format!("{what} = {value} exceeds u32")).into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, u32_field(s.len(), "string length")?);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_shard(shard: &Shard) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&SHARD_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, u32_field(shard.dim, "D")?);
    put_u32(&mut out, if shard.normalized { FLAG_NORMALIZED } else { 0 });
    out.extend_from_slice(&(shard.records.len() as u64).to_le_bytes());
    for (index, rec) in shard.records.iter().enumerate() {
        if rec.data.ncols() != shard.dim {
            return Err(FormatError::RecordDim {
                index,
                expected: shard.dim,
                found: rec.data.ncols(),
            }
            .into());
        }
        if rec.data.nrows() != rec.grid_h * rec.grid_w {
            return Err(Error::dims(rec.grid_h * rec.grid_w, rec.data.nrows()));
        }
        put_string(&mut out, &rec.image_id)?;
        put_u32(&mut out, u32_field(rec.grid_h, "grid_h")?);
        put_u32(&mut out, u32_field(rec.grid_w, "grid_w")?);
        match &rec.mask_path {
            Some(p) => {
                out.push(1);
                put_string(&mut out, p)?;
            }
            None => out.push(0),
        }
        for v in rec.data.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_shard(bytes: &[u8]) -> Result<Shard> {
    let mut r = Reader::new(bytes);
    r.header(SHARD_MAGIC)?;
    let dim = r.u32("D")? as usize;
    let flags = r.u32("flags")?;
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(FormatError::Malformed(format!("unknown shard flags {flags:#x}")).into());
    }
    let count = r.u64("record count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let image_id = r.string("image id")?;
        let grid_h = r.u32("grid_h")? as usize;
        let grid_w = r.u32("grid_w")? as usize;
        let mask_path = if r.flag("has_mask")? {
            Some(r.string("mask path")?)
        } else {
            None
        };
        let rows = checked_area(grid_h, grid_w, "patch grid")?;
        let values = r.f32s(checked_area(rows, dim, "record data")?, "record data")?;
        let data = Array2::from_shape_vec((rows, dim), values).expect("length checked above");
        records.push(
            ShardRecord::new(image_id, grid_h, grid_w, mask_path, data)
                .map_err(|e| FormatError::Malformed(e.to_string()))?,
        );
    }
    r.finish()?;
    Ok(Shard {
        dim,
        normalized: flags & FLAG_NORMALIZED != 0,
        records,
    })
}

pub fn write_shard(path: &Path, shard: &Shard) -> Result<()> {
    write_atomic(path, &encode_shard(shard)?)
}

pub fn read_shard(path: &Path) -> Result<Shard> {
    decode_shard(&fs::read(path)?)
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, u32_field(m.num_components(), "K")?);
    put_u32(&mut out, u32_field(m.dim(), "D")?);
    out.push(m.normalized_input() as u8);
    out.extend_from_slice(&m.alpha().to_le_bytes());
    put_f64s(&mut out, m.sticks());
    put_f64s(&mut out, m.means());
    put_f64s(&mut out, m.vars());
    match &ckpt.stats {
        Some(s) => {
            if s.p_bar.len() != m.num_components()
                || s.m_bar.dim() != m.means().dim()
                || s.c_bar.dim() != m.means().dim()
            {
                return Err(Error::invalid("sufficient statistics do not match the model shape"));
            }
            out.push(1);
            put_f64s(&mut out, &s.p_bar);
            put_f64s(&mut out, &s.m_bar);
            put_f64s(&mut out, &s.c_bar);
            put_u32(&mut out, u32_field(s.batch_size, "batch_size")?);
        }
        None => out.push(0),
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC)?;
    let k = r.u32("K")? as usize;
    let d = r.u32("D")? as usize;
    let normalized = r.flag("normalized_input")?;
    let alpha = r.f64("alpha")?;
    let kd = checked_area(k, d, "K x D")?;
    let sticks = Array1::from(r.f64s(k, "sticks")?);
    let means = Array2::from_shape_vec((k, d), r.f64s(kd, "means")?).expect("length checked");
    let vars = Array2::from_shape_vec((k, d), r.f64s(kd, "vars")?).expect("length checked");
    let model = DpmmModel::new(means, vars, sticks, alpha, normalized)
        .map_err(|e| FormatError::Malformed(format!("invalid model: {e}")))?;
    let stats = if r.flag("has_stats")? {
        let p_bar = Array1::from(r.f64s(k, "p_bar")?);
        let m_bar = Array2::from_shape_vec((k, d), r.f64s(kd, "m_bar")?).expect("length checked");
        let c_bar = Array2::from_shape_vec((k, d), r.f64s(kd, "c_bar")?).expect("length checked");
        let batch_size = r.u32("batch_size")? as usize;
        Some(SufficientStats {
            p_bar,
            m_bar,
            c_bar,
            batch_size,
        })
    } else {
        None
    };
    r.finish()?;
    Ok(Checkpoint { model, stats })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn encode_map(map: &AnomalyMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * map.scores.len());
    out.extend_from_slice(&MAP_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, u32_field(map.height(), "H")?);
    put_u32(&mut out, u32_field(map.width(), "W")?);
    for v in map.scores.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8], source_id: impl Into<String>) -> Result<AnomalyMap> {
    let mut r = Reader::new(bytes);
    r.header(MAP_MAGIC)?;
    let h = r.u32("H")? as usize;
    let w = r.u32("W")? as usize;
    let values = r.f32s(checked_area(h, w, "map")?, "map data")?;
    r.finish()?;
    let scores = Array2::from_shape_vec((h, w), values).expect("length checked");
    AnomalyMap::new(scores, source_id).map_err(|e| FormatError::Malformed(e.to_string()).into())
}

pub fn write_map(path: &Path, map: &AnomalyMap) -> Result<()> {
    write_atomic(path, &encode_map(map)?)
}

/// Reads a map; its source id is the file stem.
pub fn read_map(path: &Path) -> Result<AnomalyMap> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_map(&fs::read(path)?, id)
}

/// Binary (P5) greyscale PGM with maxval 255.
pub fn encode_pgm(pixels: &Array2<u8>) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter());
    out
}

/// Parses a P5 PGM, returning samples rescaled to 0–255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Array2<u8>> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(FormatError::Truncated("PGM header").into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            pos += 1;
        }
        String::from_utf8(bytes[start..pos].to_vec())
            .map_err(|_| FormatError::Malformed(format!("PGM {what} is not ASCII")).into())
    };
    let magic = token("magic")?;
    if magic != "P5" {
        return Err(FormatError::Malformed(format!("PGM magic {magic:?}, expected \"P5\"")).into());
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token(what)?;
        t.parse()
            .map_err(|_| FormatError::Malformed(format!("PGM {what} {t:?} is not a number")).into())
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if !(1..=65535).contains(&maxval) || w == 0 || h == 0 {
        return Err(FormatError::Malformed(format!("PGM header {w}x{h} maxval {maxval}")).into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let width = if maxval > 255 { 2 } else { 1 };
    let count = checked_area(w, h, "PGM raster")?;
    let need = checked_area(count, width, "PGM raster")?;
    let raster = bytes
        .get(pos..)
        .filter(|rest| rest.len() >= need)
        .ok_or(FormatError::Truncated("PGM raster"))?;
    let scale = |v: usize| ((v * 255 + maxval / 2) / maxval) as u8;
    let samples: Vec<u8> = if width == 1 {
        raster[..need].iter().map(|&v| scale(v as usize)).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|c| scale(u16::from_be_bytes([c[0], c[1]]) as usize))
            .collect()
    };
    Ok(Array2::from_shape_vec((h, w), samples).expect("length checked"))
}

pub fn write_pgm(path: &Path, pixels: &Array2<u8>) -> Result<()> {
    write_atomic(path, &encode_pgm(pixels))
}

pub fn write_mask_pgm(path: &Path, mask: &Array2<bool>) -> Result<()> {
    write_pgm(path, &mask.mapv(|m| if m { 255 } else { 0 }))
}

/// Reads a mask; samples above 127 (on the 0–255 scale) are anomalous.
pub fn read_mask_pgm(path: &Path) -> Result<Array2<bool>> {
    Ok(decode_pgm(&fs::read(path)?)?.mapv(|v| v > 127))
}

/// Min–max scales a map to 0–255. A constant map renders black.
pub fn render_map(map: &AnomalyMap) -> Array2<u8> {
    let lo = map.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Array2::zeros(map.scores.dim());
    }
    map.scores
        .mapv(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn render_map_pgm(map: &AnomalyMap, path: &Path) -> Result<()> {
    write_pgm(path, &render_map(map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_shard() -> Shard {
        Shard {
            dim: 2,
            normalized: false,
            records: vec![
                ShardRecord::new("a/img0.png", 1, 2, None, array![[1.5, -2.0], [0.25, 3.0]]).unwrap(),
                ShardRecord::new("b", 2, 1, Some("masks/b.pgm".into()), array![[0.0, 1.0], [1.0, 0.0]]).unwrap(),
            ],
        }
    }

    #[test]
    fn shard_round_trip() {
        let s = sample_shard();
        let bytes = encode_shard(&s).unwrap();
        assert_eq!(decode_shard(&bytes).unwrap(), s);
    }

    #[test]
    fn empty_shard_is_header_only() {
        let s = Shard {
            dim: 384,
            normalized: true,
            records: vec![],
        };
        let bytes = encode_shard(&s).unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"ADNE");
        assert_eq!(decode_shard(&bytes).unwrap(), s);
    }

    #[test]
    fn shard_rejects_inconsistent_dim() {
        let mut s = sample_shard();
        s.dim = 3;
        assert!(matches!(
            encode_shard(&s),
            Err(Error::Format(FormatError::RecordDim { index: 0, .. }))
        ));
    }

    #[test]
    fn shard_guards() {
        let mut bytes = encode_shard(&sample_shard()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_shard(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        bytes[4] = 2;
        assert!(matches!(
            decode_shard(&bytes),
            Err(Error::Format(FormatError::UnsupportedVersion(2)))
        ));
    }

    #[test]
    fn huge_counts_do_not_allocate() {
        let mut bytes = encode_shard(&sample_shard()).unwrap();
        // Record count far beyond the data present.
        bytes[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            decode_shard(&bytes),
            Err(Error::Format(FormatError::Truncated(_)))
        ));
        // A record declaring a 2^32-scale grid.
        let mut bytes = encode_shard(&sample_shard()).unwrap();
        let grid_at = 24 + 4 + "a/img0.png".len();
        bytes[grid_at..grid_at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[grid_at + 4..grid_at + 8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_shard(&bytes).is_err());
    }

    fn sample_checkpoint(with_stats: bool) -> Checkpoint {
        let model = DpmmModel::new(
            array![[0.1, 0.2], [-3.0, 1e-300]],
            array![[1.0, 2.0], [1e-6, 5.5]],
            array![0.3, 1.0],
            2.75,
            true,
        )
        .unwrap();
        let stats = with_stats.then(|| SufficientStats {
            p_bar: array![0.25, 0.75],
            m_bar: array![[1.0, 2.0], [3.0, 4.0]],
            c_bar: array![[5.0, 6.0], [7.0, 8.0]],
            batch_size: 12288,
        });
        Checkpoint { model, stats }
    }

    #[test]
    fn checkpoint_round_trip() {
        for with_stats in [true, false] {
            let c = sample_checkpoint(with_stats);
            let bytes = encode_checkpoint(&c).unwrap();
            assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
        }
        assert!(sample_checkpoint(true).resume_state().is_ok());
        assert!(matches!(
            sample_checkpoint(false).resume_state(),
            Err(Error::Format(FormatError::MissingStats))
        ));
    }

    #[test]
    fn checkpoint_version_guard() {
        let mut bytes = encode_checkpoint(&sample_checkpoint(false)).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn checkpoint_truncation_is_an_error() {
        let bytes = encode_checkpoint(&sample_checkpoint(true)).unwrap();
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn map_round_trip() {
        let m = AnomalyMap::new(array![[0.5, -1.25, 3.0]], "img").unwrap();
        let back = decode_map(&encode_map(&m).unwrap(), "img").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pgm_mask_and_render() {
        let all = Array2::from_elem((3, 2), 255u8);
        assert!(decode_pgm(&encode_pgm(&all)).unwrap().iter().all(|&v| v > 127));

        let with_comment = b"P5\n# comment\n2 1\n255\n\x00\xff".to_vec();
        assert_eq!(decode_pgm(&with_comment).unwrap(), array![[0u8, 255]]);

        let binary = b"P5 2 1 1\n\x00\x01".to_vec();
        assert_eq!(decode_pgm(&binary).unwrap(), array![[0u8, 255]]);

        let flat = AnomalyMap::new(Array2::from_elem((2, 2), 0.7), "").unwrap();
        assert!(render_map(&flat).iter().all(|&v| v == 0));
        let ramp = AnomalyMap::new(array![[0.0, 0.5, 1.0]], "").unwrap();
        assert_eq!(render_map(&ramp), array![[0u8, 128, 255]]);
    }

    #[test]
    fn pgm_guards() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n4").is_err());
        assert!(decode_pgm(b"P5\n99999999999 99999999999\n255\n").is_err());
        assert!(decode_pgm(b"P5\n1 1\n0\n\x00").is_err());
    }
}
