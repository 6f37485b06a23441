//! Single-file model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HYPRCKPT"                   8 bytes
//! version                      u32
//! header length                u64
//! header                       UTF-8 JSON
//! tensor count                 u32
//! per tensor:
//!   name length                u16
//!   name                       UTF-8
//!   ndim                       u8
//!   dims                       ndim × u64
//!   payload                    numel × f32
//! SHA-256 of all bytes above   32 bytes
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::{LevelRange, Task};
use crate::error::{io_err, CheckpointError, Error, Result};
use crate::estimator::EstimatorNet;
use crate::hypernet::{HyperNetwork, MetaBlock};
use crate::model::HyperRestoreModel;
use crate::net::{ArchConfig, SharedWeights};
use crate::tensor::Tensor;
use crate::trainer::TrainMetadata;

pub const MAGIC: &[u8; 8] = b"HYPRCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const CONVOLUTION_CONVENTION: &str = "cross-correlation, zero padding";
const DIGEST_LEN: usize = 32;
/// Headers are small JSON documents; anything larger is corruption.
const MAX_HEADER_LEN: u64 = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: ArchConfig,
    pub task: Task,
    pub range: LevelRange,
    pub convolution: String,
    pub has_estimator: bool,
    #[serde(default)]
    pub training: Option<TrainMetadata>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: HyperRestoreModel,
    pub training: Option<TrainMetadata>,
}

impl Checkpoint {
    pub fn new(model: HyperRestoreModel, training: Option<TrainMetadata>) -> Self {
        Self { model, training }
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            arch: self.model.arch,
            task: self.model.task,
            range: self.model.range,
            convolution: CONVOLUTION_CONVENTION.to_string(),
            has_estimator: self.model.estimator.is_some(),
            training: self.training.clone(),
        }
    }

    /// Named tensors in file order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let m = &self.model;
        let mut out = Vec::new();
        out.extend(m.shared.named().into_iter().map(|(n, t)| (format!("shared.{n}"), t)));
        if let Some(e) = &m.estimator {
            out.extend(e.named().into_iter().map(|(n, t)| (format!("estimator.{n}"), t)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);

        let m = &self.model;
        let mut entries: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for b in m.hypernet.blocks() {
            let j = b.target_slot();
            entries.push((format!("meta.{j}.w"), b.kernel_shape().dims().to_vec(), b.w()));
            entries.push((format!("meta.{j}.b"), b.kernel_shape().dims().to_vec(), b.b()));
        }
        for (name, t) in self.tensors() {
            entries.push((name, t.shape().to_vec(), t.data()));
        }
        buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, dims, data) in entries {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(dims.len() as u8);
            for d in dims {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len = header_len(&bytes[..bytes.len().min(20)])?;
        let mut cur = Cursor { bytes, pos: 20, end: bytes.len() };
        let head = cur.take(len)?;
        if bytes.len() < cur.pos + DIGEST_LEN {
            return Err(CheckpointError::Truncated.into());
        }
        let body_end = bytes.len() - DIGEST_LEN;
        if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
            // A file cut short inside the tensor table also fails the digest;
            // tell the two apart by walking the table first.
            let mut walk = cur.clone();
            if read_table(&mut walk).is_err() || bytes.len() - walk.pos < DIGEST_LEN {
                return Err(CheckpointError::Truncated.into());
            }
            return Err(CheckpointError::ChecksumMismatch.into());
        }
        let header = decode_header(head)?;
        cur.end = body_end;
        let table = read_table(&mut cur)?;
        if cur.pos != body_end {
            return Err(malformed("trailing bytes after tensor table"));
        }
        let model = assemble(&header, table)?;
        Ok(Self { model, training: header.training })
    }

    /// Writes through a temporary file in the target directory and renames it
    /// into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(&bytes).map_err(io_err(path))?;
        tmp.as_file().sync_all().map_err(io_err(path))?;
        tmp.persist(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.error })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the header; tensor payloads are not touched.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut fixed = Vec::with_capacity(20);
    r.by_ref().take(20).read_to_end(&mut fixed).map_err(io_err(path))?;
    let len = header_len(&fixed)?;
    let mut head = vec![0u8; len];
    read_exact_or_truncated(&mut r, &mut head, path)?;
    decode_header(&head)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated.into()
        } else {
            io_err(path)(e)
        }
    })
}

fn malformed(msg: impl Into<String>) -> Error {
    CheckpointError::Malformed(msg.into()).into()
}

/// Checks magic and version in the first 20 bytes and returns the header length.
fn header_len(fixed: &[u8]) -> Result<usize> {
    let n = fixed.len().min(8);
    if fixed[..n] != MAGIC[..n] {
        return Err(CheckpointError::BadMagic.into());
    }
    if fixed.len() < 20 {
        return Err(CheckpointError::Truncated.into());
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version, expected: FORMAT_VERSION }.into());
    }
    let len = u64::from_le_bytes(fixed[12..20].try_into().expect("8 bytes"));
    if len > MAX_HEADER_LEN {
        return Err(malformed(format!("header length {len} exceeds {MAX_HEADER_LEN}")));
    }
    Ok(len as usize)
}

fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let h: CheckpointHeader = serde_json::from_slice(bytes).map_err(|e| malformed(format!("header: {e}")))?;
    if h.format_version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: h.format_version, expected: FORMAT_VERSION }.into());
    }
    if h.convolution != CONVOLUTION_CONVENTION {
        return Err(malformed(format!("unknown convolution convention '{}'", h.convolution)));
    }
    Ok(h)
}

#[derive(Clone)]
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let stop = self.pos.checked_add(n).filter(|&s| s <= self.end).ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..stop];
        self.pos = stop;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_table(cur: &mut Cursor<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    let count = cur.u32()? as usize;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let nlen = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(nlen)?).map_err(|_| malformed("tensor name is not UTF-8"))?.to_string();
        if !seen.insert(name.clone()) {
            return Err(malformed(format!("duplicate tensor '{name}'")));
        }
        let ndim = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(usize::try_from(cur.u64()?).map_err(|_| malformed("dimension overflows"))?);
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| malformed("tensor too large"))?;
        let raw = cur.take(numel.checked_mul(4).ok_or_else(|| malformed("tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(dims, data).map_err(|e| malformed(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

fn assemble(header: &CheckpointHeader, table: Vec<(String, Tensor<f32>)>) -> Result<HyperRestoreModel> {
    header.arch.validate().map_err(|e| malformed(e.to_string()))?;
    header.range.validate().map_err(|e| malformed(e.to_string()))?;
    let mut table: std::collections::HashMap<String, Tensor<f32>> = table.into_iter().collect();
    let mut take = |name: &str| table.remove(name).ok_or_else(|| malformed(format!("missing tensor '{name}'")));

    let shape = header.arch.resblock_kernel_shape();
    let mut blocks = Vec::new();
    for j in 0..header.arch.num_generated_kernels() {
        let w = take(&format!("meta.{j}.w"))?;
        let b = take(&format!("meta.{j}.b"))?;
        if w.shape() != shape.dims() || b.shape() != shape.dims() {
            return Err(malformed(format!("meta block {j} has the wrong shape")));
        }
        blocks.push(MetaBlock::new(j, shape, w.into_data(), b.into_data()).map_err(|e| malformed(e.to_string()))?);
    }
    let hypernet = HyperNetwork::new(blocks).map_err(|e| malformed(e.to_string()))?;

    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut shared = SharedWeights::init(&header.arch, &mut rng);
    for (name, slot) in shared.named_mut() {
        let t = take(&format!("shared.{name}"))?;
        if t.shape() != slot.shape() {
            return Err(malformed(format!("shared.{name} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }

    let estimator = if header.has_estimator {
        let names: Vec<String> = EstimatorNet::init(0, 0.0).named().into_iter().map(|(n, _)| n).collect();
        let ts = names.iter().map(|n| take(&format!("estimator.{n}"))).collect::<Result<Vec<_>>>()?;
        Some(EstimatorNet::from_tensors(ts).map_err(|e| malformed(e.to_string()))?)
    } else {
        None
    };
    if let Some(extra) = table.keys().min() {
        return Err(malformed(format!("unexpected tensor '{extra}'")));
    }
    Ok(HyperRestoreModel { arch: header.arch, task: header.task, range: header.range, hypernet, shared, estimator })
}
