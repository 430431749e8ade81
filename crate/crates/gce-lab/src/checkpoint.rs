//! Self-describing binary containers for named tensors.
//!
//! Two magics share one tensor-section codec:
//!
//! * `GCECKPT1` — a model checkpoint: architecture descriptor followed by
//!   the parameter tensors.
//! * `GCETENS1` — a bare named-tensor container, used for exported
//!   adversarial batches.
//!
//! All counts and dimensions are little-endian `u32`; element data is
//! little-endian IEEE-754 `f64`. Round-trips are bitwise.

use crate::error::{Error, Result};
use crate::models::{Arch, ModelSpec, ParamSet};
use crate::tensor::RawTensor;
use std::fs;
use std::io::Write;
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 8] = b"GCECKPT1";
const TENSORS_MAGIC: &[u8; 8] = b"GCETENS1";

/// Training provenance stored inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    /// Loss the model was trained with (`xe`, `gce`, `cot`, ...).
    pub loss_kind: String,
    /// Guiding exponent when applicable, `NaN` bits preserved otherwise.
    pub alpha: f64,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn new(loss_kind: &str, alpha: f64, seed: u64) -> Self {
        CheckpointMeta {
            loss_kind: loss_kind.to_string(),
            alpha,
            seed,
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Format(format!("{}: truncated container", self.path.display()))
        })?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format(format!("{}: non-utf8 name", self.path.display())))
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.path.display(),
                self.bytes.len() - self.pos
            )))
        }
    }
}

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_string(buf: &mut Vec<u8>, s: &str) {
    push_u32(buf, s.len());
    buf.extend_from_slice(s.as_bytes());
}

fn encode_tensors(buf: &mut Vec<u8>, entries: &[(String, RawTensor)]) {
    push_u32(buf, entries.len());
    for (name, tensor) in entries {
        push_string(buf, name);
        push_u32(buf, tensor.shape.len());
        for &d in &tensor.shape {
            push_u32(buf, d);
        }
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn decode_tensors(cur: &mut Cursor) -> Result<Vec<(String, RawTensor)>> {
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = cur.string()?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = cur.f64_vec(numel)?;
        entries.push((name, RawTensor { shape, data }));
    }
    Ok(entries)
}

fn encode_spec(buf: &mut Vec<u8>, spec: &ModelSpec) {
    buf.push(match spec.arch {
        Arch::Lenet5 => 0,
        Arch::Mlp => 1,
    });
    push_u32(buf, spec.classes);
    for &d in &spec.input_shape {
        push_u32(buf, d);
    }
    push_u32(buf, spec.mlp_widths.len());
    for &w in &spec.mlp_widths {
        push_u32(buf, w);
    }
}

fn decode_spec(cur: &mut Cursor) -> Result<ModelSpec> {
    let arch = match cur.take(1)?[0] {
        0 => Arch::Lenet5,
        1 => Arch::Mlp,
        other => {
            return Err(Error::Format(format!(
                "{}: unknown architecture tag {other}",
                cur.path.display()
            )))
        }
    };
    let classes = cur.u32()? as usize;
    let input_shape = [
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    ];
    let widths_len = cur.u32()? as usize;
    let mut mlp_widths = Vec::with_capacity(widths_len);
    for _ in 0..widths_len {
        mlp_widths.push(cur.u32()? as usize);
    }
    Ok(ModelSpec {
        arch,
        input_shape,
        classes,
        mlp_widths,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn save_checkpoint(
    path: &Path,
    spec: &ModelSpec,
    params: &ParamSet,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    encode_spec(&mut buf, spec);
    push_string(&mut buf, &meta.loss_kind);
    buf.extend_from_slice(&meta.alpha.to_le_bytes());
    buf.extend_from_slice(&meta.seed.to_le_bytes());
    encode_tensors(&mut buf, params.entries());
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ParamSet, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = cur.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint (magic {magic:?})",
            path.display()
        )));
    }
    let spec = decode_spec(&mut cur)?;
    let loss_kind = cur.string()?;
    let alpha = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let entries = decode_tensors(&mut cur)?;
    cur.done()?;
    Ok((
        spec,
        ParamSet::from_entries(entries),
        CheckpointMeta {
            loss_kind,
            alpha,
            seed,
        },
    ))
}

/// Saves a bare named-tensor container (adversarial batches, features).
pub fn save_tensors(path: &Path, entries: &[(String, RawTensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TENSORS_MAGIC);
    encode_tensors(&mut buf, entries);
    write_atomic(path, &buf)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, RawTensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = cur.take(8)?;
    if magic != TENSORS_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a tensor container (magic {magic:?})",
            path.display()
        )));
    }
    let entries = decode_tensors(&mut cur)?;
    cur.done()?;
    Ok(entries)
}
