//! Binary checkpoint: magic `MDCVAE\0`, u32 version, u32 tensor count, then
//! per tensor a u16-length name, u8 rank, u64 dims and row-major f64 data,
//! all little-endian, followed by a u32-length UTF-8 block of sorted
//! `key=value` lines echoing the training config and catalog shape.

use std::fs;
use std::path::Path;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Rng, Tensors};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 7] = b"MDCVAE\0";
pub const VERSION: u32 = 1;

fn layer_names(prefix: &str, dims: &[usize], out: &mut Vec<(String, Vec<usize>)>) {
    for (i, w) in dims.windows(2).enumerate() {
        out.push((format!("{prefix}.{i}.weight"), vec![w[1], w[0]]));
        out.push((format!("{prefix}.{i}.bias"), vec![w[1]]));
    }
}

/// Names and shapes in the order of `model.tensors()`.
fn tensor_layout(model: &Model) -> Vec<(String, Vec<usize>)> {
    let u = &model.user;
    let (j, k) = (u.spec.n_items, u.spec.k_v);
    let mut out = Vec::new();
    if u.first_weight.is_some() {
        out.push(("user.first_weight".to_string(), vec![j, k]));
    }
    out.push(("user.first_bias".to_string(), vec![k]));
    layer_names("user.encoder", &u.encoder.spec().layer_dims, &mut out);
    layer_names("user.decoder", &u.decoder.spec().layer_dims, &mut out);
    out.push(("user.item_emb".to_string(), vec![j, k]));
    out.push(("user.item_bias".to_string(), vec![j]));
    if let Some(item) = &model.item {
        layer_names("item.encoder", &item.encoder.spec().layer_dims, &mut out);
        layer_names("item.decoder", &item.decoder.spec().layer_dims, &mut out);
    }
    out
}

fn model_tensors(model: &Model) -> Vec<&[f64]> {
    let mut t = model.user.tensors();
    if let Some(item) = &model.item {
        t.extend(item.tensors());
    }
    t
}

fn model_tensors_mut(model: &mut Model) -> Vec<&mut [f64]> {
    let mut t = model.user.tensors_mut();
    if let Some(item) = &mut model.item {
        t.extend(item.tensors_mut());
    }
    t
}

fn echo(model: &Model) -> String {
    let mut lines: Vec<(String, String)> = model
        .config
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    lines.push(("n_items".into(), model.num_items().to_string()));
    lines.push((
        "s_dim".into(),
        model.s_dim().map_or("none".into(), |s| s.to_string()),
    ));
    lines.sort();
    lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let layout = tensor_layout(model);
    let tensors = model_tensors(model);
    debug_assert_eq!(layout.len(), tensors.len());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.len() as u32).to_le_bytes());
    for ((name, dims), data) in layout.iter().zip(tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let text = echo(model);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct RawTensor<'a> {
    name: String,
    dims: Vec<usize>,
    data: &'a [u8],
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()? as usize;
    let mut raw = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        raw.push(RawTensor {
            name,
            dims,
            data: r.take(n)?,
        });
    }
    let text_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    let mut config_text = String::new();
    let (mut n_items, mut s_dim) = (None, None);
    for line in text.lines() {
        match line.split_once('=') {
            Some(("n_items", v)) => n_items = v.parse::<usize>().ok(),
            Some(("s_dim", "none")) => s_dim = Some(None),
            Some(("s_dim", v)) => s_dim = v.parse::<usize>().ok().map(Some),
            _ => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    let (Some(n_items), Some(s_dim)) = (n_items, s_dim) else {
        return Err(Error::Checkpoint("config block lacks the catalog shape".into()));
    };
    let config = TrainConfig::from_text(&config_text)
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;

    let mut model = Model::new(config, n_items, s_dim, &mut Rng::new(0))
        .map_err(|e| Error::Checkpoint(format!("cannot rebuild model: {e}")))?;
    let layout = tensor_layout(&model);
    if layout.len() != raw.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            layout.len(),
            raw.len()
        )));
    }
    for ((name, dims), t) in layout.iter().zip(&raw) {
        if name != &t.name || dims != &t.dims {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name} {dims:?}, found {} {:?}",
                t.name, t.dims
            )));
        }
    }
    for (dst, t) in model_tensors_mut(&mut model).into_iter().zip(&raw) {
        for (v, chunk) in dst.iter_mut().zip(t.data.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path).map_err(|e| Error::read(path, e))?)
}
