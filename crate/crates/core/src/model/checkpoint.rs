//! Checkpoint container: a text header holding the architecture, then named
//! little-endian f32 tensors.

use std::fs;
use std::path::Path;

use super::{BasenConfig, BasenModel};
use crate::autodiff::{Real, Tensor};
use crate::config::{apply_all, parse_kv, KeyValue};
use crate::error::{BasenError, Result};

const MAGIC: &str = "BASEN-CKPT 1\n";

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BasenConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> BasenError {
    BasenError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_model<S: Real>(model: &BasenModel<S>) -> Self {
        Self {
            config: model.config().clone(),
            tensors: model
                .params()
                .iter()
                .map(|p| (p.name().to_owned(), p.value().cast()))
                .collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.as_bytes().to_vec();
        out.extend(self.config.to_kv_text().bytes());
        out.push(b'\n');
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            out.extend(format!("{name} shape={}\n", dims.join("x")).bytes());
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_bytes())
            .ok_or_else(|| bad("missing BASEN-CKPT 1 header"))?;
        let split = rest
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("header is not terminated by a blank line"))?;
        let header = std::str::from_utf8(&rest[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let mut config = BasenConfig::default();
        apply_all(&mut config, &parse_kv(header)?)?;
        config.validate()?;

        let mut body = &rest[split + 2..];
        let mut tensors = Vec::new();
        while !body.is_empty() {
            let nl = body
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated tensor header"))?;
            let line = std::str::from_utf8(&body[..nl]).map_err(|_| bad("tensor header is not UTF-8"))?;
            let (name, shape) = line
                .split_once(" shape=")
                .ok_or_else(|| bad(format!("bad tensor header {line:?}")))?;
            let shape = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad shape in {line:?}")))?;
            let n: usize = shape.iter().product();
            body = &body[nl + 1..];
            if body.len() < 4 * n {
                return Err(bad(format!("tensor {name} is truncated")));
            }
            let data = body[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            body = &body[4 * n..];
            tensors.push((name.to_owned(), Tensor::new(shape, data)?));
        }
        Ok(Self { config, tensors })
    }
}

pub fn save_checkpoint<S: Real>(path: impl AsRef<Path>, model: &BasenModel<S>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, Checkpoint::from_model(model).encode()).map_err(|e| BasenError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| BasenError::io(path, e))?;
    Checkpoint::decode(&bytes)
}

/// Rebuilds the network stored at `path`.
pub fn load_checkpoint<S: Real>(path: impl AsRef<Path>) -> Result<BasenModel<S>> {
    let ckpt = read_checkpoint(path)?;
    let mut model = BasenModel::new(ckpt.config.clone(), 0)?;
    model.load_params(&ckpt)?;
    Ok(model)
}

impl<S: Real> BasenModel<S> {
    /// Copies every tensor of `ckpt` into this model. The architecture must
    /// match and the tensor names and shapes must agree one to one.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.config != self.cfg {
            let ours = self.cfg.pairs();
            let diffs: Vec<String> = ckpt
                .config
                .pairs()
                .into_iter()
                .zip(ours)
                .filter(|(a, b)| a != b)
                .map(|((k, theirs), (_, ours))| format!("{k}: checkpoint {theirs}, model {ours}"))
                .collect();
            return Err(bad(format!("config mismatch: {}", diffs.join("; "))));
        }
        let mut problems = Vec::new();
        for p in self.store.iter() {
            match ckpt.tensors.iter().find(|(n, _)| n == p.name()) {
                None => problems.push(format!("missing {}", p.name())),
                Some((_, t)) if t.shape() != p.value().shape() => problems.push(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name(),
                    t.shape(),
                    p.value().shape()
                )),
                Some(_) => {}
            }
        }
        for (n, _) in &ckpt.tensors {
            if self.store.find(n).is_none() {
                problems.push(format!("unexpected {n}"));
            }
        }
        if !problems.is_empty() {
            return Err(bad(problems.join("; ")));
        }
        for (n, t) in &ckpt.tensors {
            let id = self.store.find(n).expect("checked above");
            *self.store.get_mut(id).value_mut() = t.cast();
        }
        Ok(())
    }
}
