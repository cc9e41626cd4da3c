use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default, PartialEq)]
struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Named parameter tensors plus the optimizer state that updates them.
#[derive(Clone, Debug, Default)]
pub struct ParamRegistry {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
    seed: u64,
    adam: AdamState,
}

impl PartialEq for ParamRegistry {
    /// Compares names, flags and values bit for bit; gradients and optimizer
    /// state are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.trainable == other.trainable
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape == b.shape
                    && a.values.iter().map(|x| x.to_bits()).eq(b.values.iter().map(|x| x.to_bits()))
            })
    }
}

impl ParamRegistry {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.adam.m.push(vec![0.0; tensor.len()]);
        self.adam.v.push(vec![0.0; tensor.len()]);
        self.tensors.push(tensor);
        self.trainable.push(trainable);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    /// Adds `grads` to the gradient buffer of every trainable parameter.
    /// Trainable parameters the gradients do not touch end up with a zero
    /// buffer.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if !self.trainable[i] {
                continue;
            }
            let buf = t.grad.get_or_insert_with(|| vec![0.0; t.values.len()]);
            if let Some(g) = &grads.0[i] {
                buf.iter_mut().zip(g).for_each(|(b, x)| *b += x);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// One Adam update from the stored gradients, which are then cleared.
    /// Parameters without a gradient buffer are left untouched.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for i in 0..self.tensors.len() {
            if !self.trainable[i] {
                continue;
            }
            let Some(grad) = self.tensors[i].grad.take() else { continue };
            let (m, v) = (&mut self.adam.m[i], &mut self.adam.v[i]);
            for (j, (x, g)) in self.tensors[i].values.iter_mut().zip(&grad).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Dense per-parameter gradients, `None` for parameters never reached.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads(pub(crate) Vec<Option<Vec<f64>>>);

impl ParamGrads {
    pub fn zeros_like(registry: &ParamRegistry) -> Self {
        Self(vec![None; registry.len()])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn add_slice(&mut self, id: ParamId, g: &[f64], scale: f64) {
        let buf = self.0[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
        buf.iter_mut().zip(g).for_each(|(b, x)| *b += scale * x);
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (i, g) in other.0.iter().enumerate() {
            if let Some(g) = g {
                self.add_slice(ParamId(i), g, scale);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    seed: u64,
    num_params: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

/// A registry plus free-form metadata read back from disk.
pub struct Checkpoint {
    pub registry: ParamRegistry,
    pub meta: serde_json::Value,
}

/// Binary checkpoint: a JSON header line, then per parameter the name,
/// trainable flag, shape and little-endian `f64` payload, then a SHA-256 of
/// everything before it.
pub fn write_checkpoint<W: Write>(registry: &ParamRegistry, meta: &serde_json::Value, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    let header = CheckpointHeader {
        version: 1,
        seed: registry.seed,
        num_params: registry.len(),
        meta: meta.clone(),
    };
    serde_json::to_writer(&mut buf, &header).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    buf.push(b'\n');
    for (i, t) in registry.tensors.iter().enumerate() {
        let name = registry.names[i].as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(registry.trainable[i] as u8);
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.values {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(TensorError::Checkpoint("truncated payload".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut reader = BufReader::new(input);
    let mut header_line = Vec::new();
    reader.read_until(b'\n', &mut header_line)?;
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if rest.len() < 32 {
        return Err(TensorError::Checkpoint("missing checksum".into()));
    }
    let (body, checksum) = rest.split_at(rest.len() - 32);
    let mut hasher = Sha256::new();
    hasher.update(&header_line);
    hasher.update(body);
    if hasher.finalize().as_slice() != checksum {
        return Err(TensorError::Checkpoint("checksum mismatch".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&header_line).map_err(|e| TensorError::Checkpoint(format!("header: {e}")))?;
    if header.version != 1 {
        return Err(TensorError::Checkpoint(format!("unsupported version {}", header.version)));
    }
    let mut registry = ParamRegistry::new(header.seed);
    let mut cur = Cursor { data: body, pos: 0 };
    for _ in 0..header.num_params {
        let n = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(n)?)
            .map_err(|e| TensorError::Checkpoint(e.to_string()))?
            .to_string();
        let trainable = cur.take(1)?[0] != 0;
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let values = (0..count)
            .map(|_| cur.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        registry.add(&name, Tensor::new(shape, values)?, trainable)?;
    }
    if cur.pos != body.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        registry,
        meta: header.meta,
    })
}
