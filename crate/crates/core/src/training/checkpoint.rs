//! Binary checkpoints. All integers and floats are little-endian.
//!
//! ```text
//! "HYPA"                      magic
//! u32                         format version
//! u64 + bytes                 JSON {"model": ModelConfig, "train": TrainConfig}
//! u64                         completed steps
//! u64                         optimizer step count
//! u64                         data seed (batch b is drawn from stream b + 1)
//! f64, u64                    running loss sum and its step count
//! u32                         parameter count, then per parameter:
//!   u32 + bytes               name
//!   u64                       offset into the blob, in values
//!   u32, u64 * rank           shape
//! u64                         blob length in values
//! f64 * len                   parameter values
//! f64 * len                   first moments
//! f64 * len                   second moments
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::model::{ModelConfig, RecursiveTransformer};

use super::{Adam, Result, TrainConfig, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HYPA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Configs {
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

/// Everything needed to resume a run or rebuild its model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: usize,
    pub optimizer_steps: u64,
    pub data_seed: u64,
    pub loss_sum: f64,
    pub loss_steps: usize,
    pub index: Vec<IndexEntry>,
    pub values: Vec<f64>,
    pub first_moments: Vec<f64>,
    pub second_moments: Vec<f64>,
}

impl Checkpoint {
    pub(crate) fn capture(
        model: &RecursiveTransformer,
        store: &ParamStore,
        adam: &Adam,
        train: &TrainConfig,
        step: usize,
        loss_sum: f64,
        loss_steps: usize,
    ) -> Self {
        let mut index = Vec::with_capacity(store.len());
        let mut values = Vec::with_capacity(store.num_scalars());
        for p in store.iter() {
            index.push(IndexEntry {
                name: p.name.clone(),
                offset: values.len(),
                shape: p.value.shape().to_vec(),
            });
            values.extend_from_slice(p.value.data());
        }
        Self {
            model: model.config().clone(),
            train: train.clone(),
            step,
            optimizer_steps: adam.t,
            data_seed: train.seed,
            loss_sum,
            loss_steps,
            index,
            values,
            first_moments: adam.m.concat(),
            second_moments: adam.v.concat(),
        }
    }

    /// Rebuilds the model with the stored parameters and optimizer moments.
    pub fn restore(&self) -> Result<(RecursiveTransformer, ParamStore, Adam)> {
        let bad = |m: String| TrainError::Checkpoint(m);
        if self.first_moments.len() != self.values.len() || self.second_moments.len() != self.values.len() {
            return Err(bad("moment blobs differ in length from the parameters".into()));
        }
        if self.data_seed != self.train.seed {
            return Err(bad(format!(
                "data seed {} disagrees with the configured seed {}",
                self.data_seed, self.train.seed
            )));
        }
        let (model, mut store) = RecursiveTransformer::init(self.model.clone(), 0)?;
        if store.len() != self.index.len() {
            return Err(bad(format!(
                "{} stored parameters, model has {}",
                self.index.len(),
                store.len()
            )));
        }
        let mut adam = Adam::new(&store);
        adam.t = self.optimizer_steps;
        for entry in &self.index {
            let id = store
                .get(&entry.name)
                .ok_or_else(|| bad(format!("unknown parameter {}", entry.name)))?;
            if store.value(id).shape() != entry.shape.as_slice() {
                return Err(bad(format!(
                    "{}: stored shape {:?}, model expects {:?}",
                    entry.name,
                    entry.shape,
                    store.value(id).shape()
                )));
            }
            let len = store.value(id).numel();
            let range = entry.offset..entry.offset + len;
            if range.end > self.values.len() {
                return Err(bad(format!("{} runs past the blob", entry.name)));
            }
            *store.value_mut(id) = Tensor::new(entry.shape.clone(), self.values[range.clone()].to_vec())
                .map_err(|e| bad(e.to_string()))?;
            adam.m[id.index()] = self.first_moments[range.clone()].to_vec();
            adam.v[id.index()] = self.second_moments[range].to_vec();
        }
        Ok((model, store, adam))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let configs = serde_json::to_vec(&Configs {
            model: self.model.clone(),
            train: self.train.clone(),
        })
        .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_u64(&mut out, configs.len() as u64)?;
        out.write_all(&configs)?;
        write_u64(&mut out, self.step as u64)?;
        write_u64(&mut out, self.optimizer_steps)?;
        write_u64(&mut out, self.data_seed)?;
        out.write_all(&self.loss_sum.to_le_bytes())?;
        write_u64(&mut out, self.loss_steps as u64)?;
        out.write_all(&(self.index.len() as u32).to_le_bytes())?;
        for e in &self.index {
            out.write_all(&(e.name.len() as u32).to_le_bytes())?;
            out.write_all(e.name.as_bytes())?;
            write_u64(&mut out, e.offset as u64)?;
            out.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                write_u64(&mut out, d as u64)?;
            }
        }
        write_u64(&mut out, self.values.len() as u64)?;
        for blob in [&self.values, &self.first_moments, &self.second_moments] {
            for v in blob.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = read_len(&mut input)?;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let configs: Configs =
            serde_json::from_slice(&json).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let step = read_len(&mut input)?;
        let optimizer_steps = read_u64(&mut input)?;
        let data_seed = read_u64(&mut input)?;
        let loss_sum = read_f64(&mut input)?;
        let loss_steps = read_len(&mut input)?;
        let count = read_u32(&mut input)? as usize;
        let mut index = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
            let offset = read_len(&mut input)?;
            let rank = read_u32(&mut input)? as usize;
            let shape = (0..rank).map(|_| read_len(&mut input)).collect::<Result<Vec<_>>>()?;
            index.push(IndexEntry { name, offset, shape });
        }
        let len = read_len(&mut input)?;
        let mut blobs = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| bad("blob too large"))?];
            input.read_exact(&mut bytes)?;
            let blob: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blobs.push(blob);
        }
        let second_moments = blobs.pop().expect("three blobs");
        let first_moments = blobs.pop().expect("three blobs");
        let values = blobs.pop().expect("three blobs");
        Ok(Self {
            model: configs.model,
            train: configs.train,
            step,
            optimizer_steps,
            data_seed,
            loss_sum,
            loss_steps,
            index,
            values,
            first_moments,
            second_moments,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to memory");
        out
    }
}

fn write_u64<W: Write>(out: &mut W, v: u64) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len<R: Read>(input: &mut R) -> Result<usize> {
    usize::try_from(read_u64(input)?).map_err(|_| TrainError::Checkpoint("length overflows usize".into()))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(input)?))
}
