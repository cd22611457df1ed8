//! Flow matching on flat latents.
//!
//! Convention: `z_t = (1 - t) z0 + t z1` with `z0` data and `z1` noise, so the
//! regression target is `z1 - z0` and sampling integrates from `t = 1` down to
//! a small `t_end`.

use crate::scoring::log_sum_exp;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dims differ: {0:?} vs {1:?}")]
    DimMismatch(Vec<usize>, Vec<usize>),
    #[error("t = {0} outside its allowed range")]
    TOutOfRange(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("tensor: {0}")]
    Tensor(String),
    #[error("sampler config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, FlowError> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(FlowError::Tensor(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Tensor("non-finite value".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::new(vec![data.len()], data).expect("finite vector")
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![0.0; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn same_dims(&self, other: &Tensor) -> Result<(), FlowError> {
        if self.dims != other.dims {
            return Err(FlowError::DimMismatch(self.dims.clone(), other.dims.clone()));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

const TNS_MAGIC: &[u8; 4] = b"TNS1";
const DTYPE_F64_LE: u32 = 1;

/// `.tns` encoding: magic, dtype, rank, dims, then values (all little-endian).
pub fn encode_tns(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.dims.len() + 8 * t.data.len());
    out.extend_from_slice(TNS_MAGIC);
    out.extend_from_slice(&DTYPE_F64_LE.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tns(bytes: &[u8]) -> Result<Tensor, FlowError> {
    let bad = |m: &str| FlowError::Tensor(m.to_owned());
    let u32_at = |at: usize| -> Result<u32, FlowError> {
        bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or_else(|| bad("truncated header"))
    };
    if bytes.get(..4) != Some(TNS_MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let dtype = u32_at(4)?;
    if dtype != DTYPE_F64_LE {
        return Err(FlowError::Tensor(format!("unsupported dtype code {dtype}")));
    }
    let rank = u32_at(8)? as usize;
    let dims = (0..rank).map(|i| u32_at(12 + 4 * i).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let start = 12 + 4 * rank;
    let n: usize = dims.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 8 * n {
        return Err(FlowError::Tensor(format!("payload holds {} bytes, dims need {}", payload.len(), 8 * n)));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(dims, data)
}

pub fn write_tns(path: &Path, t: &Tensor) -> Result<(), FlowError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_tns(t))?;
    Ok(())
}

pub fn read_tns(path: &Path) -> Result<Tensor, FlowError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_tns(&bytes)
}

pub fn interpolate(z0: &Tensor, z1: &Tensor, t: f64) -> Result<Tensor, FlowError> {
    z0.same_dims(z1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::TOutOfRange(t));
    }
    let data = z0.data.iter().zip(&z1.data).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    Ok(Tensor { dims: z0.dims.clone(), data })
}

pub fn fm_target(z0: &Tensor, z1: &Tensor) -> Result<Tensor, FlowError> {
    z0.same_dims(z1)?;
    let data = z0.data.iter().zip(&z1.data).map(|(a, b)| b - a).collect();
    Ok(Tensor { dims: z0.dims.clone(), data })
}

/// Per-element mean squared error against `z1 - z0`.
pub fn fm_loss(v_pred: &Tensor, z0: &Tensor, z1: &Tensor) -> Result<f64, FlowError> {
    let target = fm_target(z0, z1)?;
    v_pred.same_dims(&target)?;
    let s: f64 = v_pred.data.iter().zip(&target.data).map(|(v, g)| (v - g) * (v - g)).sum();
    Ok(s / target.len() as f64)
}

/// Posterior weights over data points given `z` at time `t`, assuming a
/// uniform prior over `dataset` and standard-normal noise.
pub fn oracle_weights(dataset: &[Tensor], z: &Tensor, t: f64) -> Result<Vec<f64>, FlowError> {
    if dataset.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(FlowError::TOutOfRange(t));
    }
    let logits = dataset
        .iter()
        .map(|x| {
            x.same_dims(z)?;
            let d2: f64 = z.data.iter().zip(&x.data).map(|(zi, xi)| (zi - (1.0 - t) * xi).powi(2)).sum();
            Ok(-d2 / (2.0 * t * t))
        })
        .collect::<Result<Vec<f64>, FlowError>>()?;
    let lse = log_sum_exp(&logits);
    Ok(logits.iter().map(|l| (l - lse).exp()).collect())
}

/// The exact minimizer of the flow-matching loss for a finite dataset:
/// a posterior-weighted mix of straight-line velocities `(z - x_i) / t`.
pub fn oracle_velocity(dataset: &[Tensor], z: &Tensor, t: f64) -> Result<Tensor, FlowError> {
    let w = oracle_weights(dataset, z, t)?;
    let mut v = vec![0.0; z.len()];
    for (wi, x) in w.iter().zip(dataset) {
        for ((vj, zj), xj) in v.iter_mut().zip(&z.data).zip(&x.data) {
            *vj += wi * (zj - xj) / t;
        }
    }
    Ok(Tensor { dims: z.dims.clone(), data: v })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMethod {
    Euler,
    Midpoint,
}

fn check_finite(z: &[f64], step: usize) -> Result<(), FlowError> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FlowError::NonFinite { step })
    }
}

fn axpy(z: &[f64], a: f64, v: &[f64]) -> Vec<f64> {
    z.iter().zip(v).map(|(zi, vi)| zi + a * vi).collect()
}

/// One integration step from `t` to `t - dt`.
pub fn step<F>(v_fn: &mut F, z: &Tensor, t: f64, dt: f64, method: SampleMethod, index: usize) -> Result<Tensor, FlowError>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor, FlowError>,
{
    let v = v_fn(z, t)?;
    z.same_dims(&v)?;
    check_finite(&v.data, index)?;
    let data = match method {
        SampleMethod::Euler => axpy(&z.data, -dt, &v.data),
        SampleMethod::Midpoint => {
            let half = Tensor { dims: z.dims.clone(), data: axpy(&z.data, -0.5 * dt, &v.data) };
            let vm = v_fn(&half, t - 0.5 * dt)?;
            check_finite(&vm.data, index)?;
            axpy(&z.data, -dt, &vm.data)
        }
    };
    check_finite(&data, index)?;
    Ok(Tensor { dims: z.dims.clone(), data })
}

/// Integrates `dz/dt = v(z, t)` backwards on a uniform grid from 1 to `t_end`.
pub fn sample<F>(mut v_fn: F, z_start: &Tensor, steps: usize, t_end: f64, method: SampleMethod) -> Result<Tensor, FlowError>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor, FlowError>,
{
    if steps == 0 {
        return Err(FlowError::Config("steps must be >= 1".into()));
    }
    if !(t_end > 0.0 && t_end < 1.0) {
        return Err(FlowError::TOutOfRange(t_end));
    }
    let dt = (1.0 - t_end) / steps as f64;
    let mut z = z_start.clone();
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        z = step(&mut v_fn, &z, t, dt, method, i)?;
    }
    Ok(z)
}
