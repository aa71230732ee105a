//! Checkpoint file: magic `SPTC`, u32 version, UTF-8 metadata block, named
//! tensors stored as `f32`, then optional Adam state.
//!
//! ```text
//! "SPTC" u32 version=1
//! u32 meta_len, meta bytes            (key=value lines)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 ndim, u32 dims.., f32 data
//! u8 has_optimizer
//! if 1: u64 step, f64 beta1, f64 beta2, f64 eps,
//!       per tensor: f32 first moment, f32 second moment
//! ```

use std::path::Path;

use super::{AdamConfig, AdamState, ParamStore, Real, Tensor};
use crate::binio::{Reader, Writer};
use crate::error::{read_file, write_file, FormatError, Result};

const MAGIC: &[u8; 4] = b"SPTC";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub meta: String,
    pub params: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

fn put_tensor<T: Real>(w: &mut Writer, t: &Tensor<T>) {
    for &x in t.data() {
        w.f32(x.f64() as f32);
    }
}

pub fn encode_checkpoint<T: Real>(params: &ParamStore<T>, optimizer: Option<&AdamState<T>>, meta: &str) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION).str(meta).len_u32(params.len());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.str(name).len_u32(t.shape().len());
        for &d in t.shape() {
            w.len_u32(d);
        }
        put_tensor(&mut w, t);
    }
    match optimizer {
        None => {
            w.u8(0);
        }
        Some(state) => {
            w.u8(1)
                .u64(state.step_count)
                .f64(state.config.beta1)
                .f64(state.config.beta2)
                .f64(state.config.epsilon);
            for (m, v) in state.first_moment.iter().zip(&state.second_moment) {
                put_tensor(&mut w, m);
                put_tensor(&mut w, v);
            }
        }
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let meta = r.str()?;
    let count = r.usize()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.str()?;
        let ndim = r.usize()?;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().product();
        let data = r.f32_vec(n)?;
        params.add(name, Tensor::new(shape, data)?)?;
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let step_count = r.u64()?;
            let config = AdamConfig {
                beta1: r.f64()?,
                beta2: r.f64()?,
                epsilon: r.f64()?,
            };
            let mut first_moment = Vec::with_capacity(count);
            let mut second_moment = Vec::with_capacity(count);
            for t in params.tensors() {
                let shape = t.shape().to_vec();
                first_moment.push(Tensor::new(shape.clone(), r.f32_vec(t.len())?)?);
                second_moment.push(Tensor::new(shape, r.f32_vec(t.len())?)?);
            }
            Some(AdamState {
                first_moment,
                second_moment,
                step_count,
                config,
            })
        }
        other => return Err(FormatError::Malformed(format!("optimizer flag {other}")).into()),
    };
    r.finish()?;
    Ok(Checkpoint {
        meta,
        params,
        optimizer,
    })
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    params: &ParamStore<T>,
    optimizer: Option<&AdamState<T>>,
    meta: &str,
) -> Result<()> {
    write_file(path, &encode_checkpoint(params, optimizer, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_optimizer() {
        let mut p = ParamStore::<f32>::new();
        p.add("spae.enc.0.weight", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-7, -9.0]).unwrap())
            .unwrap();
        p.add("spae.enc.0.bias", Tensor::new(vec![3], vec![0.25, 0.5, 0.75]).unwrap())
            .unwrap();
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let grads: Vec<_> = p.tensors().iter().map(|t| Tensor::full(t.shape().to_vec(), 0.5)).collect();
        adam.step(&mut p, &grads, 1e-3, 0.0).unwrap();

        let bytes = encode_checkpoint(&p, Some(&adam), "kind=test\n");
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.meta, "kind=test\n");
        assert_eq!(ck.params, p);
        assert_eq!(ck.optimizer.unwrap(), adam);
    }

    #[test]
    fn truncation_is_reported() {
        let mut p = ParamStore::<f32>::new();
        p.add("w", Tensor::zeros(vec![4, 4])).unwrap();
        let bytes = encode_checkpoint(&p, None, "");
        let err = decode_checkpoint(&bytes[..bytes.len() - 10]).err().unwrap();
        assert!(err.to_string().contains("truncated"));
    }
}
