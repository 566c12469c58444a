//! Versioned model container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "DLMMODEL" | u32 version | i8 label of class 0 (always -1)
//! u32 input_dim | u32 n_stem | u32 x n_stem widths | u32 block_width | u32 n_blocks
//! u32 n_tail | u32 x n_tail widths | u32 output_dim | f64 bn_eps
//! f64 input mean (dBm) | f64 input std (dBm) | u64 parameter count
//! per hidden layer: W[fan_in x fan_out] b gamma beta running_mean running_var (f32)
//! output layer: W[fan_in x 10] b (f32)
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{BatchNorm, Dense, ModelSpec, PolicyModel, Real, Unit};
use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::phy::IDLE_LABEL;
use crate::trace::ByteReader;

pub const MODEL_MAGIC: &[u8; 8] = b"DLMMODEL";
pub const MODEL_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s<'a, F: Real + 'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a F>) {
    for v in values {
        buf.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
    }
}

pub fn model_to_bytes<F: Real>(model: &PolicyModel<F>) -> Vec<u8> {
    let s = &model.spec;
    let mut buf = Vec::with_capacity(64 + model.param_count() * 4);
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.push(IDLE_LABEL as u8);
    put_u32(&mut buf, s.input_dim);
    put_u32(&mut buf, s.stem_widths.len());
    s.stem_widths.iter().for_each(|&w| put_u32(&mut buf, w));
    put_u32(&mut buf, s.block_width);
    put_u32(&mut buf, s.n_blocks);
    put_u32(&mut buf, s.tail_widths.len());
    s.tail_widths.iter().for_each(|&w| put_u32(&mut buf, w));
    put_u32(&mut buf, s.output_dim);
    buf.extend_from_slice(&s.bn_eps.to_le_bytes());
    buf.extend_from_slice(&model.normalization.mean_dbm.to_le_bytes());
    buf.extend_from_slice(&model.normalization.std_dbm.to_le_bytes());
    buf.extend_from_slice(&(model.param_count() as u64).to_le_bytes());
    for u in &model.units {
        put_f32s(&mut buf, u.dense.w.iter());
        put_f32s(&mut buf, u.dense.b.iter());
        put_f32s(&mut buf, u.bn.gamma.iter());
        put_f32s(&mut buf, u.bn.beta.iter());
        put_f32s(&mut buf, u.bn.running_mean.iter());
        put_f32s(&mut buf, u.bn.running_var.iter());
    }
    put_f32s(&mut buf, model.output.w.iter());
    put_f32s(&mut buf, model.output.b.iter());
    buf
}

pub fn save_model<F: Real>(model: &PolicyModel<F>, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<PolicyModel<f32>> {
    let mut r = ByteReader::new(bytes);
    if r.take(8)? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let class0 = r.u8()? as i8;
    if class0 != IDLE_LABEL {
        return Err(Error::Format(format!("unexpected label mapping (class 0 = {class0})")));
    }
    let widths = |r: &mut ByteReader| -> Result<Vec<usize>> {
        let n = r.u32()? as usize;
        if n > 64 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| Ok(r.u32()? as usize)).collect()
    };
    let input_dim = r.u32()? as usize;
    let stem_widths = widths(&mut r)?;
    let block_width = r.u32()? as usize;
    let n_blocks = r.u32()? as usize;
    let tail_widths = widths(&mut r)?;
    let output_dim = r.u32()? as usize;
    let bn_eps = r.f64()?;
    let spec = ModelSpec {
        input_dim,
        stem_widths,
        block_width,
        n_blocks,
        tail_widths,
        output_dim,
        bn_eps,
    };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let normalization = Normalization {
        mean_dbm: r.f64()?,
        std_dbm: r.f64()?,
    };
    let declared = r.u64()? as usize;

    let vec1 = |r: &mut ByteReader, n: usize| -> Result<Array1<f32>> {
        (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>().map(Array1::from)
    };
    let mut units = Vec::new();
    for (fan_in, fan_out) in spec.unit_shapes() {
        let w = vec1(&mut r, fan_in * fan_out)?;
        let w = Array2::from_shape_vec((fan_in, fan_out), w.to_vec()).unwrap();
        let b = vec1(&mut r, fan_out)?;
        let gamma = vec1(&mut r, fan_out)?;
        let beta = vec1(&mut r, fan_out)?;
        let running_mean = vec1(&mut r, fan_out)?;
        let running_var = vec1(&mut r, fan_out)?;
        if running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Format("BN running variance must be > 0".into()));
        }
        units.push(Unit {
            dense: Dense { w, b },
            bn: BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            },
        });
    }
    let last = spec.last_hidden();
    let w = vec1(&mut r, last * spec.output_dim)?;
    let output = Dense {
        w: Array2::from_shape_vec((last, spec.output_dim), w.to_vec()).unwrap(),
        b: vec1(&mut r, spec.output_dim)?,
    };
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after model body".into()));
    }
    let model = PolicyModel {
        spec,
        units,
        output,
        normalization,
    };
    if model.param_count() != declared {
        return Err(Error::Format(format!(
            "parameter count {declared} does not match architecture ({})",
            model.param_count()
        )));
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<PolicyModel<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
