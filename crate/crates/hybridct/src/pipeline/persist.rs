//! Binary serialization of a trained pipeline.
//!
//! Layout: magic `HCSV`, a one-byte version, then four length-prefixed
//! sections (u64 little-endian byte count each): configuration text,
//! CNN weights, SVM model, calibration constants. All integers are
//! little-endian; floats are f64 bit patterns. Readers reject trailing
//! bytes at both the file and section level, so every byte is accounted
//! for.

use std::path::Path;

use super::config::{parse_config, serialize_config};
use super::{PipelineError, TrainedPipeline};
use crate::cnn::{CnnModel, ConvLayer, DenseLayer, Layer};
use crate::svm::{Calibration, KernelSpec, SvmModel};

const MAGIC: &[u8; 4] = b"HCSV";
const VERSION: u8 = 1;

const TAG_CONV: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_MAXPOOL: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE: u8 = 4;

const KIND_LINEAR: u8 = 0;
const KIND_POLY: u8 = 1;
const KIND_RBF: u8 = 2;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64_slice(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        put_f64(out, v);
    }
}

fn put_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn cnn_bytes(model: &CnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, model.layers.len() as u32);
    put_u32(&mut out, model.feature_layer_index as u32);
    for layer in &model.layers {
        match layer {
            Layer::Conv(c) => {
                out.push(TAG_CONV);
                put_u32(&mut out, c.out_channels as u32);
                put_u32(&mut out, c.in_channels as u32);
                put_u32(&mut out, c.kernel as u32);
                put_u32(&mut out, c.stride as u32);
                put_u32(&mut out, c.padding as u32);
                put_f64_slice(&mut out, &c.weights);
                put_f64_slice(&mut out, &c.bias);
            }
            Layer::Relu => out.push(TAG_RELU),
            Layer::MaxPool => out.push(TAG_MAXPOOL),
            Layer::Flatten => out.push(TAG_FLATTEN),
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                put_u32(&mut out, d.out_dim as u32);
                put_u32(&mut out, d.in_dim as u32);
                put_f64_slice(&mut out, &d.weights);
                put_f64_slice(&mut out, &d.bias);
            }
        }
    }
    out
}

fn svm_bytes(model: &SvmModel) -> Vec<u8> {
    let mut out = Vec::new();
    match model.kernel {
        KernelSpec::Linear => out.push(KIND_LINEAR),
        KernelSpec::Polynomial { degree, coef0 } => {
            out.push(KIND_POLY);
            put_u32(&mut out, degree);
            put_f64(&mut out, coef0);
        }
        KernelSpec::Rbf { gamma } => {
            out.push(KIND_RBF);
            put_f64(&mut out, gamma);
        }
    }
    let dim = model.mean.len();
    put_u32(&mut out, dim as u32);
    put_f64_slice(&mut out, &model.mean);
    put_f64_slice(&mut out, &model.std);
    put_u32(&mut out, model.support_vectors.len() as u32);
    for sv in &model.support_vectors {
        put_f64_slice(&mut out, sv);
    }
    put_f64_slice(&mut out, &model.alphas);
    put_f64_slice(&mut out, &model.sv_targets);
    put_f64(&mut out, model.bias);
    out
}

/// Serializes a trained pipeline to its binary container format.
pub fn pipeline_bytes(p: &TrainedPipeline) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_section(&mut out, serialize_config(&p.config).as_bytes());
    put_section(&mut out, &cnn_bytes(&p.cnn));
    put_section(&mut out, &svm_bytes(&p.svm));
    let mut calib = Vec::new();
    put_f64(&mut calib, p.calibration.a);
    put_f64(&mut calib, p.calibration.b);
    put_section(&mut out, &calib);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        if self.remaining() < n {
            return Err(PipelineError::Format(format!(
                "truncated data: wanted {n} bytes, {} remain",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PipelineError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, PipelineError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Bounds-checks against the remaining bytes before allocating, so a
    /// corrupted count cannot request an absurd buffer.
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, PipelineError> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| PipelineError::Format(format!("element count {n} overflows")))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn section(&mut self) -> Result<Reader<'a>, PipelineError> {
        let len = self.u64()?;
        let len = usize::try_from(len)
            .map_err(|_| PipelineError::Format(format!("section length {len} overflows")))?;
        Ok(Reader::new(self.take(len)?))
    }

    fn finish(&self, what: &str) -> Result<(), PipelineError> {
        if self.remaining() != 0 {
            return Err(PipelineError::Format(format!(
                "{} trailing bytes after {what}",
                self.remaining()
            )));
        }
        Ok(())
    }
}

fn read_cnn(r: &mut Reader) -> Result<CnnModel, PipelineError> {
    let layer_count = r.u32()? as usize;
    let feature_layer_index = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count.min(64));
    for _ in 0..layer_count {
        let layer = match r.u8()? {
            TAG_CONV => {
                let out_channels = r.u32()? as usize;
                let in_channels = r.u32()? as usize;
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let padding = r.u32()? as usize;
                let n_w = out_channels
                    .checked_mul(in_channels)
                    .and_then(|v| v.checked_mul(kernel))
                    .and_then(|v| v.checked_mul(kernel))
                    .ok_or_else(|| {
                        PipelineError::Format("conv weight count overflows".into())
                    })?;
                let weights = r.f64_vec(n_w)?;
                let bias = r.f64_vec(out_channels)?;
                Layer::Conv(ConvLayer {
                    out_channels,
                    in_channels,
                    kernel,
                    stride,
                    padding,
                    weights,
                    bias,
                })
            }
            TAG_RELU => Layer::Relu,
            TAG_MAXPOOL => Layer::MaxPool,
            TAG_FLATTEN => Layer::Flatten,
            TAG_DENSE => {
                let out_dim = r.u32()? as usize;
                let in_dim = r.u32()? as usize;
                let n_w = out_dim.checked_mul(in_dim).ok_or_else(|| {
                    PipelineError::Format("dense weight count overflows".into())
                })?;
                let weights = r.f64_vec(n_w)?;
                let bias = r.f64_vec(out_dim)?;
                Layer::Dense(DenseLayer { out_dim, in_dim, weights, bias })
            }
            tag => {
                return Err(PipelineError::Format(format!("unknown layer tag {tag}")));
            }
        };
        layers.push(layer);
    }
    let model = CnnModel { layers, feature_layer_index };
    model
        .validate_feature_layer()
        .map_err(|e| PipelineError::Format(format!("stored network is inconsistent: {e}")))?;
    Ok(model)
}

fn read_svm(r: &mut Reader) -> Result<SvmModel, PipelineError> {
    let kernel = match r.u8()? {
        KIND_LINEAR => KernelSpec::Linear,
        KIND_POLY => KernelSpec::Polynomial { degree: r.u32()?, coef0: r.f64()? },
        KIND_RBF => KernelSpec::Rbf { gamma: r.f64()? },
        kind => {
            return Err(PipelineError::Format(format!("unknown kernel kind {kind}")));
        }
    };
    let dim = r.u32()? as usize;
    let mean = r.f64_vec(dim)?;
    let std = r.f64_vec(dim)?;
    let n_sv = r.u32()? as usize;
    let mut support_vectors = Vec::with_capacity(n_sv.min(4096));
    for _ in 0..n_sv {
        support_vectors.push(r.f64_vec(dim)?);
    }
    let alphas = r.f64_vec(n_sv)?;
    let sv_targets = r.f64_vec(n_sv)?;
    let bias = r.f64()?;
    Ok(SvmModel { support_vectors, alphas, sv_targets, bias, kernel, mean, std })
}

/// Deserializes a pipeline from the binary container format.
pub fn pipeline_from_bytes(bytes: &[u8]) -> Result<TrainedPipeline, PipelineError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4).map_err(|_| bad_magic())?;
    if magic != MAGIC {
        return Err(bad_magic());
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(PipelineError::Version(format!(
            "unsupported model version {version}, this build reads version {VERSION}"
        )));
    }

    let mut sec = r.section()?;
    let text = std::str::from_utf8(sec.take(sec.remaining())?)
        .map_err(|_| PipelineError::Format("configuration section is not UTF-8".into()))?;
    let config = parse_config(text)
        .map_err(|e| PipelineError::Format(format!("embedded configuration: {e}")))?;

    let mut sec = r.section()?;
    let cnn = read_cnn(&mut sec)?;
    sec.finish("network section")?;

    let mut sec = r.section()?;
    let svm = read_svm(&mut sec)?;
    sec.finish("svm section")?;

    let mut sec = r.section()?;
    let calibration = Calibration { a: sec.f64()?, b: sec.f64()? };
    sec.finish("calibration section")?;

    r.finish("model data")?;
    Ok(TrainedPipeline { config, cnn, svm, calibration })
}

fn bad_magic() -> PipelineError {
    PipelineError::Format("not a model file (bad magic)".into())
}

/// Writes the pipeline to disk in the binary container format.
pub fn save_pipeline(p: &TrainedPipeline, path: &Path) -> Result<(), PipelineError> {
    std::fs::write(path, pipeline_bytes(p))?;
    Ok(())
}

/// Reads a pipeline saved by [`save_pipeline`].
pub fn load_pipeline(path: &Path) -> Result<TrainedPipeline, PipelineError> {
    let bytes = std::fs::read(path)?;
    pipeline_from_bytes(&bytes)
}
