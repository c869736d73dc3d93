//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is the plain value type: a shape plus a flat `f32` buffer.
//! [`Tape`] records operations on [`Var`] handles and can replay them in
//! reverse to produce gradients; because the backward pass itself builds
//! tape nodes, gradients are differentiable again (double backprop), which
//! the critic's gradient penalty requires.

mod composite;
pub(crate) mod kernels;
mod optim;
mod tape;

pub use composite::one_hot;
pub use optim::{AdamConfig, ParameterStore};
pub use tape::{GradMode, Tape, Var};

use std::io::{Read, Write};
use std::path::Path;

/// Errors from tensor construction, tape operations and serialization.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward output must be a scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("variables belong to different tapes")]
    TapeMismatch,
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("tensor file {path}: {detail}")]
    Format { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense N-dimensional array of `f32` values in row-major order.
///
/// Images use the `[batch, channel, height, width]` layout. Every
/// constructor and operation that returns successfully guarantees the
/// buffer holds only finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor from a shape and flat buffer. Fails if the lengths
    /// disagree or the buffer contains non-finite values.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernel outputs whose finiteness is checked
    /// by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        assert!(value.is_finite());
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Element access for NCHW tensors.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let (cs, hs, ws) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Write in the raw tensor format: magic `TNSR1`, little-endian `u32`
    /// rank, `u32` extents, then raw 32-bit floats.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"TNSR1")?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Tensor> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Tensor::read_from(&mut f).map_err(|e| match e {
            TensorError::Format { detail, .. } => TensorError::Format {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Tensor> {
        let bad = |detail: &str| TensorError::Format {
            path: String::new(),
            detail: detail.to_string(),
        };
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != b"TNSR1" {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        if rank > 8 {
            return Err(bad("rank too large"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite values in tensor file"));
        }
        Ok(Tensor { shape, data })
    }
}

pub(crate) fn ensure_finite(op: &'static str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_length_and_finiteness() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 4]).is_ok());
        assert!(matches!(
            Tensor::from_vec(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Tensor::from_vec(vec![2], vec![1.0, f32::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn tnsr1_roundtrip_is_bit_exact() {
        let t = Tensor::from_vec(vec![2, 3], vec![0.0, -1.5, 3.25, f32::MIN_POSITIVE, 1e30, -0.0])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tnsr");
        t.save(&p).unwrap();
        let back = Tensor::load(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tnsr1_header_layout() {
        let t = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"TNSR1");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..17], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 17 + 8);
    }
}
