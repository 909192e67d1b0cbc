//! Dense row-major tensors.
//!
//! Values are immutable after creation and shared via `Arc`, so cloning a
//! tensor is cheap. A tensor may carry a node id tying it to the [`Tape`]
//! that produced it; tensors built outside a tape have no node.
//!
//! [`Tape`]: crate::tape::Tape

use crate::error::CoreError;
use std::sync::Arc;

/// Element type for the numeric engine: f64 for tests and gradient checks,
/// f32 for training.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

pub(crate) type NodeId = usize;

/// A dense row-major tensor, optionally attached to an autodiff tape.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    pub(crate) node: Option<NodeId>,
    pub(crate) tape_id: u64,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, CoreError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CoreError::InvalidInput(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            node: None,
            tape_id: 0,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![T::zero(); n]),
            node: None,
            tape_id: 0,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: Arc::new(vec![v]),
            node: None,
            tape_id: 0,
        }
    }

    /// 2-D constructor from row slices; rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, CoreError> {
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(CoreError::InvalidInput(
                    "ragged rows in tensor constructor".into(),
                ));
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(vec![rows.len(), n_cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Detached copy: same values, no tape node.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
            tape_id: 0,
        }
    }

    /// Converts element precision; used when moving between the f64 test
    /// path and the f32 training path.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| U::from_f64(v.as_f64())).collect()),
            node: None,
            tape_id: 0,
        }
    }

    pub(crate) fn with_node(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        node: Option<NodeId>,
        tape_id: u64,
    ) -> Self {
        Tensor {
            shape,
            data,
            node,
            tape_id,
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}
