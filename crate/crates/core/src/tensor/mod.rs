//! Dense NCHW tensors with an optional reverse-mode differentiation tape.
//!
//! A [`Tensor`] is an immutable dense array. When it was produced by an op
//! executed against a [`Tape`], it carries a node id so that
//! [`Tape::backward`] can replay the recorded graph in reverse.

pub(crate) mod param;
pub(crate) mod tape;

pub use param::{Init, Param, ParamStore};
pub use tape::{Grads, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    track: Option<(Tape<T>, usize)>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            track: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![T::zero(); numel]),
            track: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![value; numel]),
            track: None,
        }
    }

    pub(crate) fn from_parts(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        track: Option<(Tape<T>, usize)>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, track }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn track(&self) -> Option<&(Tape<T>, usize)> {
        self.track.as_ref()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.track.as_ref().map(|(_, id)| *id)
    }

    pub fn is_tracked(&self) -> bool {
        self.track.is_some()
    }

    /// The same values with no tape attachment; gradients stop here.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            track: None,
        }
    }

    /// Backward sweep from this (scalar) tensor through its own tape.
    pub fn backward(&self) -> Result<Grads<T>> {
        match &self.track {
            Some((tape, _)) => tape.backward(self),
            None => Err(Error::arg("backward", "tensor is not attached to a tape")),
        }
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Value at NCHW index; panics on rank/extent violations.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        assert_eq!(self.shape.len(), 4);
        let [sn, sc, sh, sw] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        assert!(n < sn && c < sc && h < sh && w < sw);
        self.data[((n * sc + c) * sh + h) * sw + w]
    }

    /// New shape over the same data (row-major reinterpretation).
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        let track = match &self.track {
            None => None,
            Some((tape, src)) => {
                let src = *src;
                let node = tape.push(move |out_grad, grads| {
                    let buf = grads.accum(src, out_grad.len());
                    for (b, g) in buf.iter_mut().zip(out_grad) {
                        *b = *b + *g;
                    }
                });
                Some((tape.clone(), node))
            }
        };
        Ok(Self::from_parts(shape, Arc::clone(&self.data), track))
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.track.is_some())
            .finish()
    }
}
