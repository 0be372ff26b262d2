use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::param::Param;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

type BackFn<T> = Box<dyn Fn(&[T], &mut Grads<T>)>;

struct Node<T: Scalar> {
    back: Option<BackFn<T>>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    // leaf node id per parameter, deduplicated so a shared parameter used at
    // several sites accumulates into one slot
    params: Vec<(usize, Param<T>)>,
}

/// Wengert list recording executed ops for the backward pass.
pub struct Tape<T: Scalar>(Rc<RefCell<TapeInner<T>>>);

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner {
            nodes: Vec::new(),
            params: Vec::new(),
        })))
    }

    pub(crate) fn same_as(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn push(&self, back: impl Fn(&[T], &mut Grads<T>) + 'static) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(Node {
            back: Some(Box::new(back)),
        });
        inner.nodes.len() - 1
    }

    fn push_leaf(&self) -> usize {
        let mut inner = self.0.borrow_mut();
        inner.nodes.push(Node { back: None });
        inner.nodes.len() - 1
    }

    /// Attach an existing tensor as a leaf so its gradient can be queried.
    pub fn watch(&self, t: &Tensor<T>) -> Tensor<T> {
        let node = self.push_leaf();
        Tensor::from_parts(t.shape().to_vec(), t.data_arc(), Some((self.clone(), node)))
    }

    /// Leaf tensor for a parameter; its gradient is added into the
    /// parameter's accumulator by [`Tape::backward`].
    pub fn leaf(&self, p: &Param<T>) -> Tensor<T> {
        {
            let inner = self.0.borrow();
            if let Some((node, _)) = inner.params.iter().find(|(_, q)| q.same_as(p)) {
                return Tensor::from_parts(
                    p.shape().to_vec(),
                    p.data_arc(),
                    Some((self.clone(), *node)),
                );
            }
        }
        let node = self.push_leaf();
        self.0.borrow_mut().params.push((node, p.clone()));
        Tensor::from_parts(p.shape().to_vec(), p.data_arc(), Some((self.clone(), node)))
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar loss. Visits every recorded op at most
    /// once, in reverse execution order, then adds (`+=`) leaf gradients
    /// into their parameters.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Grads<T>> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let (tape, loss_node) = loss
            .track()
            .ok_or_else(|| Error::arg("backward", "loss is not attached to a tape"))?;
        if !tape.same_as(self) {
            return Err(Error::TapeMismatch);
        }
        let loss_node = *loss_node;

        let n = self.len();
        let mut grads = Grads {
            slots: (0..n).map(|_| None).collect(),
        };
        grads.slots[loss_node] = Some(vec![T::one()]);

        for id in (0..=loss_node).rev() {
            let Some(g) = grads.slots[id].take() else {
                continue;
            };
            // take the backward fn out so the borrow is released while it runs
            let back = self.0.borrow_mut().nodes[id].back.take();
            if let Some(back) = back {
                back(&g, &mut grads);
                self.0.borrow_mut().nodes[id].back = Some(back);
            }
            grads.slots[id] = Some(g);
        }

        for (node, param) in self.0.borrow().params.iter() {
            if let Some(g) = &grads.slots[*node] {
                param.accum_grad(g);
            }
        }
        Ok(grads)
    }
}

/// Per-node gradient buffers produced by a backward sweep.
pub struct Grads<T: Scalar> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient buffer for a node, zero-initialized on first touch.
    pub(crate) fn accum(&mut self, node: usize, len: usize) -> &mut [T] {
        let slot = &mut self.slots[node];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); len]);
        }
        slot.as_mut().unwrap()
    }

    /// Gradient of the loss w.r.t. a tracked tensor, if it was reached.
    pub fn of(&self, t: &Tensor<T>) -> Option<&[T]> {
        let id = t.node_id()?;
        self.slots.get(id)?.as_deref()
    }
}

/// Tape shared by a set of op inputs, if any input is tracked.
/// Errors when two inputs are tracked on different tapes.
pub(crate) fn joint_tape<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Option<Tape<T>>> {
    let mut found: Option<Tape<T>> = None;
    for t in inputs {
        if let Some((tape, _)) = t.track() {
            match &found {
                None => found = Some(tape.clone()),
                Some(f) if f.same_as(tape) => {}
                Some(_) => return Err(Error::TapeMismatch),
            }
        }
    }
    Ok(found)
}

/// Build a tracked output: computes the node only when a tape is present.
pub(crate) fn make_output<T: Scalar>(
    tape: Option<Tape<T>>,
    shape: Vec<usize>,
    data: Vec<T>,
    back: impl Fn(&[T], &mut Grads<T>) + 'static,
) -> Tensor<T> {
    let data = Arc::new(data);
    let track = tape.map(|tape| {
        let node = tape.push(back);
        (tape, node)
    });
    Tensor::from_parts(shape, data, track)
}
