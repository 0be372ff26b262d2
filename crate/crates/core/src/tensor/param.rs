use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct ParamInner<T: Scalar> {
    name: String,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    grad: Vec<T>,
    momentum: Vec<T>,
    trainable: bool,
    // batch-norm gains/biases and running stats are excluded from weight decay
    decay_exempt: bool,
}

/// Named model parameter (or non-trainable buffer) with gradient and
/// momentum accumulators.
pub struct Param<T: Scalar>(Rc<RefCell<ParamInner<T>>>);

impl<T: Scalar> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param(Rc::clone(&self.0))
    }
}

impl<T: Scalar> Param<T> {
    fn new(name: String, shape: Vec<usize>, data: Vec<T>, trainable: bool, decay_exempt: bool) -> Self {
        let n = data.len();
        Param(Rc::new(RefCell::new(ParamInner {
            name,
            shape,
            data: Arc::new(data),
            grad: vec![T::zero(); n],
            momentum: vec![T::zero(); n],
            trainable,
            decay_exempt,
        })))
    }

    pub fn name(&self) -> String {
        self.0.borrow().name.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn trainable(&self) -> bool {
        self.0.borrow().trainable
    }

    pub fn decay_exempt(&self) -> bool {
        self.0.borrow().decay_exempt
    }

    pub(crate) fn same_as(&self, other: &Param<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.0.borrow().data)
    }

    pub fn values(&self) -> Vec<T> {
        self.0.borrow().data.to_vec()
    }

    pub fn grad(&self) -> Vec<T> {
        self.0.borrow().grad.clone()
    }

    pub fn momentum(&self) -> Vec<T> {
        self.0.borrow().momentum.clone()
    }

    /// Untracked tensor view of the current values.
    pub fn as_tensor(&self) -> Tensor<T> {
        let inner = self.0.borrow();
        Tensor::from_parts(inner.shape.clone(), Arc::clone(&inner.data), None)
    }

    pub(crate) fn accum_grad(&self, g: &[T]) {
        let mut inner = self.0.borrow_mut();
        debug_assert_eq!(inner.grad.len(), g.len());
        for (a, b) in inner.grad.iter_mut().zip(g) {
            *a = *a + *b;
        }
    }

    pub fn zero_grad(&self) {
        for g in self.0.borrow_mut().grad.iter_mut() {
            *g = T::zero();
        }
    }

    /// Overwrite values in place (optimizer step, checkpoint load, stat update).
    pub fn set_values(&self, values: &[T]) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(inner.data.len(), values.len());
        Arc::make_mut(&mut inner.data).copy_from_slice(values);
    }

    pub fn set_momentum(&self, values: &[T]) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(inner.momentum.len(), values.len());
        inner.momentum.copy_from_slice(values);
    }

    /// Apply one SGD-with-momentum update:
    /// `v <- m*v + (grad + wd*param); param <- param - lr*v`.
    pub fn sgd_step(&self, lr: T, momentum: T, weight_decay: T) {
        let mut inner = self.0.borrow_mut();
        if !inner.trainable {
            return;
        }
        let wd = if inner.decay_exempt { T::zero() } else { weight_decay };
        let inner = &mut *inner;
        let data = Arc::make_mut(&mut inner.data);
        for i in 0..data.len() {
            let g = inner.grad[i] + wd * data[i];
            inner.momentum[i] = momentum * inner.momentum[i] + g;
            data[i] = data[i] - lr * inner.momentum[i];
        }
    }

    /// Perturb a single element (finite-difference probes).
    pub fn nudge(&self, index: usize, delta: T) {
        let mut inner = self.0.borrow_mut();
        let data = Arc::make_mut(&mut inner.data);
        data[index] = data[index] + delta;
    }
}

/// Initialization scheme for a new parameter.
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Fan(usize),
}

/// Registry of model parameters: unique names, deterministic creation order,
/// and a seeded RNG so initialization is reproducible.
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    names: HashSet<String>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            names: HashSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn create(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> Result<Param<T>> {
        self.create_full(name, shape, init, true, false)
    }

    /// Non-trainable buffer (running statistics).
    pub fn buffer(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> Result<Param<T>> {
        self.create_full(name, shape, init, false, true)
    }

    /// Trainable but excluded from weight decay (bn gamma/beta).
    pub fn create_no_decay(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> Result<Param<T>> {
        self.create_full(name, shape, init, true, true)
    }

    fn create_full(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        init: Init,
        trainable: bool,
        decay_exempt: bool,
    ) -> Result<Param<T>> {
        let name = name.into();
        if !self.names.insert(name.clone()) {
            return Err(Error::DuplicateParam(name));
        }
        let numel: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); numel],
            Init::Ones => vec![T::one(); numel],
            Init::Const(v) => vec![T::from_f64(v); numel],
            Init::Fan(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..numel)
                    .map(|_| T::from_f64(self.rng.gen_range(-bound..bound)))
                    .collect()
            }
        };
        let p = Param::new(name, shape, data, trainable, decay_exempt);
        self.params.push(p.clone());
        Ok(p)
    }

    /// All parameters and buffers, in creation order.
    pub fn all(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter().filter(|p| p.trainable())
    }

    pub fn find(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}
