//! Thin parameterized layer wrappers over the raw ops.

use crate::error::Result;
use crate::ops::{self, BnMode};
use crate::scalar::Scalar;
use crate::tensor::{Init, Param, ParamStore, Tensor};

/// Train/eval switch; only batch normalization behaves differently.
pub type Mode = BnMode;

/// Attach a parameter to the tape the reference tensor lives on, or use its
/// plain values when the forward pass is untracked.
pub fn attach<T: Scalar>(p: &Param<T>, like: &Tensor<T>) -> Tensor<T> {
    match like.track() {
        Some((tape, _)) => tape.leaf(p),
        None => p.as_tensor(),
    }
}

pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Result<Self> {
        let fan_in = in_c * k * k;
        let weight = store.create(format!("{name}.weight"), vec![out_c, in_c, k, k], Init::Fan(fan_in))?;
        let bias = store.create(format!("{name}.bias"), vec![out_c], Init::Fan(fan_in))?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            pad,
            dilation,
        })
    }

    /// 3x3 convolution preserving spatial extent (pad = dilation).
    pub fn k3(store: &mut ParamStore<T>, name: &str, in_c: usize, out_c: usize, dilation: usize) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 3, 1, dilation, dilation)
    }

    pub fn k1(store: &mut ParamStore<T>, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Self::new(store, name, in_c, out_c, 1, 1, 0, 1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = attach(&self.weight, x);
        let b = self.bias.as_ref().map(|b| attach(b, x));
        ops::conv2d(x, &w, b.as_ref(), self.stride, self.pad, self.dilation)
    }
}

pub struct Dense<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, in_d: usize, out_d: usize) -> Result<Self> {
        Ok(Self {
            weight: store.create(format!("{name}.weight"), vec![in_d, out_d], Init::Fan(in_d))?,
            bias: store.create(format!("{name}.bias"), vec![out_d], Init::Fan(in_d))?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = attach(&self.weight, x);
        let b = attach(&self.bias, x);
        ops::affine(x, &w, Some(&b))
    }
}

pub struct BatchNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.create_no_decay(format!("{name}.gamma"), vec![c], Init::Ones)?,
            beta: store.create_no_decay(format!("{name}.beta"), vec![c], Init::Zeros)?,
            running_mean: store.buffer(format!("{name}.running_mean"), vec![c], Init::Zeros)?,
            running_var: store.buffer(format!("{name}.running_var"), vec![c], Init::Ones)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let gamma = attach(&self.gamma, x);
        let beta = attach(&self.beta, x);
        ops::batch_norm(
            x,
            &gamma,
            &beta,
            &self.running_mean,
            &self.running_var,
            self.eps,
            self.momentum,
            mode,
        )
    }
}

/// conv -> batch norm -> relu, the encoder's standard block.
pub struct ConvBnRelu<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn k3(store: &mut ParamStore<T>, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::k3(store, &format!("{name}.conv"), in_c, out_c, 1)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_c)?,
        })
    }

    pub fn k1(store: &mut ParamStore<T>, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::k1(store, &format!("{name}.conv"), in_c, out_c)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_c)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(ops::relu(&self.bn.forward(&self.conv.forward(x)?, mode)?))
    }
}
