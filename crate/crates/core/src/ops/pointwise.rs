use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::{joint_tape, make_output};
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
    let tape = x.track().map(|(t, _)| t.clone());
    let src = x.node_id();
    let xs = x.data_arc();
    make_output(tape, x.shape().to_vec(), data, move |g, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, xs.len());
            for i in 0..xs.len() {
                if xs[i] > T::zero() {
                    buf[i] = buf[i] + g[i];
                }
            }
        }
    })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let one = T::one();
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| one / (one + (-v).exp()))
        .collect();
    let tape = x.track().map(|(t, _)| t.clone());
    let src = x.node_id();
    let out = data.clone();
    make_output(tape, x.shape().to_vec(), data, move |g, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, out.len());
            for i in 0..out.len() {
                buf[i] = buf[i] + g[i] * out[i] * (T::one() - out[i]);
            }
        }
    })
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| v * c).collect();
    let tape = x.track().map(|(t, _)| t.clone());
    let src = x.node_id();
    let n = x.numel();
    make_output(tape, x.shape().to_vec(), data, move |g, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, n);
            for i in 0..n {
                buf[i] = buf[i] + g[i] * c;
            }
        }
    })
}

/// Same values, same tape, but no gradient flows through: downstream nodes
/// stay recorded (so parameters used after this point still train) while the
/// producer of `x` receives nothing.
pub fn stop_gradient<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let tape = x.track().map(|(t, _)| t.clone());
    make_output(tape, x.shape().to_vec(), x.data().to_vec(), |_, _| {})
}

fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let tape = joint_tape(&[a, b])?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    let (na, nb, n) = (a.node_id(), b.node_id(), a.numel());
    Ok(make_output(tape, a.shape().to_vec(), data, move |g, grads| {
        for node in [na, nb].into_iter().flatten() {
            let buf = grads.accum(node, n);
            for i in 0..n {
                buf[i] = buf[i] + g[i];
            }
        }
    }))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    let tape = joint_tape(&[a, b])?;
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    let (na, nb, n) = (a.node_id(), b.node_id(), a.numel());
    let (ad, bd) = (a.data_arc(), b.data_arc());
    Ok(make_output(tape, a.shape().to_vec(), data, move |g, grads| {
        if let Some(na) = na {
            let buf = grads.accum(na, n);
            for i in 0..n {
                buf[i] = buf[i] + g[i] * bd[i];
            }
        }
        if let Some(nb) = nb {
            let buf = grads.accum(nb, n);
            for i in 0..n {
                buf[i] = buf[i] + g[i] * ad[i];
            }
        }
    }))
}

/// Broadcast a one-channel attention map over every channel: `x * att`.
pub fn mul_channel<T: Scalar>(x: &Tensor<T>, att: &Tensor<T>) -> Result<Tensor<T>> {
    let (xs, asx) = (x.shape(), att.shape());
    if xs.len() != 4 || asx.len() != 4 || asx[1] != 1 || xs[0] != asx[0] || xs[2] != asx[2] || xs[3] != asx[3] {
        return Err(Error::shape(
            "mul_channel",
            format!("{:?} vs attention {:?}", xs, asx),
        ));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let plane = h * w;
    let tape = joint_tape(&[x, att])?;
    let xd = x.data_arc();
    let ad = att.data_arc();
    let mut data = vec![T::zero(); n * c * plane];
    for ni in 0..n {
        for ci in 0..c {
            let xo = (ni * c + ci) * plane;
            let ao = ni * plane;
            for p in 0..plane {
                data[xo + p] = xd[xo + p] * ad[ao + p];
            }
        }
    }
    let (nx, na) = (x.node_id(), att.node_id());
    Ok(make_output(tape, xs.to_vec(), data, move |g, grads| {
        if let Some(nx) = nx {
            let buf = grads.accum(nx, n * c * plane);
            for ni in 0..n {
                for ci in 0..c {
                    let xo = (ni * c + ci) * plane;
                    let ao = ni * plane;
                    for p in 0..plane {
                        buf[xo + p] = buf[xo + p] + g[xo + p] * ad[ao + p];
                    }
                }
            }
        }
        if let Some(na) = na {
            let buf = grads.accum(na, n * plane);
            for ni in 0..n {
                let ao = ni * plane;
                for ci in 0..c {
                    let xo = (ni * c + ci) * plane;
                    for p in 0..plane {
                        buf[ao + p] = buf[ao + p] + g[xo + p] * xd[xo + p];
                    }
                }
            }
        }
    }))
}

/// Scale every element of batch item `n` by scalar `s[n]`.
pub fn mul_item<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    if s.numel() != n {
        return Err(Error::shape(
            "mul_item",
            format!("batch {} vs {} scalars", n, s.numel()),
        ));
    }
    let per = x.numel() / n;
    let tape = joint_tape(&[x, s])?;
    let xd = x.data_arc();
    let sd = s.data_arc();
    let mut data = vec![T::zero(); x.numel()];
    for ni in 0..n {
        for p in 0..per {
            data[ni * per + p] = xd[ni * per + p] * sd[ni];
        }
    }
    let (nx, ns) = (x.node_id(), s.node_id());
    Ok(make_output(tape, x.shape().to_vec(), data, move |g, grads| {
        if let Some(nx) = nx {
            let buf = grads.accum(nx, n * per);
            for ni in 0..n {
                for p in 0..per {
                    buf[ni * per + p] = buf[ni * per + p] + g[ni * per + p] * sd[ni];
                }
            }
        }
        if let Some(ns) = ns {
            let buf = grads.accum(ns, n);
            for ni in 0..n {
                let mut acc = T::zero();
                for p in 0..per {
                    acc = acc + g[ni * per + p] * xd[ni * per + p];
                }
                buf[ni] = buf[ni] + acc;
            }
        }
    }))
}

/// Column `k` of an `N x K` matrix as an `N x 1` tensor.
pub fn select_col<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 2 || k >= x.shape()[1] {
        return Err(Error::arg(
            "select_col",
            format!("column {} of shape {:?}", k, x.shape()),
        ));
    }
    let (n, cols) = (x.shape()[0], x.shape()[1]);
    let xd = x.data_arc();
    let data: Vec<T> = (0..n).map(|i| xd[i * cols + k]).collect();
    let tape = x.track().map(|(t, _)| t.clone());
    let src = x.node_id();
    Ok(make_output(tape, vec![n, 1], data, move |g, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, n * cols);
            for i in 0..n {
                buf[i * cols + k] = buf[i * cols + k] + g[i];
            }
        }
    }))
}

/// Row means of an `N x K` matrix as `N x 1`.
pub fn mean_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 2 {
        return Err(Error::shape("mean_rows", format!("{:?}", x.shape())));
    }
    let (n, cols) = (x.shape()[0], x.shape()[1]);
    let inv = T::one() / T::from_f64(cols as f64);
    let xd = x.data_arc();
    let data: Vec<T> = (0..n)
        .map(|i| xd[i * cols..(i + 1) * cols].iter().copied().sum::<T>() * inv)
        .collect();
    let tape = x.track().map(|(t, _)| t.clone());
    let src = x.node_id();
    Ok(make_output(tape, vec![n, 1], data, move |g, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, n * cols);
            for i in 0..n {
                for j in 0..cols {
                    buf[i * cols + j] = buf[i * cols + j] + g[i] * inv;
                }
            }
        }
    }))
}

/// Row-wise softmax of an `N x K` matrix, max-subtracted for stability.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 2 {
        return Err(Error::shape("softmax_rows", format!("{:?}", x.shape())));
    }
    let (n, cols) = (x.shape()[0], x.shape()[1]);
    let xd = x.data_arc();
    let mut data = vec![T::zero(); n * cols];
    for i in 0..n {
        let row = &xd[i * cols..(i + 1) * cols];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for j in 0..cols {
            let e = (row[j] - m).exp();
            data[i * cols + j] = e;
            sum = sum + e;
        }
        for j in 0..cols {
            data[i * cols + j] = data[i * cols + j] / sum;
        }
    }
    let out = data.clone();
    let tape = x.track().map(|(t, _)| t.clone());
    let src = x.node_id();
    Ok(make_output(tape, x.shape().to_vec(), data, move |g, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, n * cols);
            for i in 0..n {
                let s = &out[i * cols..(i + 1) * cols];
                let gr = &g[i * cols..(i + 1) * cols];
                let mut dot = T::zero();
                for j in 0..cols {
                    dot = dot + gr[j] * s[j];
                }
                for j in 0..cols {
                    buf[i * cols + j] = buf[i * cols + j] + s[j] * (gr[j] - dot);
                }
            }
        }
    }))
}

/// Softmax of a K-vector (rank-1 convenience wrapper).
pub fn softmax_vec<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 1 {
        return Err(Error::shape("softmax_vec", format!("{:?}", x.shape())));
    }
    let k = x.shape()[0];
    let as_row = x.reshape(vec![1, k])?;
    softmax_rows(&as_row)?.reshape(vec![k])
}
