use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::{joint_tape, make_output};
use crate::tensor::{Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch normalization over NCHW input.
///
/// Train mode normalizes by batch statistics (biased variance) and updates
/// the running stats in place with momentum 0.1 convention
/// (`running <- (1-m)*running + m*batch`). Eval mode uses the running stats.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Param<T>,
    running_var: &Param<T>,
    eps: f64,
    momentum: f64,
    mode: BnMode,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("batch_norm", format!("{:?}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("gamma/beta length vs {} channels", c),
        ));
    }
    if mode == BnMode::Train && n < 2 {
        return Err(Error::arg(
            "batch_norm",
            "train mode requires batch size >= 2 (variance undefined)",
        ));
    }

    let tape = joint_tape(&[x, gamma, beta])?;
    let xd = x.data_arc();
    let gd = gamma.data_arc();
    let bd = beta.data_arc();
    let plane = h * w;
    let m = (n * plane) as f64;
    let eps_t = T::from_f64(eps);

    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        BnMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut acc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for p in 0..plane {
                        acc = acc + xd[base + p];
                    }
                }
                let mu = acc / T::from_f64(m);
                let mut vacc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for p in 0..plane {
                        let d = xd[base + p] - mu;
                        vacc = vacc + d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = vacc / T::from_f64(m);
            }
            // running-stat update is a forward side effect
            let mut rm = running_mean.values();
            let mut rv = running_var.values();
            let mom = T::from_f64(momentum);
            for ci in 0..c {
                rm[ci] = (T::one() - mom) * rm[ci] + mom * mean[ci];
                rv[ci] = (T::one() - mom) * rv[ci] + mom * var[ci];
            }
            running_mean.set_values(&rm);
            running_var.set_values(&rv);
            (mean, var)
        }
        BnMode::Eval => (running_mean.values(), running_var.values()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.numel()];
    let mut data = vec![T::zero(); x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for p in 0..plane {
                let xh = (xd[base + p] - mean[ci]) * inv_std[ci];
                xhat[base + p] = xh;
                data[base + p] = gd[ci] * xh + bd[ci];
            }
        }
    }

    let (nx, ng, nb) = (x.node_id(), gamma.node_id(), beta.node_id());
    let numel = x.numel();
    Ok(make_output(tape, s.to_vec(), data, move |g, grads| {
        if let Some(ng) = ng {
            let buf = grads.accum(ng, c);
            for ci in 0..c {
                let mut acc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for p in 0..plane {
                        acc = acc + g[base + p] * xhat[base + p];
                    }
                }
                buf[ci] = buf[ci] + acc;
            }
        }
        if let Some(nb) = nb {
            let buf = grads.accum(nb, c);
            for ci in 0..c {
                let mut acc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for p in 0..plane {
                        acc = acc + g[base + p];
                    }
                }
                buf[ci] = buf[ci] + acc;
            }
        }
        if let Some(nx) = nx {
            let buf = grads.accum(nx, numel);
            match mode {
                BnMode::Eval => {
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let k = gd[ci] * inv_std[ci];
                            for p in 0..plane {
                                buf[base + p] = buf[base + p] + g[base + p] * k;
                            }
                        }
                    }
                }
                BnMode::Train => {
                    // dx = gamma/std * (dy - mean(dy) - xhat * mean(dy*xhat))
                    let m_t = T::from_f64(m);
                    for ci in 0..c {
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for ni in 0..n {
                            let base = (ni * c + ci) * plane;
                            for p in 0..plane {
                                sum_g = sum_g + g[base + p];
                                sum_gx = sum_gx + g[base + p] * xhat[base + p];
                            }
                        }
                        let mean_g = sum_g / m_t;
                        let mean_gx = sum_gx / m_t;
                        let k = gd[ci] * inv_std[ci];
                        for ni in 0..n {
                            let base = (ni * c + ci) * plane;
                            for p in 0..plane {
                                let d = g[base + p] - mean_g - xhat[base + p] * mean_gx;
                                buf[base + p] = buf[base + p] + k * d;
                            }
                        }
                    }
                }
            }
        }
    }))
}
