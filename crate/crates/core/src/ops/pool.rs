use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::make_output;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub enum PoolMode {
    Max { k: usize, stride: usize },
    Avg { k: usize, stride: usize },
    GlobalAvg,
    /// Partition the plane into `out_h x out_w` near-equal windows and take
    /// the max of each. Targets larger than the input repeat values, matching
    /// the usual adaptive-pooling convention.
    AdaptiveMax { out_h: usize, out_w: usize },
}

pub fn pool2d<T: Scalar>(input: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape("pool2d", format!("{:?}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    match mode {
        PoolMode::Max { k, stride } | PoolMode::Avg { k, stride } => {
            if k == 0 || stride == 0 {
                return Err(Error::arg("pool2d", "zero-sized window or stride"));
            }
            if k > h || k > w {
                return Err(Error::arg(
                    "pool2d",
                    format!("window {} exceeds extent {}x{}", k, h, w),
                ));
            }
        }
        PoolMode::GlobalAvg => {}
        PoolMode::AdaptiveMax { out_h, out_w } => {
            if out_h == 0 || out_w == 0 {
                return Err(Error::arg("pool2d", "zero-sized target"));
            }
        }
    }

    let xd = input.data_arc();
    let tape = input.track().map(|(t, _)| t.clone());
    let src = input.node_id();
    let numel_in = input.numel();

    match mode {
        PoolMode::GlobalAvg => {
            let inv = T::one() / T::from_f64((h * w) as f64);
            let mut data = vec![T::zero(); n * c];
            for p in 0..n * c {
                let base = p * h * w;
                let mut acc = T::zero();
                for i in 0..h * w {
                    acc = acc + xd[base + i];
                }
                data[p] = acc * inv;
            }
            Ok(make_output(tape, vec![n, c, 1, 1], data, move |g, grads| {
                if let Some(src) = src {
                    let buf = grads.accum(src, numel_in);
                    for p in 0..n * c {
                        let base = p * h * w;
                        for i in 0..h * w {
                            buf[base + i] = buf[base + i] + g[p] * inv;
                        }
                    }
                }
            }))
        }
        PoolMode::Avg { k, stride } => {
            let oh = (h - k) / stride + 1;
            let ow = (w - k) / stride + 1;
            let inv = T::one() / T::from_f64((k * k) as f64);
            let mut data = vec![T::zero(); n * c * oh * ow];
            for p in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for ky in 0..k {
                            for kx in 0..k {
                                acc = acc + xd[(p * h + oy * stride + ky) * w + ox * stride + kx];
                            }
                        }
                        data[(p * oh + oy) * ow + ox] = acc * inv;
                    }
                }
            }
            Ok(make_output(
                tape,
                vec![n, c, oh, ow],
                data,
                move |g, grads| {
                    if let Some(src) = src {
                        let buf = grads.accum(src, numel_in);
                        for p in 0..n * c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let go = g[(p * oh + oy) * ow + ox] * inv;
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let i =
                                                (p * h + oy * stride + ky) * w + ox * stride + kx;
                                            buf[i] = buf[i] + go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                },
            ))
        }
        PoolMode::Max { k, stride } => {
            let oh = (h - k) / stride + 1;
            let ow = (w - k) / stride + 1;
            let mut data = vec![T::zero(); n * c * oh * ow];
            let mut argmax = vec![0usize; n * c * oh * ow];
            for p in 0..n * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_i = 0;
                        for ky in 0..k {
                            for kx in 0..k {
                                let i = (p * h + oy * stride + ky) * w + ox * stride + kx;
                                if xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                        data[(p * oh + oy) * ow + ox] = best;
                        argmax[(p * oh + oy) * ow + ox] = best_i;
                    }
                }
            }
            Ok(make_output(
                tape,
                vec![n, c, oh, ow],
                data,
                move |g, grads| {
                    if let Some(src) = src {
                        let buf = grads.accum(src, numel_in);
                        for (o, &i) in argmax.iter().enumerate() {
                            buf[i] = buf[i] + g[o];
                        }
                    }
                },
            ))
        }
        PoolMode::AdaptiveMax { out_h, out_w } => {
            let mut data = vec![T::zero(); n * c * out_h * out_w];
            let mut argmax = vec![0usize; n * c * out_h * out_w];
            let bounds = |i: usize, extent: usize, out: usize| {
                let start = i * extent / out;
                let end = ((i + 1) * extent).div_ceil(out).max(start + 1);
                (start, end)
            };
            for p in 0..n * c {
                for oy in 0..out_h {
                    let (y0, y1) = bounds(oy, h, out_h);
                    for ox in 0..out_w {
                        let (x0, x1) = bounds(ox, w, out_w);
                        let mut best = T::neg_infinity();
                        let mut best_i = 0;
                        for y in y0..y1 {
                            for x in x0..x1 {
                                let i = (p * h + y) * w + x;
                                if xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                        data[(p * out_h + oy) * out_w + ox] = best;
                        argmax[(p * out_h + oy) * out_w + ox] = best_i;
                    }
                }
            }
            Ok(make_output(
                tape,
                vec![n, c, out_h, out_w],
                data,
                move |g, grads| {
                    if let Some(src) = src {
                        let buf = grads.accum(src, numel_in);
                        for (o, &i) in argmax.iter().enumerate() {
                            buf[i] = buf[i] + g[o];
                        }
                    }
                },
            ))
        }
    }
}
