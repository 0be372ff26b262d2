use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::{joint_tape, make_output};
use crate::tensor::Tensor;

/// 2-D cross-correlation over NCHW input with an OIKK kernel.
///
/// Output spatial extent per axis: `floor((E + 2*pad - dilation*(K-1) - 1) / stride) + 1`.
/// The effective receptive span per axis is `dilation*(K-1) + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?}, weight {:?}", xs, ws),
        ));
    }
    if ws[2] != ws[3] {
        return Err(Error::arg("conv2d", format!("kernel must be square, got {:?}", ws)));
    }
    if stride == 0 || dilation == 0 {
        return Err(Error::arg("conv2d", "stride and dilation must be >= 1"));
    }
    let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, wi, k) = (ws[0], ws[1], ws[2]);
    if ci != wi {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but weight expects {}", ci, wi),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != co {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} vs {} output channels", b.numel(), co),
            ));
        }
    }
    let span = dilation * (k - 1) + 1;
    if h + 2 * pad < span || w + 2 * pad < span {
        return Err(Error::arg(
            "conv2d",
            format!(
                "receptive span {} exceeds padded extent {}x{}",
                span,
                h + 2 * pad,
                w + 2 * pad
            ),
        ));
    }
    let oh = (h + 2 * pad - span) / stride + 1;
    let ow = (w + 2 * pad - span) / stride + 1;

    let mut op_inputs: Vec<&Tensor<T>> = vec![input, weight];
    if let Some(b) = bias {
        op_inputs.push(b);
    }
    let tape = joint_tape(&op_inputs)?;

    let xd = input.data_arc();
    let wd = weight.data_arc();
    let bd = bias.map(|b| b.data_arc());

    let mut data = vec![T::zero(); n * co * oh * ow];
    // each (n, o) output plane is independent
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, out)| {
        let (ni, o) = (plane / co, plane % co);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = match &bd {
                    Some(b) => b[o],
                    None => T::zero(),
                };
                for c in 0..ci {
                    let xoff = (ni * ci + c) * h;
                    let woff = (o * ci + c) * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let row = (xoff + iy as usize) * w;
                        let wrow = (woff + ky) * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            acc = acc + xd[row + ix as usize] * wd[wrow + kx];
                        }
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
    });

    let (nx, nw) = (input.node_id(), weight.node_id());
    let nb = bias.and_then(|b| b.node_id());
    Ok(make_output(
        tape,
        vec![n, co, oh, ow],
        data,
        move |g, grads| {
            if let Some(nx) = nx {
                let buf = grads.accum(nx, n * ci * h * w);
                // batch items are disjoint in the input gradient
                buf.par_chunks_mut(ci * h * w).enumerate().for_each(|(ni, dx)| {
                    for o in 0..co {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[((ni * co + o) * oh + oy) * ow + ox];
                                for c in 0..ci {
                                    let woff = (o * ci + c) * k;
                                    for ky in 0..k {
                                        let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                        if iy < 0 || iy as usize >= h {
                                            continue;
                                        }
                                        let row = (c * h + iy as usize) * w;
                                        let wrow = (woff + ky) * k;
                                        for kx in 0..k {
                                            let ix = (ox * stride + kx * dilation) as isize - pad as isize;
                                            if ix < 0 || ix as usize >= w {
                                                continue;
                                            }
                                            dx[row + ix as usize] =
                                                dx[row + ix as usize] + go * wd[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if let Some(nw) = nw {
                let buf = grads.accum(nw, co * ci * k * k);
                // output channels are disjoint in the weight gradient
                buf.par_chunks_mut(ci * k * k).enumerate().for_each(|(o, dw)| {
                    for ni in 0..n {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[((ni * co + o) * oh + oy) * ow + ox];
                                for c in 0..ci {
                                    let xoff = (ni * ci + c) * h;
                                    for ky in 0..k {
                                        let iy = (oy * stride + ky * dilation) as isize - pad as isize;
                                        if iy < 0 || iy as usize >= h {
                                            continue;
                                        }
                                        let row = (xoff + iy as usize) * w;
                                        for kx in 0..k {
                                            let ix =
                                                (ox * stride + kx * dilation) as isize - pad as isize;
                                            if ix < 0 || ix as usize >= w {
                                                continue;
                                            }
                                            let wi = (c * k + ky) * k + kx;
                                            dw[wi] = dw[wi] + go * xd[row + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if let Some(nb) = nb {
                let buf = grads.accum(nb, co);
                for ni in 0..n {
                    for o in 0..co {
                        let mut acc = T::zero();
                        let base = (ni * co + o) * oh * ow;
                        for p in 0..oh * ow {
                            acc = acc + g[base + p];
                        }
                        buf[o] = buf[o] + acc;
                    }
                }
            }
        },
    ))
}
