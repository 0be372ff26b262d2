use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::{joint_tape, make_output};
use crate::tensor::Tensor;

/// `out = input . weight + bias` for `input: N x D`, `weight: D x M`.
pub fn affine<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if input.shape().len() != 2 || weight.shape().len() != 2 {
        return Err(Error::shape(
            "affine",
            format!("input {:?}, weight {:?}", input.shape(), weight.shape()),
        ));
    }
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (dw, m) = (weight.shape()[0], weight.shape()[1]);
    if d != dw {
        return Err(Error::shape(
            "affine",
            format!("inner extents disagree: {} vs {}", d, dw),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != m {
            return Err(Error::shape(
                "affine",
                format!("bias length {} vs output width {}", b.numel(), m),
            ));
        }
    }

    let mut inputs: Vec<&Tensor<T>> = vec![input, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    let tape = joint_tape(&inputs)?;

    let xd = input.data_arc();
    let wd = weight.data_arc();
    let bd = bias.map(|b| b.data_arc());
    let mut data = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = match &bd {
                Some(b) => b[j],
                None => T::zero(),
            };
            for k in 0..d {
                acc = acc + xd[i * d + k] * wd[k * m + j];
            }
            data[i * m + j] = acc;
        }
    }

    let (nx, nw) = (input.node_id(), weight.node_id());
    let nb = bias.and_then(|b| b.node_id());
    Ok(make_output(tape, vec![n, m], data, move |g, grads| {
        if let Some(nx) = nx {
            let buf = grads.accum(nx, n * d);
            for i in 0..n {
                for k in 0..d {
                    let mut acc = T::zero();
                    for j in 0..m {
                        acc = acc + g[i * m + j] * wd[k * m + j];
                    }
                    buf[i * d + k] = buf[i * d + k] + acc;
                }
            }
        }
        if let Some(nw) = nw {
            let buf = grads.accum(nw, d * m);
            for k in 0..d {
                for j in 0..m {
                    let mut acc = T::zero();
                    for i in 0..n {
                        acc = acc + xd[i * d + k] * g[i * m + j];
                    }
                    buf[k * m + j] = buf[k * m + j] + acc;
                }
            }
        }
        if let Some(nb) = nb {
            let buf = grads.accum(nb, m);
            for j in 0..m {
                let mut acc = T::zero();
                for i in 0..n {
                    acc = acc + g[i * m + j];
                }
                buf[j] = buf[j] + acc;
            }
        }
    }))
}

/// Concatenate along axis 1 (channels for NCHW, columns for N x K).
/// All other extents must agree.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::arg("concat_channels", "no parts"));
    }
    let rank = parts[0].shape().len();
    if rank < 2 {
        return Err(Error::shape("concat_channels", "rank must be >= 2"));
    }
    let outer = parts[0].shape()[0];
    let inner: usize = parts[0].shape()[2..].iter().product();
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        if p.shape().len() != rank
            || p.shape()[0] != outer
            || p.shape()[2..] != parts[0].shape()[2..]
        {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", p.shape(), parts[0].shape()),
            ));
        }
        channels.push(p.shape()[1]);
    }
    let total_c: usize = channels.iter().sum();
    let tape = joint_tape(parts)?;

    let mut data = vec![T::zero(); outer * total_c * inner];
    let mut offset_c = 0;
    for (p, &c) in parts.iter().zip(&channels) {
        let pd = p.data();
        for o in 0..outer {
            let src = &pd[o * c * inner..(o + 1) * c * inner];
            let dst_off = (o * total_c + offset_c) * inner;
            data[dst_off..dst_off + c * inner].copy_from_slice(src);
        }
        offset_c += c;
    }

    let mut out_shape = parts[0].shape().to_vec();
    out_shape[1] = total_c;
    let nodes: Vec<Option<usize>> = parts.iter().map(|p| p.node_id()).collect();
    let chans = channels.clone();
    Ok(make_output(tape, out_shape, data, move |g, grads| {
        let mut offset_c = 0;
        for (node, &c) in nodes.iter().zip(&chans) {
            if let Some(node) = node {
                let buf = grads.accum(*node, outer * c * inner);
                for o in 0..outer {
                    let src_off = (o * total_c + offset_c) * inner;
                    let dst = &mut buf[o * c * inner..(o + 1) * c * inner];
                    for (d, s) in dst.iter_mut().zip(&g[src_off..src_off + c * inner]) {
                        *d = *d + *s;
                    }
                }
            }
            offset_c += c;
        }
    }))
}

/// Inverse of [`concat_channels`]: split axis 1 into the given extents.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let rank = x.shape().len();
    if rank < 2 {
        return Err(Error::shape("split_channels", "rank must be >= 2"));
    }
    let total: usize = sizes.iter().sum();
    if total != x.shape()[1] {
        return Err(Error::shape(
            "split_channels",
            format!("sizes sum {} vs axis extent {}", total, x.shape()[1]),
        ));
    }
    let outer = x.shape()[0];
    let inner: usize = x.shape()[2..].iter().product();
    let xd = x.data();
    let tape = x.track().map(|(t, _)| t.clone());
    let src_node = x.node_id();
    let total_numel = x.numel();

    let mut out = Vec::with_capacity(sizes.len());
    let mut offset_c = 0;
    for &c in sizes {
        let mut data = vec![T::zero(); outer * c * inner];
        for o in 0..outer {
            let src_off = (o * total + offset_c) * inner;
            data[o * c * inner..(o + 1) * c * inner]
                .copy_from_slice(&xd[src_off..src_off + c * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[1] = c;
        let off = offset_c;
        out.push(make_output(tape.clone(), shape, data, move |g, grads| {
            if let Some(src) = src_node {
                let buf = grads.accum(src, total_numel);
                for o in 0..outer {
                    let dst_off = (o * total + off) * inner;
                    for p in 0..c * inner {
                        buf[dst_off + p] = buf[dst_off + p] + g[o * c * inner + p];
                    }
                }
            }
        }));
        offset_c += c;
    }
    Ok(out)
}

fn quad_offsets(h: usize, w: usize, q: usize) -> (usize, usize) {
    // quadrant order: tl, tr, bl, br
    match q {
        0 => (0, 0),
        1 => (0, w / 2),
        2 => (h / 2, 0),
        _ => (h / 2, w / 2),
    }
}

/// Split an NCHW tensor into its four spatial quadrants (tl, tr, bl, br).
pub fn quad_split<T: Scalar>(x: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("quad_split", format!("{:?}", s)));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::arg(
            "quad_split",
            format!("spatial extents must be even, got {}x{}", h, w),
        ));
    }
    let (qh, qw) = (h / 2, w / 2);
    let xd = x.data();
    let tape = x.track().map(|(t, _)| t.clone());
    let src_node = x.node_id();
    let total = x.numel();

    let mut parts = Vec::with_capacity(4);
    for q in 0..4 {
        let (oy, ox) = quad_offsets(h, w, q);
        let mut data = vec![T::zero(); n * c * qh * qw];
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..qh {
                    let src = ((ni * c + ci) * h + oy + y) * w + ox;
                    let dst = ((ni * c + ci) * qh + y) * qw;
                    data[dst..dst + qw].copy_from_slice(&xd[src..src + qw]);
                }
            }
        }
        parts.push(make_output(
            tape.clone(),
            vec![n, c, qh, qw],
            data,
            move |g, grads| {
                if let Some(src_node) = src_node {
                    let buf = grads.accum(src_node, total);
                    for ni in 0..n {
                        for ci in 0..c {
                            for y in 0..qh {
                                let dst = ((ni * c + ci) * h + oy + y) * w + ox;
                                let src = ((ni * c + ci) * qh + y) * qw;
                                for xw in 0..qw {
                                    buf[dst + xw] = buf[dst + xw] + g[src + xw];
                                }
                            }
                        }
                    }
                }
            },
        ));
    }
    Ok(parts.try_into().map_err(|_| ()).expect("four parts"))
}

/// Reassemble four equal-shape quadrants (tl, tr, bl, br) into one map.
pub fn quad_cat<T: Scalar>(parts: [&Tensor<T>; 4]) -> Result<Tensor<T>> {
    let s = parts[0].shape().to_vec();
    if s.len() != 4 {
        return Err(Error::shape("quad_cat", format!("{:?}", s)));
    }
    for p in &parts {
        if p.shape() != s {
            return Err(Error::shape(
                "quad_cat",
                format!("{:?} vs {:?}", p.shape(), s),
            ));
        }
    }
    let (n, c, qh, qw) = (s[0], s[1], s[2], s[3]);
    let (h, w) = (qh * 2, qw * 2);
    let tape = joint_tape(&parts)?;
    let mut data = vec![T::zero(); n * c * h * w];
    for (q, p) in parts.iter().enumerate() {
        let (oy, ox) = quad_offsets(h, w, q);
        let pd = p.data();
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..qh {
                    let dst = ((ni * c + ci) * h + oy + y) * w + ox;
                    let src = ((ni * c + ci) * qh + y) * qw;
                    data[dst..dst + qw].copy_from_slice(&pd[src..src + qw]);
                }
            }
        }
    }
    let nodes: Vec<Option<usize>> = parts.iter().map(|p| p.node_id()).collect();
    Ok(make_output(
        tape,
        vec![n, c, h, w],
        data,
        move |g, grads| {
            for (q, node) in nodes.iter().enumerate() {
                if let Some(node) = node {
                    let (oy, ox) = quad_offsets(h, w, q);
                    let buf = grads.accum(*node, n * c * qh * qw);
                    for ni in 0..n {
                        for ci in 0..c {
                            for y in 0..qh {
                                let src = ((ni * c + ci) * h + oy + y) * w + ox;
                                let dst = ((ni * c + ci) * qh + y) * qw;
                                for xw in 0..qw {
                                    buf[dst + xw] = buf[dst + xw] + g[src + xw];
                                }
                            }
                        }
                    }
                }
            }
        },
    ))
}
