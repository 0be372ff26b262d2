use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::make_output;
use crate::tensor::Tensor;

/// Bilinear resize with the align-corners=false convention:
/// `src = (dst + 0.5) * in/out - 0.5`, clamped to the valid range.
/// Exact on constant inputs.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::shape("resize_bilinear", format!("{:?}", s)));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("resize_bilinear", "output extents must be >= 1"));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h == out_h && w == out_w && !input.is_tracked() {
        return Ok(input.clone());
    }

    // (low index, high index, weight of high)
    let axis_map = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ymap = axis_map(out_h, h);
    let xmap = axis_map(out_w, w);

    let xd = input.data_arc();
    let mut data = vec![T::zero(); n * c * out_h * out_w];
    for p in 0..n * c {
        for (oy, &(y0, y1, fy)) in ymap.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xmap.iter().enumerate() {
                let v00 = xd[(p * h + y0) * w + x0].to_f64();
                let v01 = xd[(p * h + y0) * w + x1].to_f64();
                let v10 = xd[(p * h + y1) * w + x0].to_f64();
                let v11 = xd[(p * h + y1) * w + x1].to_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                data[(p * out_h + oy) * out_w + ox] = T::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }

    let tape = input.track().map(|(t, _)| t.clone());
    let src = input.node_id();
    let numel_in = input.numel();
    Ok(make_output(
        tape,
        vec![n, c, out_h, out_w],
        data,
        move |g, grads| {
            if let Some(src) = src {
                let buf = grads.accum(src, numel_in);
                for p in 0..n * c {
                    for (oy, &(y0, y1, fy)) in ymap.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xmap.iter().enumerate() {
                            let go = g[(p * out_h + oy) * out_w + ox].to_f64();
                            let mut put = |y: usize, x: usize, wgt: f64| {
                                let i = (p * h + y) * w + x;
                                buf[i] = buf[i] + T::from_f64(go * wgt);
                            };
                            put(y0, x0, (1.0 - fx) * (1.0 - fy));
                            put(y0, x1, fx * (1.0 - fy));
                            put(y1, x0, (1.0 - fx) * fy);
                            put(y1, x1, fx * fy);
                        }
                    }
                }
            }
        },
    ))
}
