use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::{joint_tape, make_output};
use crate::tensor::Tensor;

const CLAMP: f64 = 1e-7;
const DENOM_GUARD: f64 = 1e-8;

fn check<T: Scalar>(op: &'static str, p: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", p.shape(), g.shape()),
        ));
    }
    if p.numel() == 0 {
        return Err(Error::arg(op, "empty prediction"));
    }
    Ok(())
}

/// Mean binary cross-entropy. Predictions are clamped away from {0, 1}
/// before the logs; no gradient flows where the clamp is active.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    check("bce_loss", p, g)?;
    let n = p.numel();
    let lo = T::from_f64(CLAMP);
    let hi = T::from_f64(1.0 - CLAMP);
    let pd = p.data_arc();
    let gd = g.data_arc();
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut acc = T::zero();
    for i in 0..n {
        let pc = pd[i].max(lo).min(hi);
        acc = acc - (gd[i] * pc.ln() + (T::one() - gd[i]) * (T::one() - pc).ln());
    }
    let loss = acc * inv_n;
    let tape = joint_tape(&[p, g])?;
    let src = p.node_id();
    Ok(make_output(tape, vec![], vec![loss], move |go, grads| {
        if let Some(src) = src {
            let buf = grads.accum(src, n);
            for i in 0..n {
                if pd[i] > lo && pd[i] < hi {
                    let d = (T::one() - gd[i]) / (T::one() - pd[i]) - gd[i] / pd[i];
                    buf[i] = buf[i] + go[0] * d * inv_n;
                }
            }
        }
    }))
}

/// Consistency-enhanced loss: `sum(p + g - 2 g p) / sum(g + p)`, zero when
/// both maps are entirely empty.
pub fn cel_loss<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    check("cel_loss", p, g)?;
    let n = p.numel();
    let pd = p.data_arc();
    let gd = g.data_arc();
    let two = T::from_f64(2.0);
    let mut s = T::zero();
    let mut d = T::zero();
    for i in 0..n {
        s = s + pd[i] + gd[i] - two * gd[i] * pd[i];
        d = d + pd[i] + gd[i];
    }
    let guard = T::from_f64(DENOM_GUARD);
    let degenerate = d < guard;
    let loss = if degenerate { T::zero() } else { s / d };
    let tape = joint_tape(&[p, g])?;
    let src = p.node_id();
    Ok(make_output(tape, vec![], vec![loss], move |go, grads| {
        if let Some(src) = src {
            if degenerate {
                return;
            }
            let buf = grads.accum(src, n);
            let d2 = d * d;
            for i in 0..n {
                // d/dp_i of S/D with dS/dp_i = 1 - 2 g_i and dD/dp_i = 1
                let num = (T::one() - two * gd[i]) * d - s;
                buf[i] = buf[i] + go[0] * num / d2;
            }
        }
    }))
}

/// The training objective: BCE plus the consistency term.
pub fn total_loss<T: Scalar>(p: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    crate::ops::add(&bce_loss(p, g)?, &cel_loss(p, g)?)
}
