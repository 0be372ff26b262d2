//! Central finite-difference verification of the backward pass.
//!
//! Every check wraps the tensors under test in a [`ParamStore`], evaluates a
//! scalar loss twice per probed entry (`±h`) and compares the numeric slope
//! against the recorded gradient. Checks run at 64-bit; finite differences
//! are too noisy at 32-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ieo::{pvm_modulate, IeoModule, Pvm};
use crate::layers::Mode;
use crate::network::{ModelConfig, PrNet, Variant};
use crate::ops::{self, PoolMode};
use crate::pr::{PerceptionCfg, PrBlock, Strategy};
use crate::tensor::{Init, Param, ParamStore, Tape, Tensor};
use crate::training::{bce_loss, cel_loss, total_loss};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric slopes.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    /// Number of parameter entries probed.
    pub entries: usize,
    pub max_rel_err: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// Probe every trainable parameter of `store` against central differences of
/// `eval`, which must rebuild the same graph (on a fresh tape) each call.
/// `per_param` caps the probed entries per parameter; 0 means all of them.
pub fn check<F>(name: &str, store: &ParamStore<f64>, per_param: usize, eval: F) -> Result<CheckOutcome>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    store.zero_grads();
    let loss = eval()?;
    loss.backward()?;

    let mut entries = 0;
    let mut max_rel_err = 0.0f64;
    for p in store.trainable() {
        let analytic = p.grad();
        let n = p.numel();
        let picks: Vec<usize> = if per_param == 0 || per_param >= n {
            (0..n).collect()
        } else {
            (0..per_param).map(|j| j * n / per_param).collect()
        };
        for i in picks {
            p.nudge(i, STEP);
            let up = eval()?.item();
            p.nudge(i, -2.0 * STEP);
            let down = eval()?.item();
            p.nudge(i, STEP);
            let numeric = (up - down) / (2.0 * STEP);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-3);
            max_rel_err = max_rel_err.max(((analytic[i] - numeric) / denom).abs());
            entries += 1;
        }
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        entries,
        max_rel_err,
    })
}

/// Contract the output to a scalar with fixed pseudo-random coefficients, so
/// no output entry's gradient can cancel or vanish by symmetry.
fn contract(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let n = y.numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.3..1.0)
        })
        .collect();
    let flat = y.reshape(vec![1, n])?;
    let c = Tensor::from_vec(vec![1, n], coeffs)?;
    ops::mean_rows(&ops::mul(&flat, &c)?)
}

/// Values in `±[0.2, 1.0]`, bounded away from the relu/max-pool kinks so the
/// numeric slope is well-defined at `±h`.
fn rand_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.2..1.0)
        })
        .collect()
}

fn param(store: &mut ParamStore<f64>, name: &str, shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<Param<f64>> {
    let p = store.create(name, shape, Init::Zeros)?;
    p.set_values(&rand_values(rng, p.numel()));
    Ok(p)
}

/// The fixed suite behind the `gradcheck` command and the acceptance tests:
/// every differentiable op, the attention/perception modules, the losses, and
/// three end-to-end decoder graphs.
pub fn run_standard_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240817);
    let mut out = Vec::new();

    // plain, strided and dilated convolution, w.r.t. input, weight and bias
    for (name, xs, ws, stride, pad, dilation) in [
        ("conv 3x3 pad 1", vec![2, 3, 5, 5], vec![4, 3, 3, 3], 1, 1, 1),
        ("conv stride 2", vec![1, 2, 7, 7], vec![3, 2, 3, 3], 2, 0, 1),
        ("conv dilation 2", vec![1, 2, 9, 9], vec![2, 2, 3, 3], 1, 2, 2),
    ] {
        let mut store = ParamStore::new(1);
        let x = param(&mut store, "x", xs, &mut rng)?;
        let w = param(&mut store, "w", ws, &mut rng)?;
        let b = param(&mut store, "b", vec![w.shape()[0]], &mut rng)?;
        out.push(check(name, &store, 0, || {
            let tape = Tape::new();
            let y = ops::conv2d(&tape.leaf(&x), &tape.leaf(&w), Some(&tape.leaf(&b)), stride, pad, dilation)?;
            contract(&y, 1)
        })?);
    }

    {
        let mut store = ParamStore::new(2);
        let x = param(&mut store, "x", vec![3, 4], &mut rng)?;
        let w = param(&mut store, "w", vec![4, 5], &mut rng)?;
        let b = param(&mut store, "b", vec![5], &mut rng)?;
        out.push(check("affine", &store, 0, || {
            let tape = Tape::new();
            let y = ops::affine(&tape.leaf(&x), &tape.leaf(&w), Some(&tape.leaf(&b)))?;
            contract(&y, 2)
        })?);
    }

    for (name, mode) in [
        ("batch norm train", Mode::Train),
        ("batch norm eval", Mode::Eval),
    ] {
        let mut store = ParamStore::new(3);
        let x = param(&mut store, "x", vec![3, 2, 4, 4], &mut rng)?;
        let gamma = param(&mut store, "gamma", vec![2], &mut rng)?;
        let beta = param(&mut store, "beta", vec![2], &mut rng)?;
        let rm = store.buffer("rm", vec![2], Init::Zeros)?;
        let rv = store.buffer("rv", vec![2], Init::Ones)?;
        rm.set_values(&[0.1, -0.2]);
        rv.set_values(&[0.8, 1.3]);
        out.push(check(name, &store, 0, || {
            let tape = Tape::new();
            let y = ops::batch_norm(&tape.leaf(&x), &tape.leaf(&gamma), &tape.leaf(&beta), &rm, &rv, 1e-5, 0.1, mode)?;
            contract(&y, 3)
        })?);
    }

    for (name, shape, mode) in [
        ("max pool", vec![2, 2, 6, 6], PoolMode::Max { k: 2, stride: 2 }),
        ("avg pool", vec![2, 2, 6, 6], PoolMode::Avg { k: 3, stride: 2 }),
        ("global avg pool", vec![2, 3, 4, 4], PoolMode::GlobalAvg),
        ("adaptive max down", vec![1, 2, 5, 5], PoolMode::AdaptiveMax { out_h: 3, out_w: 3 }),
        ("adaptive max up", vec![1, 2, 2, 2], PoolMode::AdaptiveMax { out_h: 4, out_w: 4 }),
    ] {
        let mut store = ParamStore::new(4);
        let x = param(&mut store, "x", shape, &mut rng)?;
        out.push(check(name, &store, 0, || {
            let tape = Tape::new();
            contract(&ops::pool2d(&tape.leaf(&x), mode)?, 4)
        })?);
    }

    for (name, oh, ow) in [("bilinear upsample", 7, 9), ("bilinear downsample", 3, 2)] {
        let mut store = ParamStore::new(5);
        let x = param(&mut store, "x", vec![1, 2, 4, 5], &mut rng)?;
        out.push(check(name, &store, 0, || {
            let tape = Tape::new();
            contract(&ops::resize_bilinear(&tape.leaf(&x), oh, ow)?, 5)
        })?);
    }

    {
        let mut store = ParamStore::new(6);
        let a = param(&mut store, "a", vec![2, 6], &mut rng)?;
        let b = param(&mut store, "b", vec![2, 6], &mut rng)?;
        out.push(check("pointwise chain", &store, 0, || {
            let tape = Tape::new();
            let at = tape.leaf(&a);
            let bt = tape.leaf(&b);
            let y = ops::mul(&ops::relu(&ops::add(&at, &bt)?), &ops::sigmoid(&ops::scale(&at, 0.7)))?;
            contract(&y, 6)
        })?);
    }

    {
        let mut store = ParamStore::new(7);
        let x = param(&mut store, "x", vec![3, 4], &mut rng)?;
        out.push(check("row softmax", &store, 0, || {
            let tape = Tape::new();
            contract(&ops::softmax_rows(&tape.leaf(&x))?, 7)
        })?);
        out.push(check("column select and row mean", &store, 0, || {
            let tape = Tape::new();
            let xt = tape.leaf(&x);
            let y = ops::add(&ops::select_col(&xt, 2)?, &ops::mean_rows(&xt)?)?;
            contract(&y, 8)
        })?);
    }

    {
        let mut store = ParamStore::new(8);
        let x = param(&mut store, "x", vec![2, 3, 4, 4], &mut rng)?;
        let att = param(&mut store, "att", vec![2, 1, 4, 4], &mut rng)?;
        let s = param(&mut store, "s", vec![2], &mut rng)?;
        out.push(check("channel and item broadcasts", &store, 0, || {
            let tape = Tape::new();
            let y = ops::mul_item(&ops::mul_channel(&tape.leaf(&x), &tape.leaf(&att))?, &tape.leaf(&s))?;
            contract(&y, 9)
        })?);
    }

    {
        let mut store = ParamStore::new(9);
        let x = param(&mut store, "x", vec![1, 2, 4, 4], &mut rng)?;
        out.push(check("quadrant split and reassembly", &store, 0, || {
            let tape = Tape::new();
            let q = ops::quad_split(&tape.leaf(&x))?;
            let scaled = ops::scale(&q[1], 2.0);
            let y = ops::quad_cat([&q[0], &scaled, &q[2], &q[3]])?;
            contract(&y, 10)
        })?);
        out.push(check("channel concat and split", &store, 0, || {
            let tape = Tape::new();
            let xt = tape.leaf(&x);
            let cat = ops::concat_channels(&[&xt, &xt])?;
            let parts = ops::split_channels(&cat, &[3, 1])?;
            contract(&ops::add(&parts[1], &ops::scale(&parts[1], 0.5))?, 11)
        })?);
    }

    {
        let mut store = ParamStore::new(10);
        let p = store.create("p", vec![8], Init::Zeros)?;
        p.set_values(&(0..8).map(|i| 0.1 + 0.09 * i as f64).collect::<Vec<_>>());
        let g = Tensor::from_vec(vec![8], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0])?;
        for (name, f) in [
            ("bce loss", bce_loss as fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>),
            ("consistency loss", cel_loss),
            ("total loss", total_loss),
        ] {
            out.push(check(name, &store, 0, || {
                let tape = Tape::new();
                f(&tape.leaf(&p), &g)
            })?);
        }
    }

    {
        let mut store = ParamStore::new(11);
        let pvm = Pvm::new(&mut store, "pvm", 4)?;
        let x = param(&mut store, "x", vec![1, 4, 4, 4], &mut rng)?;
        out.push(check("peripheral attention", &store, 0, || {
            let tape = Tape::new();
            let xt = tape.leaf(&x);
            contract(&pvm_modulate(&xt, &pvm.forward(&xt)?)?, 12)
        })?);
    }

    {
        let mut store = ParamStore::new(12);
        let cfg = PerceptionCfg {
            strategy: Strategy::Fc,
            pooled: (2, 2),
            reduction: 2,
            attach_perception: true,
        };
        let ieo = IeoModule::new(&mut store, "eye", 2, 3, &cfg)?;
        let f1 = param(&mut store, "f1", vec![1, 2, 8, 8], &mut rng)?;
        let per = param(&mut store, "per", vec![1, 3, 4, 4], &mut rng)?;
        out.push(check("eye observation module", &store, 4, || {
            let tape = Tape::new();
            let (f4, w) = ieo.forward(&tape.leaf(&f1), &tape.leaf(&per))?;
            ops::add(&contract(&f4, 13)?, &contract(&w, 14)?)
        })?);
    }

    for (name, strategy) in [
        ("perception head fc", Strategy::Fc),
        ("perception head spatial", Strategy::Spatial),
        ("perception head channel", Strategy::Channel),
    ] {
        let mut store = ParamStore::new(13);
        let cfg = PerceptionCfg {
            strategy,
            pooled: (2, 2),
            reduction: 2,
            attach_perception: true,
        };
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let block = PrBlock::new(&mut store, "head", 4, names, &cfg)?;
        let f = param(&mut store, "f", vec![2, 4, 4, 4], &mut rng)?;
        out.push(check(name, &store, 0, || {
            let tape = Tape::new();
            contract(&block.weights(&tape.leaf(&f))?, 15)
        })?);
    }

    // end-to-end decoder graphs, one probe pair per parameter
    let tiny = |variant: Variant, strategy: Strategy, ieo: bool, cfe: bool, input: usize| ModelConfig {
        stage_channels: [4, 4, 4, 4, 4],
        unified: 4,
        variant,
        strategy,
        pooled: (2, 2),
        reduction: 2,
        ieo,
        cfe,
        input_size: input,
        seed: 7,
    };
    for (name, cfg, probes) in [
        ("pyramid decoder end to end", tiny(Variant::Fpn, Strategy::Fc, false, false, 32), 2),
        ("guided decoder end to end", tiny(Variant::Ggs, Strategy::Spatial, false, false, 32), 2),
        ("full model end to end", tiny(Variant::GgsSsd, Strategy::Channel, true, true, 128), 1),
    ] {
        let net = PrNet::<f64>::new(cfg)?;
        let size = net.cfg.input_size;
        let img = Tensor::from_vec(
            vec![1, 3, size, size],
            (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?;
        let mask = Tensor::from_vec(
            vec![1, 1, size, size],
            (0..size * size).map(|i| f64::from(u8::from((i / size + i % size) % 3 == 0))).collect(),
        )?;
        out.push(check(name, net.store(), probes, || {
            let tape = Tape::new();
            let (pred, _) = net.forward(&tape.watch(&img), Mode::Eval)?;
            total_loss(&pred, &mask)
        })?);
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_suite_is_green() {
        let outcomes = run_standard_suite().unwrap();
        assert!(outcomes.len() >= 25);
        for o in &outcomes {
            assert!(o.entries > 0, "{} probed nothing", o.name);
            assert!(
                o.passed(),
                "{}: max relative error {} over {} entries",
                o.name,
                o.max_rel_err,
                o.entries
            );
        }
    }

    #[test]
    fn a_broken_gradient_is_caught() {
        // relu's numeric slope at the kink disagrees with the one-sided
        // analytic gradient, so probing exactly zero must trip the check
        let mut store = ParamStore::new(0);
        let w = store.create("w", vec![1], Init::Zeros).unwrap();
        let o = check("kink", &store, 0, || {
            let tape = Tape::new();
            Ok(ops::relu(&tape.leaf(&w)))
        })
        .unwrap();
        assert!(!o.passed());
    }
}
