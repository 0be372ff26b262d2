//! Eye-observation module.
//!
//! The module refines one encoder feature in three steps: (1) partition the
//! map into quadrants and run a shared peripheral-vision attention over each,
//! (2) integrate the attended map with the original by concatenation and a
//! fusing convolution, (3) attend the integrated map once more, then fuse it
//! with a wide-field (dilated) view and the untouched original under three
//! softmax-coupled regulation weights.

use crate::error::{Error, Result};
use crate::layers::Conv2d;
use crate::ops;
use crate::pr::{couple_softmax, PerceptionCfg, PrBlock};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

/// Names of the three fused branches, in weight-reporting order.
pub const BRANCHES: [&str; 3] = ["peripheral", "foveal", "original"];

/// Peripheral-vision attention: split into quadrants, mix them jointly along
/// channels, restore the layout, and collapse to a one-channel sigmoid gate.
pub struct Pvm<T: Scalar> {
    mix: Conv2d<T>,      // 4C -> 4C over the channel-stacked quadrants
    collapse: Conv2d<T>, // C -> 1 after spatial reassembly
}

impl<T: Scalar> Pvm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            mix: Conv2d::k3(store, &format!("{name}.mix"), 4 * c, 4 * c, 1)?,
            collapse: Conv2d::k3(store, &format!("{name}.collapse"), c, 1, 1)?,
        })
    }

    /// Attention map in (0,1), shape `[N, 1, H, W]` for an `[N, C, H, W]`
    /// input with even spatial extents.
    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let c = f.shape()[1];
        let quads = ops::quad_split(f)?;
        let stacked = ops::concat_channels(&[&quads[0], &quads[1], &quads[2], &quads[3]])?;
        let mixed = ops::relu(&self.mix.forward(&stacked)?);
        let parts = ops::split_channels(&mixed, &[c, c, c, c])?;
        let restored = ops::quad_cat([&parts[0], &parts[1], &parts[2], &parts[3]])?;
        Ok(ops::sigmoid(&self.collapse.forward(&restored)?))
    }
}

/// Residual modulation `f + f * att`; a zero attention map is the identity.
pub fn pvm_modulate<T: Scalar>(f: &Tensor<T>, att: &Tensor<T>) -> Result<Tensor<T>> {
    ops::add(f, &ops::mul_channel(f, att)?)
}

/// Step 1: apply one shared attention to each quadrant of `f` independently,
/// then stitch the modulated quadrants back together.
pub fn partition_search<T: Scalar>(pvm: &Pvm<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
    let quads = ops::quad_split(f)?;
    let mut out = Vec::with_capacity(4);
    for q in &quads {
        let att = pvm.forward(q)?;
        out.push(pvm_modulate(q, &att)?);
    }
    ops::quad_cat([&out[0], &out[1], &out[2], &out[3]])
}

pub struct IeoModule<T: Scalar> {
    step1_pvm: Pvm<T>,
    integrate: Conv2d<T>, // 2C -> C
    step3_pvm: Pvm<T>,
    foveal: Conv2d<T>, // C -> C, dilation 5
    fuse: Conv2d<T>,   // 3C -> C
    pr: PrBlock<T>,
}

impl<T: Scalar> IeoModule<T> {
    /// `c` is the refined feature's channel count, `perceived_c` the channel
    /// count of the global feature the regulation weights are read from.
    pub fn new(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        perceived_c: usize,
        cfg: &PerceptionCfg,
    ) -> Result<Self> {
        Ok(Self {
            step1_pvm: Pvm::new(store, &format!("{name}.step1"), c)?,
            integrate: Conv2d::k3(store, &format!("{name}.integrate"), 2 * c, c, 1)?,
            step3_pvm: Pvm::new(store, &format!("{name}.step3"), c)?,
            foveal: Conv2d::k3(store, &format!("{name}.foveal"), c, c, 5)?,
            fuse: Conv2d::k3(store, &format!("{name}.fuse"), 3 * c, c, 1)?,
            pr: PrBlock::new(
                store,
                &format!("{name}.pr"),
                perceived_c,
                BRANCHES.iter().map(|s| s.to_string()).collect(),
                cfg,
            )?,
        })
    }

    /// Refine `f1` and report the coupled branch weights (`[N, 3]`, each row
    /// summing to 3, order [`BRANCHES`]).
    pub fn forward(&self, f1: &Tensor<T>, perceived: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = f1.shape();
        if s.len() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(Error::shape(
                "ieo",
                format!("{s:?}: quadrants of quadrants need extents divisible by 4"),
            ));
        }
        let f2 = partition_search(&self.step1_pvm, f1)?;
        let f3 = ops::relu(&self.integrate.forward(&ops::concat_channels(&[f1, &f2])?)?);
        let att3 = self.step3_pvm.forward(&f3)?;
        let f3m = pvm_modulate(&f3, &att3)?;
        let fov = self.foveal.forward(f1)?;

        let w = couple_softmax(&self.pr.weights(perceived)?)?;
        let b1 = ops::mul_item(&f3m, &ops::select_col(&w, 0)?)?;
        let b2 = ops::mul_item(&fov, &ops::select_col(&w, 1)?)?;
        let b3 = ops::mul_item(f1, &ops::select_col(&w, 2)?)?;
        let f4 = ops::relu(&self.fuse.forward(&ops::concat_channels(&[&b1, &b2, &b3])?)?);
        Ok((f4, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Param;

    fn zero_all(st: &ParamStore<f64>) {
        for p in st.all() {
            p.set_values(&vec![0.0; p.numel()]);
        }
    }

    fn set(p: &Param<f64>, f: impl Fn(usize) -> f64) {
        let vals: Vec<f64> = (0..p.numel()).map(f).collect();
        p.set_values(&vals);
    }

    #[test]
    fn zeroed_pvm_modulates_by_exactly_one_and_a_half() {
        // sigmoid(0) = 0.5 attention, so f + f*att = 1.5 f everywhere
        let mut st = ParamStore::new(1);
        let pvm = Pvm::new(&mut st, "pvm", 2).unwrap();
        zero_all(&st);
        let f = Tensor::from_vec(vec![1, 2, 4, 4], (0..32).map(|i| i as f64 - 7.0).collect()).unwrap();
        let att = pvm.forward(&f).unwrap();
        for &a in att.data() {
            assert!((a - 0.5).abs() < 1e-12);
        }
        let out = pvm_modulate(&f, &att).unwrap();
        for (o, x) in out.data().iter().zip(f.data()) {
            assert!((o - 1.5 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_search_is_quadrant_local() {
        // perturbing one quadrant of the input must not change the other three
        let mut st = ParamStore::<f64>::new(3);
        let pvm = Pvm::new(&mut st, "pvm", 1).unwrap();
        let base: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let f = Tensor::from_vec(vec![1, 1, 8, 8], base.clone()).unwrap();
        let mut bumped = base.clone();
        for r in 0..4 {
            for c in 4..8 {
                bumped[r * 8 + c] += 2.0; // top-right quadrant only
            }
        }
        let g = Tensor::from_vec(vec![1, 1, 8, 8], bumped).unwrap();
        let a = partition_search(&pvm, &f).unwrap();
        let b = partition_search(&pvm, &g).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let same = (a.at4(0, 0, r, c) - b.at4(0, 0, r, c)).abs() < 1e-12;
                let in_tr = r < 4 && c >= 4;
                assert_eq!(same, !in_tr, "quadrant leakage at ({r},{c})");
            }
        }
    }

    #[test]
    fn pvm_attention_is_global_within_the_map() {
        // the channel-stacked mixing conv sees all quadrants at once, so a
        // far-corner change can move the attention anywhere
        let mut st = ParamStore::<f64>::new(5);
        let pvm = Pvm::new(&mut st, "pvm", 1).unwrap();
        let f = Tensor::from_vec(vec![1, 1, 4, 4], vec![0.1; 16]).unwrap();
        let mut v = vec![0.1; 16];
        v[0] = 5.0; // top-left corner
        let g = Tensor::from_vec(vec![1, 1, 4, 4], v).unwrap();
        let a = pvm.forward(&f).unwrap();
        let b = pvm.forward(&g).unwrap();
        // bottom-right corner of the attention responds to a top-left edit
        assert!((a.at4(0, 0, 3, 3) - b.at4(0, 0, 3, 3)).abs() > 1e-9);
    }

    #[test]
    fn zeroed_module_with_identity_fuse_passes_original_branch() {
        // With all perception parameters at zero the coupled weights are
        // (1,1,1). A fusion conv selecting only the third (original) branch
        // must then reproduce f1 exactly.
        let mut st = ParamStore::new(9);
        let ieo = IeoModule::new(&mut st, "ieo", 1, 2, &PerceptionCfg::default()).unwrap();
        zero_all(&st);
        // fuse: [1, 3, 3, 3]; center tap of input channel 2 = the f1 branch
        let fuse_w = st.find("ieo.fuse.weight").unwrap();
        set(fuse_w, |i| if i == 2 * 9 + 4 { 1.0 } else { 0.0 });
        let f1 = Tensor::from_vec(vec![1, 1, 4, 4], (0..16).map(|i| i as f64 * 0.25).collect()).unwrap();
        let perceived = Tensor::from_vec(vec![1, 2, 4, 4], vec![0.3; 32]).unwrap();
        let (f4, w) = ieo.forward(&f1, &perceived).unwrap();
        for &wi in w.data() {
            assert!((wi - 1.0).abs() < 1e-12);
        }
        for (o, x) in f4.data().iter().zip(f1.data()) {
            assert!((o - x).abs() < 1e-12, "{o} vs {x}");
        }
    }

    #[test]
    fn coupled_branch_weights_sum_to_three() {
        let mut st = ParamStore::new(11);
        let ieo = IeoModule::new(&mut st, "ieo", 2, 2, &PerceptionCfg::default()).unwrap();
        let f1 = Tensor::from_vec(vec![2, 2, 8, 8], (0..256).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let perceived = Tensor::from_vec(vec![2, 2, 8, 8], (0..256).map(|i| (i as f64 * 0.07).sin()).collect()).unwrap();
        let (_, w) = ieo.forward(&f1, &perceived).unwrap();
        assert_eq!(w.shape(), &[2, 3]);
        for n in 0..2 {
            let s: f64 = w.data()[n * 3..(n + 1) * 3].iter().sum();
            assert!((s - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_extents_not_divisible_by_four() {
        let mut st = ParamStore::new(13);
        let ieo = IeoModule::new(&mut st, "ieo", 1, 1, &PerceptionCfg::default()).unwrap();
        let f1 = Tensor::from_vec(vec![1, 1, 6, 6], vec![0.0; 36]).unwrap();
        let p = Tensor::from_vec(vec![1, 1, 6, 6], vec![0.0; 36]).unwrap();
        assert!(ieo.forward(&f1, &p).is_err());
    }
}
