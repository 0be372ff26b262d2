//! Perception-and-regulation block: perceive a global feature, emit one
//! regulation weight per registered feature, couple small weight groups with
//! a scaled softmax, and apply the weights multiplicatively during fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Dense};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

/// How the block perceives the global feature.
///
/// All three strategies end in `2 * sigmoid(..)`, so every emitted weight
/// lies in the open interval (0, 2): below 1 suppresses a feature, above 1
/// amplifies it, and the midpoint leaves it unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Pool to a fixed extent, flatten, and run a two-layer perceptron that
    /// emits all weights jointly.
    Fc,
    /// One spatial-attention memory unit per weight: two sigmoid-gated
    /// convolutions collapsed by global average pooling.
    Spatial,
    /// One channel-attention memory unit per weight: global average pooling
    /// followed by a sigmoid-gated projection, averaged over channels.
    Channel,
}

/// Construction-time knobs for a [`PrBlock`].
#[derive(Debug, Clone)]
pub struct PerceptionCfg {
    pub strategy: Strategy,
    /// Pooled extent for the `Fc` strategy.
    pub pooled: (usize, usize),
    /// Channel reduction ratio for the memory-unit strategies.
    pub reduction: usize,
    /// Whether gradients flow from the weights back into the perceived
    /// feature. When false the block observes a detached copy.
    pub attach_perception: bool,
}

impl Default for PerceptionCfg {
    fn default() -> Self {
        Self {
            strategy: Strategy::Fc,
            pooled: (4, 4),
            reduction: 16,
            attach_perception: true,
        }
    }
}

/// A single perceive-and-emit unit under the `Spatial` or `Channel` strategy.
pub enum MemoryUnit<T: Scalar> {
    Spatial { reduce: Conv2d<T>, collapse: Conv2d<T> },
    Channel { gate: Dense<T> },
}

impl<T: Scalar> MemoryUnit<T> {
    fn spatial(store: &mut ParamStore<T>, name: &str, c: usize, reduction: usize) -> Result<Self> {
        let mid = (c / reduction).max(1);
        Ok(MemoryUnit::Spatial {
            reduce: Conv2d::k3(store, &format!("{name}.reduce"), c, mid, 1)?,
            collapse: Conv2d::k3(store, &format!("{name}.collapse"), mid, 1, 1)?,
        })
    }

    fn channel(store: &mut ParamStore<T>, name: &str, c: usize, reduction: usize) -> Result<Self> {
        let mid = (c / reduction).max(1);
        Ok(MemoryUnit::Channel {
            gate: Dense::new(store, &format!("{name}.gate"), c, mid)?,
        })
    }

    /// Emit one weight per batch item, shape `[N, 1]`, each in (0, 2).
    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            MemoryUnit::Spatial { reduce, collapse } => {
                let a = ops::sigmoid(&reduce.forward(f)?);
                let a = ops::sigmoid(&collapse.forward(&a)?);
                let a = ops::scale(&a, T::from_f64(2.0));
                let n = f.shape()[0];
                ops::pool2d(&a, ops::PoolMode::GlobalAvg)?.reshape(vec![n, 1])
            }
            MemoryUnit::Channel { gate } => {
                let s = f.shape();
                let (n, c) = (s[0], s[1]);
                let g = ops::pool2d(f, ops::PoolMode::GlobalAvg)?.reshape(vec![n, c])?;
                let a = ops::scale(&ops::sigmoid(&gate.forward(&g)?), T::from_f64(2.0));
                ops::mean_rows(&a)
            }
        }
    }
}

/// Emits `names.len()` regulation weights from one global feature map.
pub struct PrBlock<T: Scalar> {
    names: Vec<String>,
    attach: bool,
    head: Head<T>,
}

enum Head<T: Scalar> {
    Fc {
        pooled: (usize, usize),
        hidden: Dense<T>,
        out: Dense<T>,
    },
    Units(Vec<MemoryUnit<T>>),
}

impl<T: Scalar> PrBlock<T> {
    /// `in_c` is the channel count of the perceived feature; `names` fixes
    /// both the number of emitted weights and their reporting order.
    pub fn new(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_c: usize,
        names: Vec<String>,
        cfg: &PerceptionCfg,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::arg("pr_block", "needs at least one regulated name"));
        }
        let head = match cfg.strategy {
            Strategy::Fc => {
                let (ph, pw) = cfg.pooled;
                let flat = in_c * ph * pw;
                let hidden_d = in_c * names.len();
                Head::Fc {
                    pooled: cfg.pooled,
                    hidden: Dense::new(store, &format!("{prefix}.hidden"), flat, hidden_d)?,
                    out: Dense::new(store, &format!("{prefix}.out"), hidden_d, names.len())?,
                }
            }
            Strategy::Spatial => Head::Units(
                names
                    .iter()
                    .enumerate()
                    .map(|(i, _)| MemoryUnit::spatial(store, &format!("{prefix}.unit{i}"), in_c, cfg.reduction))
                    .collect::<Result<_>>()?,
            ),
            Strategy::Channel => Head::Units(
                names
                    .iter()
                    .enumerate()
                    .map(|(i, _)| MemoryUnit::channel(store, &format!("{prefix}.unit{i}"), in_c, cfg.reduction))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self {
            names,
            attach: cfg.attach_perception,
            head,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Perceive `f` (NCHW) and emit weights of shape `[N, names.len()]`,
    /// every entry in (0, 2).
    pub fn weights(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        if f.shape().len() != 4 {
            return Err(Error::shape("pr_block", format!("{:?}", f.shape())));
        }
        let f = if self.attach { f.clone() } else { ops::stop_gradient(f) };
        match &self.head {
            Head::Fc { pooled, hidden, out } => {
                let n = f.shape()[0];
                let p = ops::pool2d(
                    &f,
                    ops::PoolMode::AdaptiveMax {
                        out_h: pooled.0,
                        out_w: pooled.1,
                    },
                )?;
                let numel = p.numel();
                let flat = p.reshape(vec![n, numel / n])?;
                let h = ops::relu(&hidden.forward(&flat)?);
                Ok(ops::scale(&ops::sigmoid(&out.forward(&h)?), T::from_f64(2.0)))
            }
            Head::Units(units) => {
                let cols: Vec<Tensor<T>> = units.iter().map(|u| u.forward(&f)).collect::<Result<_>>()?;
                let refs: Vec<&Tensor<T>> = cols.iter().collect();
                ops::concat_channels(&refs)
            }
        }
    }
}

/// Couple a `[N, K]` group of raw weights so each row sums to exactly `K`:
/// `w'_k = K * softmax(w)_k`. Relative order within a row is preserved.
pub fn couple_softmax<T: Scalar>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    let s = raw.shape();
    if s.len() != 2 {
        return Err(Error::shape("couple_softmax", format!("{:?}", s)));
    }
    Ok(ops::scale(&ops::softmax_rows(raw)?, T::from_f64(s[1] as f64)))
}

/// Scale each named feature by its column of the weight matrix `w`
/// (`[N, names.len()]`, one scalar per batch item). Every registered name
/// must be present among the features.
pub fn apply_regulation<T: Scalar>(
    features: &[(String, Tensor<T>)],
    names: &[String],
    w: &Tensor<T>,
) -> Result<Vec<(String, Tensor<T>)>> {
    if w.shape().len() != 2 || w.shape()[1] != names.len() {
        return Err(Error::shape(
            "apply_regulation",
            format!("weights {:?} vs {} names", w.shape(), names.len()),
        ));
    }
    let mut out = Vec::with_capacity(features.len());
    for (fname, f) in features {
        match names.iter().position(|n| n == fname) {
            Some(k) => {
                let col = ops::select_col(w, k)?;
                out.push((fname.clone(), ops::mul_item(f, &col)?));
            }
            None => out.push((fname.clone(), f.clone())),
        }
    }
    for n in names {
        if !features.iter().any(|(fname, _)| fname == n) {
            return Err(Error::arg(
                "apply_regulation",
                format!("registered feature '{n}' not supplied"),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    // shadow proptest's `Strategy` trait with the perception enum
    use crate::pr::Strategy;

    fn store() -> ParamStore<f64> {
        ParamStore::new(7)
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn weights_stay_in_open_interval() {
        for strat in [Strategy::Fc, Strategy::Spatial, Strategy::Channel] {
            let mut st = store();
            let cfg = PerceptionCfg {
                strategy: strat,
                ..Default::default()
            };
            let blk = PrBlock::new(&mut st, "pr", 8, names(3), &cfg).unwrap();
            let f = Tensor::from_vec(
                vec![2, 8, 8, 8],
                (0..2 * 8 * 8 * 8).map(|i| (i as f64 * 0.37).sin() * 3.0).collect(),
            )
            .unwrap();
            let w = blk.weights(&f).unwrap();
            assert_eq!(w.shape(), &[2, 3]);
            for &v in w.data() {
                assert!(v > 0.0 && v < 2.0, "weight {v} outside (0,2)");
            }
        }
    }

    #[test]
    fn fc_head_dimensions_follow_channels_and_outputs() {
        // 64 channels, 8 outputs, 4x4 pooling: flatten 1024 -> hidden 512 -> 8
        let mut st = store();
        let blk = PrBlock::new(&mut st, "pr", 64, names(8), &PerceptionCfg::default()).unwrap();
        match &blk.head {
            Head::Fc { hidden, out, .. } => {
                assert_eq!(hidden.weight.shape(), &[64 * 16, 64 * 8]);
                assert_eq!(out.weight.shape(), &[64 * 8, 8]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_parameters_emit_exactly_one() {
        // sigmoid(0) = 0.5, doubled: a fresh-zeroed block is a no-op regulator.
        for strat in [Strategy::Fc, Strategy::Spatial, Strategy::Channel] {
            let mut st = store();
            let cfg = PerceptionCfg {
                strategy: strat,
                ..Default::default()
            };
            let blk = PrBlock::new(&mut st, "pr", 8, names(2), &cfg).unwrap();
            for p in st.all() {
                p.set_values(&vec![0.0; p.numel()]);
            }
            let f = Tensor::from_vec(vec![1, 8, 4, 4], (0..8 * 16).map(|i| i as f64 * 0.01).collect()).unwrap();
            let w = blk.weights(&f).unwrap();
            for &v in w.data() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn couple_softmax_matches_hand_value() {
        // equal logits split evenly; (ln1, ln2, ln3) weights in ratio 1:2:3
        let raw = Tensor::from_vec(
            vec![2, 3],
            vec![0.4, 0.4, 0.4, 1.0f64.ln(), 2.0f64.ln(), 3.0f64.ln()],
        )
        .unwrap();
        let w = couple_softmax(&raw).unwrap();
        let d = w.data();
        for &v in &d[0..3] {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((d[3] - 0.5).abs() < 1e-12);
        assert!((d[4] - 1.0).abs() < 1e-12);
        assert!((d[5] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn apply_regulation_scales_registered_features_only() {
        let w = Tensor::from_vec(vec![1, 2], vec![0.5, 2.0]).unwrap();
        let f0 = Tensor::from_vec(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let f1 = Tensor::from_vec(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let extra = Tensor::from_vec(vec![1, 1, 1, 1], vec![7.0]).unwrap();
        let feats = vec![
            ("a".to_string(), f0),
            ("b".to_string(), f1),
            ("c".to_string(), extra),
        ];
        let out = apply_regulation(&feats, &["a".to_string(), "b".to_string()], &w).unwrap();
        assert_eq!(out[0].1.data().to_vec(), vec![0.5, 1.0]);
        assert_eq!(out[1].1.data().to_vec(), vec![6.0]);
        assert_eq!(out[2].1.data().to_vec(), vec![7.0]);
    }

    #[test]
    fn apply_regulation_rejects_missing_feature() {
        let w = Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap();
        let feats: Vec<(String, Tensor<f64>)> = vec![];
        assert!(apply_regulation(&feats, &["a".to_string()], &w).is_err());
    }

    #[test]
    fn detached_perception_blocks_gradient_to_feature_but_not_params() {
        let mut st = store();
        let cfg = PerceptionCfg {
            attach_perception: false,
            ..Default::default()
        };
        let blk = PrBlock::new(&mut st, "pr", 4, names(1), &cfg).unwrap();
        let tape = Tape::<f64>::new();
        let f = tape.watch(
            &Tensor::from_vec(vec![1, 4, 4, 4], (0..4 * 16).map(|i| i as f64 * 0.1).collect()).unwrap(),
        );
        let w = blk.weights(&f).unwrap();
        let grads = tape.backward(&w.reshape(vec![]).unwrap()).unwrap();
        assert!(grads.of(&f).is_none(), "no gradient should reach the observed feature");
        let any_param_grad = st.trainable().any(|p| p.grad().iter().any(|&g| g != 0.0));
        assert!(any_param_grad, "block parameters must still receive gradients");
    }

    use crate::tensor::Tape;

    proptest! {
        #[test]
        fn coupled_rows_sum_to_k(rows in proptest::collection::vec(
            proptest::collection::vec(-6.0f64..6.0, 3), 1..5)) {
            let n = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let raw = Tensor::from_vec(vec![n, 3], flat).unwrap();
            let w = couple_softmax(&raw).unwrap();
            for r in 0..n {
                let s: f64 = w.data()[r * 3..(r + 1) * 3].iter().sum();
                prop_assert!((s - 3.0).abs() < 1e-9);
            }
        }

        #[test]
        fn coupling_is_shift_invariant(row in proptest::collection::vec(-4.0f64..4.0, 3), shift in -3.0f64..3.0) {
            let a = Tensor::from_vec(vec![1, 3], row.clone()).unwrap();
            let b = Tensor::from_vec(vec![1, 3], row.iter().map(|v| v + shift).collect()).unwrap();
            let wa = couple_softmax(&a).unwrap();
            let wb = couple_softmax(&b).unwrap();
            for (x, y) in wa.data().iter().zip(wb.data().iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
