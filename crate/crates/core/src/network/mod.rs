//! The assembled saliency network: a five-stage convolutional encoder,
//! channel unification, an optional deeper global-perception tail, optional
//! per-level refinement modules, and a top-down decoder whose every merge is
//! regulated by globally perceived weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ieo::IeoModule;
use crate::layers::{Conv2d, ConvBnRelu, Mode};
use crate::ops;
use crate::pr::{PerceptionCfg, PrBlock, Strategy};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

/// Decoder flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain weighted top-down merging.
    Fpn,
    /// Adds a global guidance branch into the three deepest merges.
    Ggs,
    /// As `Ggs`, with three extra encoder stages feeding the perception.
    GgsSsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stage_channels: [usize; 5],
    /// Channel count after per-stage unification; all decoder features use it.
    pub unified: usize,
    pub variant: Variant,
    pub strategy: Strategy,
    /// Pooled extent of the fully-connected perception head.
    pub pooled: (usize, usize),
    /// Channel reduction of the memory-unit perception heads.
    pub reduction: usize,
    /// Enable the eye-observation refinement at the three deepest levels.
    pub ieo: bool,
    /// Enable the dilated context-enrichment refinement at the same levels.
    pub cfe: bool,
    /// Side length images are resized to for training and prediction.
    pub input_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: [16, 32, 64, 64, 64],
            unified: 16,
            variant: Variant::GgsSsd,
            strategy: Strategy::Fc,
            pooled: (4, 4),
            reduction: 16,
            ieo: true,
            cfe: false,
            input_size: 128,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn fpn() -> Self {
        Self {
            variant: Variant::Fpn,
            ieo: false,
            ..Self::default()
        }
    }

    pub fn ggs() -> Self {
        Self {
            variant: Variant::Ggs,
            ieo: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.iter().any(|&c| c == 0) || self.unified == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.variant == Variant::GgsSsd && self.input_size < 128 {
            return Err(Error::Config(format!(
                "input_size {} too small for the deep perception tail; needs >= 128",
                self.input_size
            )));
        }
        if self.ieo && self.input_size % 128 != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a multiple of 128 when the eye-observation module is on",
                self.input_size
            )));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction must be positive".into()));
        }
        if self.pooled.0 == 0 || self.pooled.1 == 0 {
            return Err(Error::Config("pooled extent must be positive".into()));
        }
        Ok(())
    }

    fn perception_cfg(&self) -> PerceptionCfg {
        PerceptionCfg {
            strategy: self.strategy,
            pooled: self.pooled,
            reduction: self.reduction,
            attach_perception: true,
        }
    }
}

/// Per-image values of one regulation weight.
#[derive(Debug, Clone, Serialize)]
pub struct WeightRecord {
    pub name: String,
    pub per_item: Vec<f64>,
}

/// Everything the forward pass reports besides the prediction.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub weights: Vec<WeightRecord>,
}

struct Stage<T: Scalar> {
    a: ConvBnRelu<T>,
    b: ConvBnRelu<T>,
}

struct Backbone<T: Scalar> {
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> Backbone<T> {
    fn new(store: &mut ParamStore<T>, channels: &[usize; 5]) -> Result<Self> {
        let mut stages = Vec::with_capacity(5);
        let mut in_c = 3;
        for (k, &out_c) in channels.iter().enumerate() {
            stages.push(Stage {
                a: ConvBnRelu::k3(store, &format!("backbone.stage{}.a", k + 1), in_c, out_c)?,
                b: ConvBnRelu::k3(store, &format!("backbone.stage{}.b", k + 1), out_c, out_c)?,
            });
            in_c = out_c;
        }
        Ok(Self { stages })
    }

    /// Raw per-stage features, stage k at 1/2^k of the input extent.
    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(5);
        let mut cur = x.clone();
        for st in &self.stages {
            let f = st.b.forward(&st.a.forward(&cur, mode)?, mode)?;
            cur = ops::pool2d(&f, ops::PoolMode::Max { k: 2, stride: 2 })?;
            out.push(cur.clone());
        }
        Ok(out)
    }
}

/// Three extra encoder stages past stage 5, combined with stage 4 into a
/// deeper, wider-context perception feature.
struct DeepTail<T: Scalar> {
    s6: ConvBnRelu<T>,
    s7: ConvBnRelu<T>,
    s8: ConvBnRelu<T>,
    combine: Conv2d<T>,
}

impl<T: Scalar> DeepTail<T> {
    fn new(store: &mut ParamStore<T>, c4: usize, c5: usize, unified: usize) -> Result<Self> {
        Ok(Self {
            s6: ConvBnRelu::k3(store, "tail.stage6", c5, c5)?,
            s7: ConvBnRelu::k3(store, "tail.stage7", c5, c5)?,
            s8: ConvBnRelu::k3(store, "tail.stage8", c5, c5)?,
            combine: Conv2d::k1(store, "tail.combine", c4 + 2 * c5, unified)?,
        })
    }

    fn forward(&self, raw4: &Tensor<T>, raw5: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let f6 = self.s6.forward(raw5, mode)?; // keeps the stage-5 extent
        let f7 = ops::pool2d(&self.s7.forward(&f6, mode)?, ops::PoolMode::Max { k: 2, stride: 2 })?;
        let f8 = ops::pool2d(&self.s8.forward(&f7, mode)?, ops::PoolMode::Max { k: 2, stride: 2 })?;
        let (h, w) = (f7.shape()[2], f7.shape()[3]);
        let a = ops::resize_bilinear(raw4, h, w)?;
        let b = ops::resize_bilinear(&f8, h, w)?;
        let cat = ops::concat_channels(&[&a, &f7, &b])?;
        Ok(ops::relu(&self.combine.forward(&cat)?))
    }
}

/// Parallel dilated context branches, each scaled by a perceived weight.
struct ContextEnrich<T: Scalar> {
    branches: Vec<Conv2d<T>>,
    reduce: Conv2d<T>,
    pr: PrBlock<T>,
}

const CONTEXT_DILATIONS: [usize; 4] = [1, 3, 5, 7];

impl<T: Scalar> ContextEnrich<T> {
    fn new(store: &mut ParamStore<T>, name: &str, c: usize, perceived_c: usize, cfg: &PerceptionCfg) -> Result<Self> {
        let branches = CONTEXT_DILATIONS
            .iter()
            .map(|&d| Conv2d::k3(store, &format!("{name}.d{d}"), c, c, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            branches,
            reduce: Conv2d::k1(store, &format!("{name}.reduce"), 4 * c, c)?,
            pr: PrBlock::new(
                store,
                &format!("{name}.pr"),
                perceived_c,
                CONTEXT_DILATIONS.iter().map(|d| format!("d{d}")).collect(),
                cfg,
            )?,
        })
    }

    fn forward(&self, f: &Tensor<T>, perceived: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let w = self.pr.weights(perceived)?;
        let mut outs = Vec::with_capacity(4);
        for (k, br) in self.branches.iter().enumerate() {
            let b = br.forward(f)?;
            outs.push(ops::mul_item(&b, &ops::select_col(&w, k)?)?);
        }
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        let cat = ops::concat_channels(&refs)?;
        Ok((ops::relu(&self.reduce.forward(&cat)?), w))
    }
}

/// Registry of decoder-side regulated features, in reporting order.
fn decoder_names(variant: Variant) -> Vec<String> {
    let mut names: Vec<String> = ["i1", "i2", "i3", "i4", "d2", "d3", "d4", "d5"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if variant != Variant::Fpn {
        names.extend(["g1", "g2", "g3"].iter().map(|s| s.to_string()));
    }
    names
}

pub struct PrNet<T: Scalar> {
    pub cfg: ModelConfig,
    store: ParamStore<T>,
    backbone: Backbone<T>,
    unify: Vec<ConvBnRelu<T>>,
    tail: Option<DeepTail<T>>,
    context: Option<Vec<ContextEnrich<T>>>,
    observe: Option<Vec<IeoModule<T>>>,
    decoder_pr: PrBlock<T>,
    guide: Option<Conv2d<T>>,
    merge: Vec<Conv2d<T>>, // decode convs for d4, d3, d2, d1
    predict: Conv2d<T>,
    names: Vec<String>,
}

impl<T: Scalar> PrNet<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(cfg.seed);
        let backbone = Backbone::new(&mut store, &cfg.stage_channels)?;
        let u = cfg.unified;
        let unify = (0..5)
            .map(|k| ConvBnRelu::k1(&mut store, &format!("unify.{}", k + 1), cfg.stage_channels[k], u))
            .collect::<Result<Vec<_>>>()?;
        let tail = match cfg.variant {
            Variant::GgsSsd => Some(DeepTail::new(
                &mut store,
                cfg.stage_channels[3],
                cfg.stage_channels[4],
                u,
            )?),
            _ => None,
        };
        let pcfg = cfg.perception_cfg();
        let context = if cfg.cfe {
            Some(
                [3usize, 4, 5]
                    .iter()
                    .map(|k| ContextEnrich::new(&mut store, &format!("context.i{k}"), u, u, &pcfg))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let observe = if cfg.ieo {
            Some(
                [3usize, 4, 5]
                    .iter()
                    .map(|k| IeoModule::new(&mut store, &format!("observe.i{k}"), u, u, &pcfg))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let names = decoder_names(cfg.variant);
        let decoder_pr = PrBlock::new(&mut store, "decoder.pr", u, names.clone(), &pcfg)?;
        let guide = match cfg.variant {
            Variant::Fpn => None,
            _ => Some(Conv2d::k3(&mut store, "decoder.guide", u, u, 1)?),
        };
        let merge = (0..4)
            .map(|k| Conv2d::k3(&mut store, &format!("decoder.merge{}", 4 - k), u, u, 1))
            .collect::<Result<Vec<_>>>()?;
        let predict = Conv2d::k3(&mut store, "decoder.predict", u, 1, 1)?;
        Ok(Self {
            cfg,
            store,
            backbone,
            unify,
            tail,
            context,
            observe,
            decoder_pr,
            guide,
            merge,
            predict,
            names,
        })
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn weight_names(&self) -> &[String] {
        &self.names
    }

    fn col(&self, w: &Tensor<T>, name: &str) -> Result<Tensor<T>> {
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::arg("decode", format!("unknown weight '{name}'")))?;
        ops::select_col(w, k)
    }

    /// Saliency prediction in (0,1) at the input extent, plus every
    /// regulation weight the pass produced.
    pub fn forward(&self, image: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Diagnostics)> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("forward", format!("want [N,3,H,W], got {s:?}")));
        }
        if s[2] % 32 != 0 || s[3] % 32 != 0 {
            return Err(Error::shape(
                "forward",
                format!("spatial extents {}x{} must be multiples of 32", s[2], s[3]),
            ));
        }
        let raw = self.backbone.forward(image, mode)?;
        let mut feats: Vec<Tensor<T>> = (0..5)
            .map(|k| self.unify[k].forward(&raw[k], mode))
            .collect::<Result<_>>()?;
        let perceived = match &self.tail {
            Some(tail) => tail.forward(&raw[3], &raw[4], mode)?,
            None => feats[4].clone(),
        };

        let mut diag = Diagnostics::default();
        if let Some(ctx) = &self.context {
            for (j, m) in ctx.iter().enumerate() {
                let lvl = j + 2; // feats index of i3..i5
                let (f, w) = m.forward(&feats[lvl], &perceived)?;
                feats[lvl] = f;
                push_records(&mut diag, &format!("context.i{}", lvl + 1), &CONTEXT_DILATIONS.map(|d| format!("d{d}")), &w);
            }
        }
        if let Some(obs) = &self.observe {
            for (j, m) in obs.iter().enumerate() {
                let lvl = j + 2;
                let (f, w) = m.forward(&feats[lvl], &perceived)?;
                feats[lvl] = f;
                let names: Vec<String> = crate::ieo::BRANCHES.iter().map(|s| s.to_string()).collect();
                push_records(&mut diag, &format!("observe.i{}", lvl + 1), &names, &w);
            }
        }

        let w = self.decoder_pr.weights(&perceived)?;
        push_records(&mut diag, "decoder", &self.names, &w);

        // top-down weighted merging; d5 is the deepest unified feature
        let d5 = feats[4].clone();
        let mut deeper = ops::mul_item(&d5, &self.col(&w, "d5")?)?;
        let mut d = Vec::with_capacity(4); // d4, d3, d2, d1
        for (k, merge) in self.merge.iter().enumerate() {
            let level = 3 - k; // feats index of i4, i3, i2, i1
            let lat = ops::mul_item(&feats[level], &self.col(&w, &format!("i{}", level + 1))?)?;
            let (h, ww) = (lat.shape()[2], lat.shape()[3]);
            let mut sum = ops::add(&lat, &ops::resize_bilinear(&deeper, h, ww)?)?;
            if k < 3 {
                if let Some(guide) = &self.guide {
                    let g = guide.forward(&ops::resize_bilinear(&feats[4], h, ww)?)?;
                    sum = ops::add(&sum, &ops::mul_item(&g, &self.col(&w, &format!("g{}", k + 1))?)?)?;
                }
            }
            let dk = ops::relu(&merge.forward(&sum)?);
            if k < 3 {
                deeper = ops::mul_item(&dk, &self.col(&w, &format!("d{}", level + 1))?)?;
            }
            d.push(dk);
        }

        let p = ops::sigmoid(&self.predict.forward(&d[3])?);
        let pred = ops::resize_bilinear(&p, s[2], s[3])?;
        Ok((pred, diag))
    }
}

fn push_records<T: Scalar, S: AsRef<str>>(diag: &mut Diagnostics, prefix: &str, names: &[S], w: &Tensor<T>) {
    let n = w.shape()[0];
    let k = w.shape()[1];
    for (j, name) in names.iter().enumerate() {
        diag.weights.push(WeightRecord {
            name: format!("{prefix}.{}", name.as_ref()),
            per_item: (0..n).map(|i| w.data()[i * k + j].to_f64()).collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn image(n: usize, hw: usize) -> Tensor<f32> {
        Tensor::from_vec(
            vec![n, 3, hw, hw],
            (0..n * 3 * hw * hw).map(|i| ((i as f32 * 0.317).sin() + 1.0) / 2.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn fpn_variant_forward_shapes() {
        let net = PrNet::<f32>::new(ModelConfig {
            input_size: 64,
            ..ModelConfig::fpn()
        })
        .unwrap();
        let (p, diag) = net.forward(&image(2, 64), Mode::Eval).unwrap();
        assert_eq!(p.shape(), &[2, 1, 64, 64]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(diag.weights.len(), 8);
        for r in &diag.weights {
            assert_eq!(r.per_item.len(), 2);
            assert!(r.per_item.iter().all(|&v| v > 0.0 && v < 2.0));
        }
    }

    #[test]
    fn full_variant_reports_all_weights() {
        let net = PrNet::<f32>::new(ModelConfig::default()).unwrap();
        let (p, diag) = net.forward(&image(1, 128), Mode::Eval).unwrap();
        assert_eq!(p.shape(), &[1, 1, 128, 128]);
        // 3 observation modules x 3 branches + 11 decoder weights
        assert_eq!(diag.weights.len(), 9 + 11);
        for lvl in ["i3", "i4", "i5"] {
            let sum: f64 = diag
                .weights
                .iter()
                .filter(|r| r.name.starts_with(&format!("observe.{lvl}.")))
                .map(|r| r.per_item[0])
                .sum();
            assert!((sum - 3.0).abs() < 1e-6, "branch weights at {lvl} sum to {sum}");
        }
    }

    #[test]
    fn guidance_weights_are_inert_once_guidance_is_zeroed() {
        let net = PrNet::<f32>::new(ModelConfig::ggs()).unwrap();
        let img = image(1, 128);
        for p in net.store().all() {
            if p.name().starts_with("decoder.guide") {
                p.set_values(&vec![0.0; p.numel()]);
            }
        }
        let (a, _) = net.forward(&img, Mode::Eval).unwrap();
        // retune the perception head so every guidance weight changes
        let bias = net.store().find("decoder.pr.out.bias").unwrap();
        let mut v = bias.values();
        for k in 8..11 {
            v[k] += 1.0;
        }
        bias.set_values(&v);
        let (b, _) = net.forward(&img, Mode::Eval).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x, y, "guidance weight affected output despite zero guidance");
        }
    }

    #[test]
    fn guidance_weights_matter_when_guidance_is_live() {
        let net = PrNet::<f32>::new(ModelConfig::ggs()).unwrap();
        let img = image(1, 128);
        let (a, _) = net.forward(&img, Mode::Eval).unwrap();
        let bias = net.store().find("decoder.pr.out.bias").unwrap();
        let mut v = bias.values();
        v[8] += 1.0;
        bias.set_values(&v);
        let (b, _) = net.forward(&img, Mode::Eval).unwrap();
        let diff: f32 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 0.0, "guidance weight had no effect");
    }

    #[test]
    fn forward_is_deterministic_and_trainable() {
        let net = PrNet::<f32>::new(ModelConfig {
            input_size: 128,
            ..ModelConfig::default()
        })
        .unwrap();
        let img = image(2, 128);
        let (a, _) = net.forward(&img, Mode::Eval).unwrap();
        let (b, _) = net.forward(&img, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());

        let tape = Tape::new();
        let tracked = tape.watch(&img);
        let (p, _) = net.forward(&tracked, Mode::Train).unwrap();
        let loss = ops::mean_rows(&p.reshape(vec![1, p.numel()]).unwrap()).unwrap();
        tape.backward(&loss.reshape(vec![]).unwrap()).unwrap();
        let touched = net
            .store()
            .trainable()
            .filter(|p| p.grad().iter().any(|&g| g != 0.0))
            .count();
        let total = net.store().trainable().count();
        // relu/sigmoid saturation can zero a few, but most parameters learn
        assert!(touched * 10 >= total * 9, "only {touched}/{total} params got gradient");
    }

    #[test]
    fn config_validation_rejects_bad_extents() {
        assert!(PrNet::<f32>::new(ModelConfig {
            input_size: 100,
            ..ModelConfig::default()
        })
        .is_err());
        assert!(PrNet::<f32>::new(ModelConfig {
            input_size: 64, // too shallow for the deep tail
            ieo: false,
            ..ModelConfig::default()
        })
        .is_err());
        assert!(PrNet::<f32>::new(ModelConfig {
            input_size: 64, // observation needs multiples of 128
            variant: Variant::Ggs,
            ..ModelConfig::default()
        })
        .is_err());
    }
}
