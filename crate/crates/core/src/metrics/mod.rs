//! Saliency evaluation metrics: MAE, threshold-swept and adaptive F-measure,
//! boundary-aware weighted F, structure measure, enhanced-alignment measure,
//! and the large/small object split.
//!
//! Images with an empty ground-truth mask are excluded from the F/S/E
//! aggregates (their precision-style terms are undefined) but still count
//! toward MAE; [`evaluate`] reports how many were excluded.

mod curve;
mod enhanced;
mod structure;
mod wfb;

pub use curve::{f_adaptive, f_beta, max_f, mean_f, prf_curve, PrPoint, BETA2};
pub use enhanced::e_measure;
pub use structure::s_measure;
pub use wfb::{distance_transform, weighted_f};

use serde::Serialize;

use crate::error::{Error, Result};

/// A predicted saliency map with values in [0, 1].
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(w: usize, h: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != w * h || w == 0 || h == 0 {
            return Err(Error::shape("saliency_map", format!("{w}x{h} with {} values", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("saliency_map", "values must lie in [0,1]"));
        }
        Ok(Self { w, h, data })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// A binary ground-truth mask.
#[derive(Debug, Clone)]
pub struct GtMask {
    pub w: usize,
    pub h: usize,
    pub data: Vec<bool>,
}

impl GtMask {
    pub fn new(w: usize, h: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != w * h || w == 0 || h == 0 {
            return Err(Error::shape("gt_mask", format!("{w}x{h} with {} values", data.len())));
        }
        Ok(Self { w, h, data })
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground() == 0
    }

    /// Foreground fraction of the image area.
    pub fn coverage(&self) -> f64 {
        self.foreground() as f64 / self.data.len() as f64
    }
}

fn check_pair(p: &SaliencyMap, g: &GtMask) -> Result<()> {
    if p.w != g.w || p.h != g.h {
        return Err(Error::shape(
            "metrics",
            format!("prediction {}x{} vs mask {}x{}", p.w, p.h, g.w, g.h),
        ));
    }
    Ok(())
}

/// Mean absolute error between the map and the binary mask.
pub fn mae(p: &SaliencyMap, g: &GtMask) -> Result<f64> {
    check_pair(p, g)?;
    let s: f64 = p
        .data
        .iter()
        .zip(&g.data)
        .map(|(&v, &b)| (v - if b { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(s / p.data.len() as f64)
}

/// Object-scale class by foreground coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SizeClass {
    Large,
    Medium,
    Small,
}

pub const LARGE_COVERAGE: f64 = 0.38;
pub const SMALL_COVERAGE: f64 = 0.03;

/// Large when the object covers more than 38% of the image, small below 3%
/// (an empty mask is small), medium otherwise.
pub fn size_class(g: &GtMask) -> SizeClass {
    let r = g.coverage();
    if r > LARGE_COVERAGE {
        SizeClass::Large
    } else if r < SMALL_COVERAGE {
        SizeClass::Small
    } else {
        SizeClass::Medium
    }
}

/// Aggregated scores over a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub max_f: f64,
    pub mean_f: f64,
    pub adaptive_f: f64,
    pub weighted_f: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    /// Images contributing to every aggregate.
    pub evaluated: usize,
    /// Empty-mask images: counted in `mae` only.
    pub empty_gt_excluded: usize,
}

/// Evaluate a set of (prediction, ground truth) pairs.
pub fn evaluate(pairs: &[(SaliencyMap, GtMask)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let mut mae_sum = 0.0;
    let mut maxf = 0.0;
    let mut meanf = 0.0;
    let mut adaf = 0.0;
    let mut wf = 0.0;
    let mut sm = 0.0;
    let mut em = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (p, g) in pairs {
        mae_sum += mae(p, g)?;
        if g.is_empty() {
            skipped += 1;
            continue;
        }
        let curve = prf_curve(p, g)?;
        maxf += max_f(&curve);
        meanf += mean_f(&curve);
        adaf += f_adaptive(p, g)?;
        wf += weighted_f(p, g)?;
        sm += s_measure(p, g)?;
        em += e_measure(p, g)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Dataset("every ground-truth mask is empty".into()));
    }
    let n = used as f64;
    Ok(MetricsReport {
        mae: mae_sum / pairs.len() as f64,
        max_f: maxf / n,
        mean_f: meanf / n,
        adaptive_f: adaf / n,
        weighted_f: wf / n,
        s_measure: sm / n,
        e_measure: em / n,
        evaluated: used,
        empty_gt_excluded: skipped,
    })
}

#[cfg(test)]
pub(crate) fn map(w: usize, h: usize, v: Vec<f64>) -> SaliencyMap {
    SaliencyMap::new(w, h, v).unwrap()
}

#[cfg(test)]
pub(crate) fn mask(w: usize, h: usize, v: Vec<u8>) -> GtMask {
    GtMask::new(w, h, v.into_iter().map(|b| b != 0).collect()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_hand_values() {
        let p = map(2, 2, vec![0.0, 1.0, 0.25, 0.75]);
        let g = mask(2, 2, vec![0, 1, 0, 1]);
        assert!((mae(&p, &g).unwrap() - 0.125).abs() < 1e-15);
        let perfect = map(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(mae(&perfect, &g).unwrap(), 0.0);
    }

    #[test]
    fn size_split_thresholds() {
        // 100-pixel image: 39 fg -> large, 38 -> medium, 3 -> medium, 2 -> small
        let m = |fg: usize| {
            let mut v = vec![0u8; 100];
            v[..fg].fill(1);
            mask(10, 10, v)
        };
        assert_eq!(size_class(&m(39)), SizeClass::Large);
        assert_eq!(size_class(&m(38)), SizeClass::Medium);
        assert_eq!(size_class(&m(3)), SizeClass::Medium);
        assert_eq!(size_class(&m(2)), SizeClass::Small);
        assert_eq!(size_class(&m(0)), SizeClass::Small);
    }

    #[test]
    fn evaluate_excludes_empty_masks_from_f_family_only() {
        let good = (map(4, 4, vec![1.0; 16]), mask(4, 4, vec![1; 16]));
        let empty = (map(4, 4, vec![0.5; 16]), mask(4, 4, vec![0; 16]));
        let r = evaluate(&[good, empty]).unwrap();
        assert_eq!(r.evaluated, 1);
        assert_eq!(r.empty_gt_excluded, 1);
        // the empty image contributes its 0.5 MAE to the average
        assert!((r.mae - 0.25).abs() < 1e-15);
        assert!((r.max_f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_all_empty() {
        let empty = (map(2, 2, vec![0.1; 4]), mask(2, 2, vec![0; 4]));
        assert!(evaluate(&[empty]).is_err());
    }
}
