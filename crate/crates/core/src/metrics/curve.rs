use super::{check_pair, GtMask, SaliencyMap};
use crate::error::Result;

/// Weighting of precision over recall in the F-measure.
pub const BETA2: f64 = 0.3;

#[derive(Debug, Clone, Copy)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// `(1 + b2) P R / (b2 P + R)`, zero when both P and R vanish.
pub fn f_beta(p: f64, r: f64) -> f64 {
    let d = BETA2 * p + r;
    if d == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * p * r / d
    }
}

fn pr_at(tp: usize, predicted: usize, fg: usize) -> (f64, f64) {
    // with nothing predicted there are no false positives
    let precision = if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 };
    let recall = if fg == 0 { 1.0 } else { tp as f64 / fg as f64 };
    (precision, recall)
}

/// Precision/recall/F at the 256 thresholds k/255 (binarize at `p >= t`).
///
/// Computed from a 256-bin histogram: a pixel with value v counts as
/// predicted for every threshold k/255 <= v, i.e. all k <= floor(v*255).
pub fn prf_curve(p: &SaliencyMap, g: &GtMask) -> Result<Vec<PrPoint>> {
    check_pair(p, g)?;
    let mut pred_hist = [0usize; 256];
    let mut tp_hist = [0usize; 256];
    for (&v, &b) in p.data.iter().zip(&g.data) {
        let bin = (v * 255.0).floor().min(255.0) as usize;
        pred_hist[bin] += 1;
        if b {
            tp_hist[bin] += 1;
        }
    }
    let fg = g.foreground();
    let mut predicted: usize = pred_hist.iter().sum();
    let mut tp: usize = tp_hist.iter().sum();
    let mut out = Vec::with_capacity(256);
    for k in 0..256 {
        if k > 0 {
            predicted -= pred_hist[k - 1];
            tp -= tp_hist[k - 1];
        }
        let (precision, recall) = pr_at(tp, predicted, fg);
        out.push(PrPoint {
            threshold: k as f64 / 255.0,
            precision,
            recall,
            f: f_beta(precision, recall),
        });
    }
    Ok(out)
}

pub fn max_f(curve: &[PrPoint]) -> f64 {
    curve.iter().map(|p| p.f).fold(0.0, f64::max)
}

pub fn mean_f(curve: &[PrPoint]) -> f64 {
    curve.iter().map(|p| p.f).sum::<f64>() / curve.len() as f64
}

/// F-measure at the adaptive threshold `min(2 mean(p), 1 - 1e-9)`.
pub fn f_adaptive(p: &SaliencyMap, g: &GtMask) -> Result<f64> {
    check_pair(p, g)?;
    let t = (2.0 * p.mean()).min(1.0 - 1e-9);
    let mut tp = 0usize;
    let mut predicted = 0usize;
    for (&v, &b) in p.data.iter().zip(&g.data) {
        if v >= t {
            predicted += 1;
            if b {
                tp += 1;
            }
        }
    }
    let (precision, recall) = pr_at(tp, predicted, g.foreground());
    Ok(f_beta(precision, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{map, mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive re-count at a single threshold, used as the oracle.
    fn brute_point(p: &SaliencyMap, g: &GtMask, t: f64) -> (f64, f64, f64) {
        let mut tp = 0;
        let mut predicted = 0;
        for (&v, &b) in p.data.iter().zip(&g.data) {
            if v >= t {
                predicted += 1;
                if b {
                    tp += 1;
                }
            }
        }
        let (pr, rc) = pr_at(tp, predicted, g.foreground());
        (pr, rc, f_beta(pr, rc))
    }

    #[test]
    fn curve_matches_brute_force_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let v: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let m: Vec<u8> = (0..48).map(|_| rng.gen_range(0..2)).collect();
            let p = map(8, 6, v);
            let g = mask(8, 6, m);
            let curve = prf_curve(&p, &g).unwrap();
            assert_eq!(curve.len(), 256);
            for pt in &curve {
                let (pr, rc, f) = brute_point(&p, &g, pt.threshold);
                assert_eq!(pt.precision, pr, "precision at t={}", pt.threshold);
                assert_eq!(pt.recall, rc);
                assert_eq!(pt.f, f);
            }
        }
    }

    #[test]
    fn exhaustive_tiny_map_hand_check() {
        // 1x3: values 0.0, 0.4, 0.8 with gt (0, 1, 1)
        let p = map(3, 1, vec![0.0, 0.4, 0.8]);
        let g = mask(3, 1, vec![0, 1, 1]);
        let curve = prf_curve(&p, &g).unwrap();
        // t = 0: everything predicted
        assert_eq!(curve[0].precision, 2.0 / 3.0);
        assert_eq!(curve[0].recall, 1.0);
        // t = 0.5: only the 0.8 pixel
        let mid = &curve[128];
        assert_eq!(mid.precision, 1.0);
        assert_eq!(mid.recall, 0.5);
        assert!((mid.f - 1.3 * 0.5 / (0.3 + 0.5)).abs() < 1e-15);
        // t = 1: nothing predicted, precision defined as 1
        assert_eq!(curve[255].precision, 1.0);
        assert_eq!(curve[255].recall, 0.0);
        assert_eq!(curve[255].f, 0.0);
    }

    #[test]
    fn adaptive_threshold_uses_twice_the_mean() {
        // mean 0.25 -> threshold 0.5 picks only the strong pixel
        let p = map(4, 1, vec![0.1, 0.1, 0.1, 0.7]);
        let g = mask(4, 1, vec![0, 0, 0, 1]);
        assert!((f_adaptive(&p, &g).unwrap() - 1.0).abs() < 1e-15);
        // saturated map: threshold clamps below 1 so pixels still qualify
        let all = map(2, 1, vec![1.0, 1.0]);
        let gm = mask(2, 1, vec![1, 1]);
        assert!((f_adaptive(&all, &gm).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_inverted_predictions() {
        let g = mask(4, 2, vec![1, 1, 0, 0, 1, 0, 0, 0]);
        let perfect = map(4, 2, g.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        let curve = prf_curve(&perfect, &g).unwrap();
        assert_eq!(max_f(&curve), 1.0);
        let inverted = map(4, 2, g.data.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect());
        let ic = prf_curve(&inverted, &g).unwrap();
        assert!(max_f(&ic) < 0.62); // best it can do is predict everything
    }
}
