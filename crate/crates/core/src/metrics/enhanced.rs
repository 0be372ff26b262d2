use super::{check_pair, GtMask, SaliencyMap};
use crate::error::Result;

const EPS: f64 = 2.220446049250313e-16;

/// Enhanced-alignment measure. The map is first binarized at the adaptive
/// threshold `min(2 mean(p), 1)`; degenerate masks reduce to plain agreement
/// with the binarized map.
pub fn e_measure(p: &SaliencyMap, g: &GtMask) -> Result<f64> {
    check_pair(p, g)?;
    let n = p.data.len();
    let t = (2.0 * p.mean()).min(1.0 - 1e-9);
    let fm: Vec<f64> = p.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
    let fg = g.foreground();

    let enhanced_sum: f64 = if fg == 0 {
        fm.iter().map(|&v| 1.0 - v).sum()
    } else if fg == n {
        fm.iter().sum()
    } else {
        let mu_g = fg as f64 / n as f64;
        let mu_f = fm.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|i| {
                let phi_g = if g.data[i] { 1.0 } else { 0.0 } - mu_g;
                let phi_f = fm[i] - mu_f;
                let align = 2.0 * phi_g * phi_f / (phi_g * phi_g + phi_f * phi_f + EPS);
                (align + 1.0) * (align + 1.0) / 4.0
            })
            .sum()
    };
    Ok(enhanced_sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{map, mask};

    #[test]
    fn perfect_prediction_scores_one() {
        let g = mask(8, 8, (0..64).map(|i| u8::from(i % 8 > 3)).collect());
        let p = map(8, 8, g.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        let e = e_measure(&p, &g).unwrap();
        assert!((e - 1.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn inverted_prediction_scores_near_zero() {
        let g = mask(8, 8, (0..64).map(|i| u8::from(i % 8 > 3)).collect());
        let p = map(8, 8, g.data.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect());
        assert!(e_measure(&p, &g).unwrap() < 1e-9);
    }

    #[test]
    fn degenerate_masks_count_plain_agreement() {
        // empty mask: score is the fraction of pixels not predicted
        let p = map(2, 2, vec![0.9, 0.9, 0.0, 0.0]); // threshold clamps, 2 predicted
        let g0 = mask(2, 2, vec![0; 4]);
        assert!((e_measure(&p, &g0).unwrap() - 0.5).abs() < 1e-9);
        // full mask: fraction predicted
        let g1 = mask(2, 2, vec![1; 4]);
        assert!((e_measure(&p, &g1).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn partial_overlap_lies_between() {
        let g = mask(4, 4, (0..16).map(|i| u8::from(i < 8)).collect());
        let half = map(4, 4, (0..16).map(|i| if i < 4 || i >= 12 { 1.0 } else { 0.0 }).collect());
        let e = e_measure(&half, &g).unwrap();
        assert!(e > 0.2 && e < 0.9, "{e}");
    }
}
