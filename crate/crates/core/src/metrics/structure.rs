use super::{check_pair, GtMask, SaliencyMap};
use crate::error::Result;

const EPS: f64 = 2.220446049250313e-16;

fn mean_of(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut s = 0.0;
    let mut n = 0;
    for x in v {
        s += x;
        n += 1;
    }
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// `2x / (x^2 + 1 + 2 sigma_x + eps)` style object score of the masked values.
fn object_score(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    let n = vals.len() as f64;
    let x = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + var.sqrt() + EPS)
}

fn s_object(p: &SaliencyMap, g: &GtMask) -> f64 {
    let fg: Vec<f64> = p
        .data
        .iter()
        .zip(&g.data)
        .filter(|(_, &b)| b)
        .map(|(&v, _)| v)
        .collect();
    let bg: Vec<f64> = p
        .data
        .iter()
        .zip(&g.data)
        .filter(|(_, &b)| !b)
        .map(|(&v, _)| 1.0 - v)
        .collect();
    let u = g.coverage();
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Foreground centroid, clamped inside the image (0-based, exclusive cut).
fn centroid(g: &GtMask) -> (usize, usize) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0.0;
    for y in 0..g.h {
        for x in 0..g.w {
            if g.data[y * g.w + x] {
                sx += (x + 1) as f64;
                sy += (y + 1) as f64;
                n += 1.0;
            }
        }
    }
    let cx = (sx / n).round() as usize;
    let cy = (sy / n).round() as usize;
    (cx.clamp(1, g.w.max(2) - 1), cy.clamp(1, g.h.max(2) - 1))
}

struct Block {
    p: Vec<f64>,
    g: Vec<f64>,
}

fn blocks(p: &SaliencyMap, g: &GtMask, cx: usize, cy: usize) -> Vec<Block> {
    let ranges = [
        (0..cx, 0..cy),
        (cx..p.w, 0..cy),
        (0..cx, cy..p.h),
        (cx..p.w, cy..p.h),
    ];
    ranges
        .into_iter()
        .map(|(xs, ys)| {
            let mut bp = Vec::new();
            let mut bg = Vec::new();
            for y in ys {
                for x in xs.clone() {
                    bp.push(p.data[y * p.w + x]);
                    bg.push(if g.data[y * g.w + x] { 1.0 } else { 0.0 });
                }
            }
            Block { p: bp, g: bg }
        })
        .collect()
}

/// SSIM-style regional similarity of one block.
fn block_ssim(b: &Block) -> f64 {
    let n = b.p.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let (x, _) = mean_of(b.p.iter().copied());
    let (y, _) = mean_of(b.g.iter().copied());
    let denom = if n > 1 { nf - 1.0 } else { 1.0 };
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sx += (b.p[i] - x) * (b.p[i] - x);
        sy += (b.g[i] - y) * (b.g[i] - y);
        sxy += (b.p[i] - x) * (b.g[i] - y);
    }
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: &SaliencyMap, g: &GtMask) -> f64 {
    let (cx, cy) = centroid(g);
    let bl = blocks(p, g, cx, cy);
    let total: f64 = bl.iter().map(|b| b.p.len() as f64).sum();
    bl.iter()
        .map(|b| (b.p.len() as f64 / total) * block_ssim(b))
        .sum()
}

/// Structure measure: mean of object- and region-level similarity, with
/// degenerate masks scored directly from the map's mean.
pub fn s_measure(p: &SaliencyMap, g: &GtMask) -> Result<f64> {
    check_pair(p, g)?;
    let fg = g.foreground();
    if fg == 0 {
        return Ok(1.0 - p.mean());
    }
    if fg == g.data.len() {
        return Ok(p.mean());
    }
    let s = 0.5 * s_object(p, g) + 0.5 * s_region(p, g);
    Ok(s.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{map, mask};

    #[test]
    fn degenerate_masks_score_from_the_mean() {
        let p = map(2, 2, vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(s_measure(&p, &mask(2, 2, vec![0; 4])).unwrap(), 0.75);
        assert_eq!(s_measure(&p, &mask(2, 2, vec![1; 4])).unwrap(), 0.25);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let g = mask(8, 8, (0..64).map(|i| u8::from((2..6).contains(&(i / 8)) && (2..6).contains(&(i % 8)))).collect());
        let p = map(8, 8, g.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        let s = s_measure(&p, &g).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn inverted_prediction_scores_zero() {
        let g = mask(8, 8, (0..64).map(|i| u8::from((2..6).contains(&(i / 8)) && (2..6).contains(&(i % 8)))).collect());
        let p = map(8, 8, g.data.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect());
        let s = s_measure(&p, &g).unwrap();
        assert!(s < 1e-9, "{s}");
    }

    #[test]
    fn uniform_half_map_hand_value() {
        // p = 0.5 everywhere, object in the left half
        let g = mask(4, 4, (0..16).map(|i| u8::from(i % 4 < 2)).collect());
        let p = map(4, 4, vec![0.5; 16]);
        // object term: both halves score 2*0.5/(0.25+1) = 0.8, mixed by u=0.5
        let so = s_object(&p, &g);
        assert!((so - 0.8).abs() < 1e-12, "{so}");
        // the centroid cut makes every block constant in both maps, so each
        // block hits the zero-variance convention (alpha = beta = 0 -> 1)
        let sr = s_region(&p, &g);
        assert!((sr - 1.0).abs() < 1e-12, "{sr}");
        assert!((s_measure(&p, &g).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn better_structure_scores_higher() {
        let g = mask(8, 8, (0..64).map(|i| u8::from((i % 8) < 4)).collect());
        let close = map(
            8,
            8,
            g.data.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect(),
        );
        let blurry = map(8, 8, vec![0.5; 64]);
        assert!(s_measure(&close, &g).unwrap() > s_measure(&blurry, &g).unwrap());
    }
}
