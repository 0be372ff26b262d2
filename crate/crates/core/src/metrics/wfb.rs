use super::{check_pair, GtMask, SaliencyMap};
use crate::error::{Error, Result};

const EPS: f64 = 2.220446049250313e-16;

/// One-dimensional squared-distance transform (lower envelope of parabolas),
/// also reporting which source position realizes each minimum.
fn dt1d(f: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = f.len();
    let mut d = vec![f64::INFINITY; n];
    let mut arg = vec![0usize; n];
    let mut v: Vec<usize> = Vec::with_capacity(n); // parabola vertices
    let mut z: Vec<f64> = Vec::with_capacity(n + 1); // envelope boundaries
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s;
        loop {
            match v.last() {
                None => {
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    // intersection of parabolas rooted at p and q
                    s = (f[q] + (q * q) as f64 - f[p] - (p * p) as f64) / (2 * q - 2 * p) as f64;
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        z.push(s);
                        break;
                    }
                }
            }
        }
        v.push(q);
    }
    if v.is_empty() {
        return (d, arg);
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
        arg[q] = p;
    }
    (d, arg)
}

/// Exact Euclidean distance transform of a binary mask: for every pixel, the
/// distance to the nearest foreground pixel and that pixel's linear index.
/// Foreground pixels get distance 0 and their own index. A fully empty mask
/// yields infinite distances.
pub fn distance_transform(g: &GtMask) -> (Vec<f64>, Vec<usize>) {
    let (w, h) = (g.w, g.h);
    // column pass: nearest foreground row within each column
    let mut col_d2 = vec![f64::INFINITY; w * h];
    let mut col_src = vec![0usize; w * h];
    for x in 0..w {
        let f: Vec<f64> = (0..h).map(|y| if g.data[y * w + x] { 0.0 } else { f64::INFINITY }).collect();
        let (d, arg) = dt1d(&f);
        for y in 0..h {
            col_d2[y * w + x] = d[y];
            col_src[y * w + x] = arg[y];
        }
    }
    // row pass combines horizontal offsets with the column distances
    let mut dist = vec![f64::INFINITY; w * h];
    let mut idx = vec![0usize; w * h];
    for y in 0..h {
        let f: Vec<f64> = (0..w).map(|x| col_d2[y * w + x]).collect();
        let (d, arg) = dt1d(&f);
        for x in 0..w {
            dist[y * w + x] = d[x].sqrt();
            if d[x].is_finite() {
                let sx = arg[x];
                idx[y * w + x] = col_src[y * w + sx] * w + sx;
            }
        }
    }
    (dist, idx)
}

/// 7x7 Gaussian (sigma 5) filter with zero padding outside the image.
fn gauss7(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut k = [[0.0f64; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as f64 - 3.0;
            let dx = j as f64 - 3.0;
            *v = (-(dx * dx + dy * dy) / 50.0).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, row) in k.iter().enumerate() {
                let sy = y as isize + i as isize - 3;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for (j, &kv) in row.iter().enumerate() {
                    let sx = x as isize + j as isize - 3;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += kv * src[sy as usize * w + sx as usize];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Boundary-aware weighted F-measure. Errors on an empty ground truth, whose
/// weighted recall is undefined.
pub fn weighted_f(p: &SaliencyMap, g: &GtMask) -> Result<f64> {
    check_pair(p, g)?;
    let fg = g.foreground();
    if fg == 0 {
        return Err(Error::arg("weighted_f", "empty ground truth"));
    }
    let n = p.data.len();
    let e: Vec<f64> = p
        .data
        .iter()
        .zip(&g.data)
        .map(|(&v, &b)| (if b { 1.0 } else { 0.0 } - v).abs())
        .collect();
    let (dst, idx) = distance_transform(g);
    // background errors are judged at their nearest foreground pixel
    let mut et = e.clone();
    for i in 0..n {
        if !g.data[i] {
            et[i] = e[idx[i]];
        }
    }
    let ea = gauss7(&et, p.w, p.h);
    let mut tp_loss = 0.0; // sum of weighted error over the foreground
    let mut fp = 0.0; // weighted error over the background
    for i in 0..n {
        // foreground errors may borrow the smoothed neighborhood error;
        // background errors are kept as-is
        let min_e_ea = if g.data[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        // background errors decay with distance from the object
        let b = if g.data[i] {
            1.0
        } else {
            2.0 - (0.5f64.ln() / 5.0 * dst[i]).exp()
        };
        let ew = min_e_ea * b;
        if g.data[i] {
            tp_loss += ew;
        } else {
            fp += ew;
        }
    }
    let tpw = fg as f64 - tp_loss;
    let r = 1.0 - tp_loss / fg as f64;
    let pw = tpw / (EPS + tpw + fp);
    Ok(2.0 * r * pw / (EPS + r + pw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{map, mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(g: &GtMask) -> (Vec<f64>, Vec<usize>) {
        let (w, h) = (g.w, g.h);
        let fgs: Vec<(usize, usize)> = (0..w * h)
            .filter(|&i| g.data[i])
            .map(|i| (i % w, i / w))
            .collect();
        let mut dist = vec![f64::INFINITY; w * h];
        let mut idx = vec![0usize; w * h];
        for y in 0..h {
            for x in 0..w {
                for &(fx, fy) in &fgs {
                    let d = (((x as isize - fx as isize).pow(2) + (y as isize - fy as isize).pow(2)) as f64).sqrt();
                    if d < dist[y * w + x] {
                        dist[y * w + x] = d;
                        idx[y * w + x] = fy * w + fx;
                    }
                }
            }
        }
        (dist, idx)
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let (w, h) = (rng.gen_range(1..14), rng.gen_range(1..14));
            let v: Vec<u8> = (0..w * h).map(|_| u8::from(rng.gen_bool(0.2))).collect();
            if v.iter().all(|&b| b == 0) {
                continue;
            }
            let g = mask(w, h, v);
            let (d, idx) = distance_transform(&g);
            let (bd, _) = brute_nearest(&g);
            for i in 0..w * h {
                assert!((d[i] - bd[i]).abs() < 1e-9, "trial {trial} pixel {i}: {} vs {}", d[i], bd[i]);
                // the reported source must be foreground and at that distance
                let (sx, sy) = (idx[i] % w, idx[i] / w);
                assert!(g.data[idx[i]]);
                let (x, y) = (i % w, i / w);
                let dd = (((x as isize - sx as isize).pow(2) + (y as isize - sy as isize).pow(2)) as f64).sqrt();
                assert!((dd - d[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_mask_has_infinite_distances() {
        let g = mask(3, 3, vec![0; 9]);
        let (d, _) = distance_transform(&g);
        assert!(d.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let g = mask(8, 8, (0..64).map(|i| u8::from(i % 8 > 3)).collect());
        let p = map(8, 8, g.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        let q = weighted_f(&p, &g).unwrap();
        assert!((q - 1.0).abs() < 1e-12, "{q}");
    }

    #[test]
    fn inverted_prediction_scores_near_zero() {
        // large enough that the zero-padded smoothing window stays interior
        let g = mask(32, 32, (0..32 * 32).map(|i| u8::from(i % 32 > 15)).collect());
        let p = map(32, 32, g.data.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect());
        let q = weighted_f(&p, &g).unwrap();
        assert!(q < 0.15, "{q}");
    }

    #[test]
    fn near_object_false_positives_cost_more_than_distant_ones() {
        // a lone object in the corner; put the same false positive close vs far
        let mut gv = vec![0u8; 15 * 15];
        gv[0] = 1;
        gv[1] = 1;
        gv[15] = 1;
        gv[16] = 1;
        let g = mask(15, 15, gv);
        let base: Vec<f64> = g.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mut near = base.clone();
        near[3 * 15 + 3] = 1.0;
        let mut far = base.clone();
        far[14 * 15 + 14] = 1.0;
        let qn = weighted_f(&map(15, 15, near), &g).unwrap();
        let qf = weighted_f(&map(15, 15, far), &g).unwrap();
        assert!(qn > qf, "near {qn} should be penalized less than far {qf}");
    }

    #[test]
    fn empty_gt_is_rejected() {
        let g = mask(4, 4, vec![0; 16]);
        let p = map(4, 4, vec![0.5; 16]);
        assert!(weighted_f(&p, &g).is_err());
    }
}
