use rand::Rng;

use super::Sample;

/// Random horizontal flip (p = 0.5), rotation within +-15 degrees (nearest
/// neighbor, zero fill outside) and +-10% brightness/contrast jitter on the
/// image only. The mask follows the geometric transforms.
pub fn augment_sample<R: Rng>(s: &Sample, rng: &mut R) -> Sample {
    let mut out = s.clone();
    if rng.gen_bool(0.5) {
        hflip(&mut out);
    }
    let deg: f64 = rng.gen_range(-15.0..=15.0);
    rotate_nearest(&mut out, deg);
    let contrast: f32 = rng.gen_range(0.9..=1.1);
    let brightness: f32 = rng.gen_range(-0.1..=0.1);
    for v in &mut out.image {
        *v = (*v * contrast + brightness).clamp(0.0, 1.0);
    }
    out
}

pub fn hflip(s: &mut Sample) {
    let (h, w) = (s.size, s.size);
    for c in 0..3 {
        for y in 0..h {
            let row = &mut s.image[(c * h + y) * w..(c * h + y + 1) * w];
            row.reverse();
        }
    }
    for y in 0..h {
        s.mask[y * w..(y + 1) * w].reverse();
    }
}

pub fn rotate_nearest(s: &mut Sample, degrees: f64) {
    let n = s.size;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let c = (n as f64 - 1.0) / 2.0;
    let src = |x: usize, y: usize| -> Option<(usize, usize)> {
        // inverse rotation of the output coordinate around the center
        let dx = x as f64 - c;
        let dy = y as f64 - c;
        let sx = (cos * dx + sin * dy + c).round();
        let sy = (-sin * dx + cos * dy + c).round();
        if sx < 0.0 || sy < 0.0 || sx >= n as f64 || sy >= n as f64 {
            None
        } else {
            Some((sx as usize, sy as usize))
        }
    };
    let image = s.image.clone();
    let mask = s.mask.clone();
    for y in 0..n {
        for x in 0..n {
            match src(x, y) {
                Some((sx, sy)) => {
                    for ch in 0..3 {
                        s.image[(ch * n + y) * n + x] = image[(ch * n + sy) * n + sx];
                    }
                    s.mask[y * n + x] = mask[sy * n + sx];
                }
                None => {
                    for ch in 0..3 {
                        s.image[(ch * n + y) * n + x] = 0.0;
                    }
                    s.mask[y * n + x] = 0.0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize) -> Sample {
        Sample {
            image: (0..3 * n * n).map(|i| (i % 97) as f32 / 96.0).collect(),
            mask: (0..n * n).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
            size: n,
        }
    }

    #[test]
    fn hflip_is_an_involution() {
        let orig = sample(8);
        let mut s = orig.clone();
        hflip(&mut s);
        assert_ne!(s.image, orig.image);
        hflip(&mut s);
        assert_eq!(s.image, orig.image);
        assert_eq!(s.mask, orig.mask);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let orig = sample(8);
        let mut s = orig.clone();
        rotate_nearest(&mut s, 0.0);
        assert_eq!(s.image, orig.image);
        assert_eq!(s.mask, orig.mask);
    }

    #[test]
    fn rotation_keeps_mask_binary_and_fills_corners_with_zero() {
        let mut s = sample(16);
        s.mask = vec![1.0; 256];
        rotate_nearest(&mut s, 15.0);
        assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(s.mask[0], 0.0, "corner should rotate out of frame");
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let s = sample(8);
        let a = augment_sample(&s, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment_sample(&s, &mut ChaCha8Rng::seed_from_u64(9));
        let c = augment_sample(&s, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn jitter_stays_in_unit_range() {
        let s = sample(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = augment_sample(&s, &mut rng);
            assert!(a.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
