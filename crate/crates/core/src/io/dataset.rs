//! Dataset ingestion: images and masks matched by file stem, decoded from
//! PGM/PPM or PNG, resized to the model extent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;
use crate::training::Sample;

use super::pnm::read_pnm;

const IMAGE_EXTS: [&str; 4] = ["pgm", "ppm", "pnm", "png"];

/// Decoded 8-bit image, 1 or 3 interleaved channels.
pub struct RawImage {
    pub w: usize,
    pub h: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn load_image(path: &Path) -> Result<RawImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" | "ppm" | "pnm" => {
            let img = read_pnm(path)?;
            Ok(RawImage {
                w: img.w,
                h: img.h,
                channels: img.channels,
                data: img.data,
            })
        }
        "png" => {
            let img = image::open(path).map_err(|e| Error::Codec {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            let rgb = img.to_rgb8();
            Ok(RawImage {
                w: rgb.width() as usize,
                h: rgb.height() as usize,
                channels: 3,
                data: rgb.into_raw(),
            })
        }
        other => Err(Error::Codec {
            path: path.display().to_string(),
            detail: format!("unsupported extension '{other}'"),
        }),
    }
}

/// A matched (image, mask) path pair plus counts of unmatched files.
#[derive(Debug)]
pub struct PairListing {
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub images_without_mask: usize,
    pub masks_without_image: usize,
}

fn stem_index(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        if !IMAGE_EXTS.contains(&ext.as_str()) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if map.insert(stem.to_string(), path.clone()).is_some() {
                return Err(Error::Dataset(format!(
                    "duplicate stem '{stem}' in {}",
                    dir.display()
                )));
            }
        }
    }
    Ok(map)
}

/// Pair images and masks by stem, in lexicographic order. Unmatched files on
/// either side are skipped and counted.
pub fn load_pairs(images: &Path, masks: &Path) -> Result<PairListing> {
    let im = stem_index(images)?;
    let mk = stem_index(masks)?;
    let mut pairs = Vec::new();
    let mut orphan_images = 0;
    for (stem, ip) in &im {
        match mk.get(stem) {
            Some(mp) => pairs.push((ip.clone(), mp.clone())),
            None => orphan_images += 1,
        }
    }
    let orphan_masks = mk.keys().filter(|s| !im.contains_key(*s)).count();
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no matching image/mask stems between {} and {}",
            images.display(),
            masks.display()
        )));
    }
    Ok(PairListing {
        pairs,
        images_without_mask: orphan_images,
        masks_without_image: orphan_masks,
    })
}

fn to_chw_f32(img: &RawImage) -> Vec<f32> {
    let n = img.w * img.h;
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            let v = match img.channels {
                3 => img.data[i * 3 + c],
                _ => img.data[i],
            };
            out[c * n + i] = v as f32 / 255.0;
        }
    }
    out
}

/// Binarize at 128 and nearest-neighbor resize, preserving hard edges.
fn mask_to_size(img: &RawImage, size: usize) -> Result<Vec<f32>> {
    if img.channels != 1 {
        return Err(Error::Dataset("mask must be single-channel".into()));
    }
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        let sy = y * img.h / size;
        for x in 0..size {
            let sx = x * img.w / size;
            out[y * size + x] = f32::from(img.data[sy * img.w + sx] >= 128);
        }
    }
    Ok(out)
}

/// Load an image alone as a `1x3xSxS` network input in [0,1].
pub fn load_image_resized(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = load_image(path)?;
    let t = Tensor::from_vec(vec![1, 3, img.h, img.w], to_chw_f32(&img))?;
    ops::resize_bilinear(&t, size, size)
}

/// Load one training/eval pair resized to `size`.
pub fn load_sample(image_path: &Path, mask_path: &Path, size: usize) -> Result<Sample> {
    let msk = load_image(mask_path)?;
    Ok(Sample {
        image: load_image_resized(image_path, size)?.data().to_vec(),
        mask: mask_to_size(&msk, size)?,
        size,
    })
}

/// Load a mask at its native resolution as booleans (>= 128).
pub fn load_mask_native(path: &Path) -> Result<crate::metrics::GtMask> {
    let img = load_image(path)?;
    if img.channels != 1 {
        return Err(Error::Dataset(format!(
            "{} is not a single-channel mask",
            path.display()
        )));
    }
    crate::metrics::GtMask::new(img.w, img.h, img.data.iter().map(|&v| v >= 128).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::pnm::{write_pgm, write_ppm};

    fn setup(dirname: &str) -> (PathBuf, PathBuf) {
        let root = std::env::temp_dir().join("dataset_tests").join(dirname);
        let images = root.join("images");
        let masks = root.join("masks");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&images).unwrap();
        std::fs::create_dir_all(&masks).unwrap();
        (images, masks)
    }

    fn put_pair(images: &Path, masks: &Path, stem: &str, w: usize, h: usize) {
        let rgb: Vec<u8> = (0..3 * w * h).map(|i| (i % 251) as u8).collect();
        write_ppm(&images.join(format!("{stem}.ppm")), w, h, &rgb).unwrap();
        let m: Vec<f64> = (0..w * h).map(|i| f64::from(i % 3 == 0)).collect();
        write_pgm(&masks.join(format!("{stem}.pgm")), w, h, &m).unwrap();
    }

    #[test]
    fn pairs_match_by_stem_and_count_orphans() {
        let (images, masks) = setup("orphans");
        put_pair(&images, &masks, "a", 4, 4);
        put_pair(&images, &masks, "b", 4, 4);
        std::fs::remove_file(masks.join("b.pgm")).unwrap();
        let extra: Vec<f64> = vec![1.0; 16];
        write_pgm(&masks.join("zzz.pgm"), 4, 4, &extra).unwrap();
        let listing = load_pairs(&images, &masks).unwrap();
        assert_eq!(listing.pairs.len(), 1);
        assert_eq!(listing.images_without_mask, 1);
        assert_eq!(listing.masks_without_image, 1);
    }

    #[test]
    fn sample_is_resized_and_mask_binary() {
        let (images, masks) = setup("resize");
        put_pair(&images, &masks, "a", 10, 6);
        let listing = load_pairs(&images, &masks).unwrap();
        let s = load_sample(&listing.pairs[0].0, &listing.pairs[0].1, 8).unwrap();
        assert_eq!(s.size, 8);
        assert_eq!(s.image.len(), 3 * 64);
        assert!(s.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.mask.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn all_orphans_is_an_error() {
        let (images, masks) = setup("empty");
        let rgb: Vec<u8> = vec![0; 48];
        write_ppm(&images.join("only.ppm"), 4, 4, &rgb).unwrap();
        write_pgm(&masks.join("other.pgm"), 4, 4, &vec![0.0; 16]).unwrap();
        assert!(load_pairs(&images, &masks).is_err());
    }
}
