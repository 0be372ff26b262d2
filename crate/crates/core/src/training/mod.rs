//! SGD training loop with the BCE + consistency objective, polynomial
//! learning-rate decay, light augmentation and divergence detection.

mod augment;
mod loss;

pub use augment::{augment_sample, hflip, rotate_nearest};
pub use loss::{bce_loss, cel_loss, total_loss};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::PrNet;
use crate::tensor::{Tape, Tensor};

/// One training pair, already resized to the model's square input extent.
/// `image` is CHW RGB in [0,1]; `mask` is HW in {0,1}.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Vec<f32>,
    pub mask: Vec<f32>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub power: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 4,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            power: 0.9,
            augment: true,
            seed: 1,
        }
    }
}

/// `lr * (1 - iter/max_iter)^power`, evaluated before every step.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    debug_assert!(max_iter > 0 && iter <= max_iter);
    base * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

/// One line of the loss trace, emitted per optimization step.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub lr: f64,
    pub bce: f64,
    pub cel: f64,
    pub total: f64,
}

fn batch_tensors(data: &[Sample], idx: &[usize], augment: bool, rng: &mut ChaCha8Rng) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let size = data[idx[0]].size;
    let b = idx.len();
    let mut img = Vec::with_capacity(b * 3 * size * size);
    let mut msk = Vec::with_capacity(b * size * size);
    for &i in idx {
        let s = &data[i];
        if s.size != size {
            return Err(Error::Dataset(format!(
                "mixed sample extents {} and {} in one batch",
                size, s.size
            )));
        }
        if augment {
            let a = augment_sample(s, rng);
            img.extend_from_slice(&a.image);
            msk.extend_from_slice(&a.mask);
        } else {
            img.extend_from_slice(&s.image);
            msk.extend_from_slice(&s.mask);
        }
    }
    Ok((
        Tensor::from_vec(vec![b, 3, size, size], img)?,
        Tensor::from_vec(vec![b, 1, size, size], msk)?,
    ))
}

/// Run the full schedule over `data`, calling `on_epoch` after each epoch
/// (e.g. to checkpoint). Aborts with [`Error::Diverged`] the moment the loss
/// stops being finite, leaving the parameters as they were before the bad
/// step so the caller's last checkpoint stays meaningful.
pub fn train_loop<F>(
    net: &PrNet<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<TraceRow>>
where
    F: FnMut(usize, &[TraceRow], u128) -> Result<()>,
{
    if data.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let max_iter = cfg.epochs * steps_per_epoch;
    let mut trace = Vec::with_capacity(max_iter);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut iter = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            // batch norm needs at least two items for batch statistics, so a
            // trailing singleton batch carries its sample twice
            let chunk: Vec<usize> = if chunk.len() == 1 {
                vec![chunk[0], chunk[0]]
            } else {
                chunk.to_vec()
            };
            let (img, msk) = batch_tensors(data, &chunk, cfg.augment, &mut rng)?;
            let tape = Tape::new();
            let img = tape.watch(&img);
            let (pred, _) = net.forward(&img, Mode::Train)?;
            let bce = bce_loss(&pred, &msk)?;
            let cel = cel_loss(&pred, &msk)?;
            let total = crate::ops::add(&bce, &cel)?;
            let total_v = total.item() as f64;
            if !total_v.is_finite() {
                return Err(Error::Diverged { iter });
            }
            let lr = poly_lr(cfg.lr, iter, max_iter, cfg.power);
            net.store().zero_grads();
            tape.backward(&total)?;
            for p in net.store().trainable() {
                p.sgd_step(lr as f32, cfg.momentum as f32, cfg.weight_decay as f32);
            }
            trace.push(TraceRow {
                iter,
                lr,
                bce: bce.item() as f64,
                cel: cel.item() as f64,
                total: total_v,
            });
            iter += 1;
        }
        on_epoch(epoch, &trace, rng.get_word_pos())?;
    }
    Ok(trace)
}

/// Deterministic toy dataset: one bright ellipse or rectangle on a dark
/// background, with mild pixel noise. Useful for overfit smoke tests and
/// the bundled demo commands.
pub fn synthetic_shapes(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut image = vec![0.0f32; 3 * size * size];
            let mut mask = vec![0.0f32; size * size];
            let bg: [f32; 3] = [rng.gen_range(0.0..0.25), rng.gen_range(0.0..0.25), rng.gen_range(0.0..0.25)];
            let fg: [f32; 3] = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
            let cx = rng.gen_range(size / 4..3 * size / 4) as f64;
            let cy = rng.gen_range(size / 4..3 * size / 4) as f64;
            let rx = rng.gen_range(size / 8..size / 4) as f64;
            let ry = rng.gen_range(size / 8..size / 4) as f64;
            let rect = rng.gen_bool(0.5);
            for y in 0..size {
                for x in 0..size {
                    let inside = if rect {
                        (x as f64 - cx).abs() <= rx && (y as f64 - cy).abs() <= ry
                    } else {
                        let dx = (x as f64 - cx) / rx;
                        let dy = (y as f64 - cy) / ry;
                        dx * dx + dy * dy <= 1.0
                    };
                    let color = if inside { &fg } else { &bg };
                    for c in 0..3 {
                        let noise: f32 = rng.gen_range(-0.02..0.02);
                        image[(c * size + y) * size + x] = (color[c] + noise).clamp(0.0, 1.0);
                    }
                    if inside {
                        mask[y * size + x] = 1.0;
                    }
                }
            }
            Sample { image, mask, size }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;

    #[test]
    fn poly_schedule_endpoints_and_monotonicity() {
        assert_eq!(poly_lr(1e-3, 0, 100, 0.9), 1e-3);
        assert_eq!(poly_lr(1e-3, 100, 100, 0.9), 0.0);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let lr = poly_lr(1e-3, i, 100, 0.9);
            assert!(lr < prev);
            prev = lr;
        }
        // halfway point of the canonical schedule
        let want = 1e-3 * 0.5f64.powf(0.9);
        assert!((poly_lr(1e-3, 50, 100, 0.9) - want).abs() < 1e-18);
    }

    #[test]
    fn synthetic_shapes_are_deterministic_and_nonempty() {
        let a = synthetic_shapes(4, 32, 5);
        let b = synthetic_shapes(4, 32, 5);
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask, y.mask);
            let fg: f32 = x.mask.iter().sum();
            assert!(fg > 0.0 && fg < (32 * 32) as f32);
        }
    }

    #[test]
    fn short_run_reduces_loss_and_is_reproducible() {
        let cfg = ModelConfig {
            stage_channels: [4, 8, 8, 8, 8],
            unified: 8,
            variant: crate::network::Variant::Fpn,
            ieo: false,
            input_size: 32,
            ..ModelConfig::default()
        };
        let data = synthetic_shapes(4, 32, 11);
        let tcfg = TrainConfig {
            epochs: 10,
            batch_size: 2,
            lr: 0.05,
            augment: false,
            ..TrainConfig::default()
        };
        let run = || {
            let net = PrNet::<f32>::new(cfg.clone()).unwrap();
            train_loop(&net, &data, &tcfg, |_, _, _| Ok(())).unwrap()
        };
        let trace = run();
        assert_eq!(trace.len(), 20);
        let first: f64 = trace[..3].iter().map(|r| r.total).sum();
        let last: f64 = trace[trace.len() - 3..].iter().map(|r| r.total).sum();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        for r in &trace {
            assert!((r.total - (r.bce + r.cel)).abs() < 1e-6);
        }
        let again = run();
        for (a, b) in trace.iter().zip(&again) {
            assert_eq!(a.total, b.total, "training is not bit-deterministic");
        }
    }

    #[test]
    fn divergence_is_reported_not_panicked() {
        let cfg = ModelConfig {
            stage_channels: [4, 4, 4, 4, 4],
            unified: 4,
            variant: crate::network::Variant::Fpn,
            ieo: false,
            input_size: 32,
            ..ModelConfig::default()
        };
        let net = PrNet::<f32>::new(cfg).unwrap();
        // poison a weight so the first forward pass is already non-finite
        let p = net.store().find("decoder.predict.weight").unwrap();
        p.set_values(&vec![f32::NAN; p.numel()]);
        let data = synthetic_shapes(2, 32, 1);
        let err = train_loop(&net, &data, &TrainConfig::default(), |_, _, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Diverged { iter: 0 }));
    }
}
