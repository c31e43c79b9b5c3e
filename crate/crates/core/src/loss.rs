//! Focal loss configuration and background-point loss masking.
//!
//! The positive/negative imbalance under point supervision is extreme (a
//! handful of label pixels against the whole frame), so the training loss
//! is a focal loss whose negative term can be restricted to a subset of
//! background pixels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::focal_term;
use crate::grid::{Grid, Mask};

/// Which background pixels contribute negative loss.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundMode {
    /// Every background pixel.
    All,
    /// `j` background pixels, freshly sampled each training iteration.
    Random { j: usize },
    /// `i` background pixels sampled near the targets once per run and then
    /// held fixed.
    Handcrafted { i: usize },
}

#[derive(Clone, Debug)]
pub struct LossConfig {
    /// Focusing exponent, >= 0.
    pub gamma: f64,
    /// Positive-class weight in [0,1].
    pub alpha: f64,
    pub background: BackgroundMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 2.0, alpha: 0.75, background: BackgroundMode::All }
    }
}

/// Masked-mean focal loss over a grid, matching the autodiff head in
/// [`crate::graph`]. Used for evaluation outside the training graph.
pub fn focal_loss_grid(pred: &Grid, target: &Grid, cfg: &LossConfig, mask: &Mask) -> Result<f64> {
    let count = mask.count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mut acc = 0.0;
    for i in 0..pred.data().len() {
        if mask.data()[i] {
            acc += focal_term(pred.data()[i], target.data()[i], cfg.gamma, cfg.alpha);
        }
    }
    Ok(acc / count as f64)
}

/// Chebyshev distance within which "handcrafted" background points are
/// sampled around positive label pixels.
const HANDCRAFTED_RADIUS: isize = 5;

/// Build the loss mask for one label map. Positive pixels (value > 0.5)
/// are always included; background inclusion follows the mode.
pub fn background_loss_mask(
    target: &Grid,
    mode: &BackgroundMode,
    rng: &mut ChaCha8Rng,
) -> Result<Mask> {
    let positives = target.threshold(0.5);
    if !positives.any() {
        return Err(Error::InvalidArgument(
            "loss mask needs at least one positive label pixel".into(),
        ));
    }
    let (h, w) = (positives.height(), positives.width());
    match mode {
        BackgroundMode::All => Ok(Mask::filled(h, w, true)),
        BackgroundMode::Random { j } => {
            let background: Vec<usize> = (0..h * w).filter(|&i| !positives.data()[i]).collect();
            if *j > background.len() {
                return Err(Error::InvalidArgument(format!(
                    "requested {j} random background points, only {} available",
                    background.len()
                )));
            }
            let mut mask = positives.clone();
            let mut pool = background;
            for i in 0..*j {
                let pick = rng.gen_range(i..pool.len());
                pool.swap(i, pick);
                let idx = pool[i];
                mask.set(idx / w, idx % w, true);
            }
            Ok(mask)
        }
        BackgroundMode::Handcrafted { i } => {
            let mut near: Vec<usize> = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if positives.at(y, x) {
                        continue;
                    }
                    let close = positives.pixels().iter().any(|&(py, px)| {
                        (py as isize - y as isize).abs() <= HANDCRAFTED_RADIUS
                            && (px as isize - x as isize).abs() <= HANDCRAFTED_RADIUS
                    });
                    if close {
                        near.push(y * w + x);
                    }
                }
            }
            if *i > near.len() {
                return Err(Error::InvalidArgument(format!(
                    "requested {i} handcrafted background points, only {} near targets",
                    near.len()
                )));
            }
            let mut mask = positives.clone();
            for k in 0..*i {
                let pick = rng.gen_range(k..near.len());
                near.swap(k, pick);
                let idx = near[k];
                mask.set(idx / w, idx % w, true);
            }
            Ok(mask)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn point_target(h: usize, w: usize, y: usize, x: usize) -> Grid {
        let mut g = Grid::zeros(h, w);
        g.set(y, x, 1.0);
        g
    }

    #[test]
    fn perfect_hard_prediction_has_near_zero_loss() {
        let target = point_target(4, 4, 1, 1);
        let pred = target.clone();
        let mask = Mask::filled(4, 4, true);
        for gamma in [0.0, 1.0, 2.0] {
            let cfg = LossConfig { gamma, alpha: 0.75, background: BackgroundMode::All };
            let loss = focal_loss_grid(&pred, &target, &cfg, &mask).unwrap();
            assert!(loss >= 0.0);
            assert!(loss < 1e-5, "gamma {gamma}: loss {loss}");
        }
    }

    #[test]
    fn gamma_zero_alpha_half_is_half_bce() {
        let mut pred = Grid::zeros(2, 2);
        pred.data_mut().copy_from_slice(&[0.3, 0.8, 0.6, 0.2]);
        let mut target = Grid::zeros(2, 2);
        target.data_mut().copy_from_slice(&[0.0, 1.0, 1.0, 0.0]);
        let mask = Mask::filled(2, 2, true);
        let cfg = LossConfig { gamma: 0.0, alpha: 0.5, background: BackgroundMode::All };
        let loss = focal_loss_grid(&pred, &target, &cfg, &mask).unwrap();
        let bce: f64 = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| -t * p.ln() - (1.0 - t) * (1.0 - p).ln())
            .sum::<f64>()
            / 4.0;
        assert!((loss - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_hand_evaluation() {
        // p = 0.5, t = 1, gamma = 2, alpha = 0.75 -> 0.75 * 0.25 * ln 2
        let pred = Grid::from_vec(1, 1, vec![0.5]).unwrap();
        let target = Grid::from_vec(1, 1, vec![1.0]).unwrap();
        let mask = Mask::filled(1, 1, true);
        let cfg = LossConfig::default();
        let loss = focal_loss_grid(&pred, &target, &cfg, &mask).unwrap();
        let expected = 0.75 * 0.25 * 2.0f64.ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.12997).abs() < 1e-4);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let pred = Grid::filled(2, 2, 0.5);
        let target = Grid::zeros(2, 2);
        let cfg = LossConfig::default();
        assert!(matches!(
            focal_loss_grid(&pred, &target, &cfg, &Mask::zeros(2, 2)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn all_mode_masks_everything() {
        let target = point_target(8, 8, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = background_loss_mask(&target, &BackgroundMode::All, &mut rng).unwrap();
        assert_eq!(mask.count(), 64);
    }

    #[test]
    fn random_2_has_exactly_three_ones() {
        let target = point_target(8, 8, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask =
            background_loss_mask(&target, &BackgroundMode::Random { j: 2 }, &mut rng).unwrap();
        assert_eq!(mask.count(), 3);
        assert!(mask.at(3, 3));
    }

    #[test]
    fn random_masks_differ_across_draws() {
        let target = point_target(64, 64, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100 {
            let mask =
                background_loss_mask(&target, &BackgroundMode::Random { j: 5 }, &mut rng).unwrap();
            seen.insert(mask.pixels());
        }
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn handcrafted_points_are_near_targets_and_reproducible() {
        let target = point_target(32, 32, 16, 16);
        let mask_a = background_loss_mask(
            &target,
            &BackgroundMode::Handcrafted { i: 3 },
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let mask_b = background_loss_mask(
            &target,
            &BackgroundMode::Handcrafted { i: 3 },
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(mask_a, mask_b);
        assert_eq!(mask_a.count(), 4);
        for (y, x) in mask_a.pixels() {
            assert!((y as isize - 16).abs() <= HANDCRAFTED_RADIUS);
            assert!((x as isize - 16).abs() <= HANDCRAFTED_RADIUS);
        }
    }

    #[test]
    fn oversized_requests_are_rejected() {
        let target = point_target(4, 4, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(
            background_loss_mask(&target, &BackgroundMode::Random { j: 16 }, &mut rng).is_err()
        );
    }
}
