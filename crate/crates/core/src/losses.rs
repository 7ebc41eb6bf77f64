//! Focal and Dice losses on probability grids, with analytic gradients.
//!
//! All reductions use pairwise summation so results do not drift with grid
//! size and are reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::RealImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub dice_smooth: f64,
    pub focal_weight: f64,
    pub dice_weight: f64,
    /// Probabilities are clipped to `[eps, 1 - eps]` inside the focal loss.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            dice_smooth: 1.0,
            focal_weight: 1.0,
            dice_weight: 1.0,
            eps: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &'static str, v: f64| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(what, v.to_string()))
            }
        };
        check(self.focal_gamma >= 0.0, "focal gamma", self.focal_gamma)?;
        check((0.0..=1.0).contains(&self.focal_alpha), "focal alpha", self.focal_alpha)?;
        check(self.dice_smooth > 0.0, "dice smooth", self.dice_smooth)?;
        check(self.focal_weight >= 0.0, "focal weight", self.focal_weight)?;
        check(self.dice_weight >= 0.0, "dice weight", self.dice_weight)?;
        check(self.eps > 0.0 && self.eps < 0.5, "probability clip", self.eps)
    }
}

/// Loss value and its gradient with respect to each probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn check_shapes(p: &RealImage, y: &RealImage) -> Result<()> {
    if !p.same_shape(y) {
        return Err(Error::mismatch(
            format!("prediction {}", p.shape()),
            format!("target {}", y.shape()),
        ));
    }
    Ok(())
}

/// Mean over pixels of
/// `-α·y·(1-p)^γ·ln p - (1-α)·(1-y)·p^γ·ln(1-p)`.
pub fn focal_loss(p: &RealImage, y: &RealImage, cfg: &LossConfig) -> Result<LossValue> {
    check_shapes(p, y)?;
    cfg.validate()?;
    let (alpha, gamma, eps) = (cfg.focal_alpha, cfg.focal_gamma, cfg.eps);
    let n = p.data().len() as f64;
    let mut terms = Vec::with_capacity(p.data().len());
    let mut grad = Vec::with_capacity(p.data().len());
    for (&raw, &t) in p.data().iter().zip(y.data()) {
        let clipped = !(eps..=1.0 - eps).contains(&raw);
        let q = raw.clamp(eps, 1.0 - eps);
        let (lq, l1q) = (q.ln(), (1.0 - q).ln());
        let pos = (1.0 - q).powf(gamma);
        let neg = q.powf(gamma);
        terms.push(-alpha * t * pos * lq - (1.0 - alpha) * (1.0 - t) * neg * l1q);
        if clipped {
            grad.push(0.0);
            continue;
        }
        // d/dq of (1-q)^γ and q^γ; γ = 0 makes both vanish.
        let dpos = if gamma == 0.0 {
            0.0
        } else {
            -gamma * (1.0 - q).powf(gamma - 1.0)
        };
        let dneg = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
        let g = -alpha * t * (dpos * lq + pos / q) - (1.0 - alpha) * (1.0 - t) * (dneg * l1q - neg / (1.0 - q));
        grad.push(g / n);
    }
    Ok(LossValue {
        loss: pairwise_sum(&terms) / n,
        grad,
    })
}

/// `1 - (2·Σpy + s) / (Σp + Σy + s)`.
pub fn dice_loss(p: &RealImage, y: &RealImage, cfg: &LossConfig) -> Result<LossValue> {
    check_shapes(p, y)?;
    cfg.validate()?;
    let s = cfg.dice_smooth;
    let products: Vec<f64> = p.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
    let inter = pairwise_sum(&products);
    let num = 2.0 * inter + s;
    let den = pairwise_sum(p.data()) + pairwise_sum(y.data()) + s;
    let grad = y.data().iter().map(|&t| -(2.0 * t * den - num) / (den * den)).collect();
    Ok(LossValue {
        loss: 1.0 - num / den,
        grad,
    })
}

/// `λ_focal·focal + λ_dice·dice`, gradients combined the same way.
pub fn total_loss(p: &RealImage, y: &RealImage, cfg: &LossConfig) -> Result<LossValue> {
    let f = focal_loss(p, y, cfg)?;
    let d = dice_loss(p, y, cfg)?;
    let (wf, wd) = (cfg.focal_weight, cfg.dice_weight);
    Ok(LossValue {
        loss: wf * f.loss + wd * d.loss,
        grad: f.grad.iter().zip(&d.grad).map(|(a, b)| wf * a + wd * b).collect(),
    })
}

/// All three loss values, as reported by the `loss-eval` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub focal: f64,
    pub dice: f64,
    pub total: f64,
}

pub fn summarize(p: &RealImage, y: &RealImage, cfg: &LossConfig) -> Result<LossSummary> {
    let focal = focal_loss(p, y, cfg)?.loss;
    let dice = dice_loss(p, y, cfg)?.loss;
    Ok(LossSummary {
        focal,
        dice,
        total: cfg.focal_weight * focal + cfg.dice_weight * dice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(v: Vec<f64>) -> RealImage {
        let n = v.len();
        RealImage::new(n, 1, 1, v).unwrap()
    }

    fn random_pair(seed: u64) -> (RealImage, RealImage) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = RealImage::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.02..0.98)).unwrap();
        let y = RealImage::from_fn(8, 8, 1, |_, _, _| f64::from(rng.random_bool(0.4) as u8)).unwrap();
        (p, y)
    }

    fn finite_difference(f: impl Fn(&RealImage) -> f64, p: &RealImage, i: usize, h: f64) -> f64 {
        let mut plus = p.clone().into_data();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let mk = |d| RealImage::new(p.width(), p.height(), 1, d).unwrap();
        (f(&mk(plus)) - f(&mk(minus))) / (2.0 * h)
    }

    #[test]
    fn focal_hand_value() {
        let v = focal_loss(&grid(vec![0.5]), &grid(vec![1.0]), &LossConfig::default()).unwrap();
        let expected = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((v.loss - expected).abs() < 1e-12);
        assert!((v.loss - 0.043322).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction_losses_vanish() {
        let y = grid(vec![0.0, 1.0, 1.0, 0.0, 1.0]);
        let cfg = LossConfig::default();
        assert!(focal_loss(&y, &y, &cfg).unwrap().loss < 1e-5);
        assert!(dice_loss(&y, &y, &cfg).unwrap().loss.abs() < 1e-15);
        assert!(total_loss(&y, &y, &cfg).unwrap().loss < 1e-5);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let cfg = LossConfig {
            focal_gamma: 0.0,
            focal_alpha: 0.5,
            ..Default::default()
        };
        let p = grid(vec![0.1, 0.7, 0.4, 0.95]);
        let y = grid(vec![0.0, 1.0, 1.0, 0.0]);
        let bce: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&q, &t)| -(t * q.ln() + (1.0 - t) * (1.0 - q).ln()))
            .sum::<f64>()
            / 4.0;
        assert!((focal_loss(&p, &y, &cfg).unwrap().loss - 0.5 * bce).abs() < 1e-12);
    }

    #[test]
    fn dice_fixtures() {
        let cfg = LossConfig::default();
        let zeros = RealImage::filled(20, 10, 1, 0.0).unwrap();
        let y = RealImage::from_fn(20, 10, 1, |x, _, _| if x < 10 { 1.0 } else { 0.0 }).unwrap();
        let v = dice_loss(&zeros, &y, &cfg).unwrap().loss;
        assert!((v - (1.0 - 1.0 / 101.0)).abs() < 1e-12);
        assert!((v - 0.990099).abs() < 1e-6);
        assert_eq!(dice_loss(&zeros, &zeros, &cfg).unwrap().loss, 0.0);
    }

    #[test]
    fn weights_select_components() {
        let (p, y) = random_pair(3);
        let f = focal_loss(&p, &y, &LossConfig::default()).unwrap();
        let d = dice_loss(&p, &y, &LossConfig::default()).unwrap();
        let only_f = LossConfig {
            dice_weight: 0.0,
            ..Default::default()
        };
        let only_d = LossConfig {
            focal_weight: 0.0,
            ..Default::default()
        };
        assert_eq!(total_loss(&p, &y, &only_f).unwrap(), f);
        assert_eq!(total_loss(&p, &y, &only_d).unwrap(), d);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = RealImage::filled(4, 4, 1, 0.5).unwrap();
        let b = RealImage::filled(4, 3, 1, 0.5).unwrap();
        assert!(focal_loss(&a, &b, &LossConfig::default()).is_err());
        assert!(dice_loss(&a, &b, &LossConfig::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = LossConfig::default();
        type LossFn = fn(&RealImage, &RealImage, &LossConfig) -> Result<LossValue>;
        let losses: [(&str, LossFn); 3] = [("focal", focal_loss), ("dice", dice_loss), ("total", total_loss)];
        for seed in 0..5 {
            let (p, y) = random_pair(seed);
            for (name, f) in losses {
                let analytic = f(&p, &y, &cfg).unwrap().grad;
                for (i, a) in analytic.iter().enumerate() {
                    let n = finite_difference(|q| f(q, &y, &cfg).unwrap().loss, &p, i, 1e-5);
                    let rel = (a - n).abs() / a.abs().max(n.abs());
                    assert!(rel < 1e-4, "{name} seed {seed} pixel {i}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn clipped_pixels_have_zero_gradient() {
        let v = focal_loss(&grid(vec![0.0, 1.0]), &grid(vec![1.0, 0.0]), &LossConfig::default()).unwrap();
        assert_eq!(v.grad, vec![0.0, 0.0]);
        assert!(v.loss.is_finite() && v.loss > 1.0);
    }

    proptest! {
        #[test]
        fn ranges_hold(seed in any::<u64>()) {
            let (p, y) = random_pair(seed);
            let cfg = LossConfig::default();
            prop_assert!(focal_loss(&p, &y, &cfg).unwrap().loss >= 0.0);
            let d = dice_loss(&p, &y, &cfg).unwrap().loss;
            prop_assert!((0.0..1.0).contains(&d));
        }

        #[test]
        fn permutation_invariant(seed in any::<u64>(), rot in 1usize..63) {
            let (p, y) = random_pair(seed);
            let mut pd = p.clone().into_data();
            let mut yd = y.clone().into_data();
            pd.rotate_left(rot);
            yd.rotate_left(rot);
            let (ps, ys) = (RealImage::new(8, 8, 1, pd).unwrap(), RealImage::new(8, 8, 1, yd).unwrap());
            let cfg = LossConfig::default();
            prop_assert!((focal_loss(&p, &y, &cfg).unwrap().loss - focal_loss(&ps, &ys, &cfg).unwrap().loss).abs() < 1e-12);
            prop_assert!((dice_loss(&p, &y, &cfg).unwrap().loss - dice_loss(&ps, &ys, &cfg).unwrap().loss).abs() < 1e-12);
        }

        #[test]
        fn dice_symmetric_for_binary(seed in any::<u64>()) {
            let (_, y) = random_pair(seed);
            let (_, p) = random_pair(seed.wrapping_add(1));
            let cfg = LossConfig::default();
            prop_assert!((dice_loss(&p, &y, &cfg).unwrap().loss - dice_loss(&y, &p, &cfg).unwrap().loss).abs() < 1e-15);
        }
    }
}
