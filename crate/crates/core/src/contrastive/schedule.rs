use std::f64::consts::PI;

use super::TrainConfig;

/// Linear warmup from zero to `base_lr`, then a single cosine decay that
/// reaches zero at `epochs * steps_per_epoch`.
pub fn lr_at(step: usize, cfg: &TrainConfig, steps_per_epoch: usize) -> f64 {
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.epochs * steps_per_epoch;
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return cfg.base_lr;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        let cfg = TrainConfig::default();
        let spe = 84;
        assert_eq!(lr_at(0, &cfg, spe), 0.0);
        assert!((lr_at(2 * spe, &cfg, spe) - 0.1).abs() < 1e-15);
        assert!((lr_at(spe, &cfg, spe) - 0.05).abs() < 1e-15);
        assert!(lr_at(25 * spe, &cfg, spe) < 1e-4 * cfg.base_lr);
        assert!(lr_at(25 * spe - 1, &cfg, spe) < 1e-4 * cfg.base_lr);
        assert!(lr_at(10 * 25 * spe, &cfg, spe) < 1e-4 * cfg.base_lr);
        // halfway through the cosine leg
        let mid = 2 * spe + 23 * spe / 2;
        assert!((lr_at(mid, &cfg, spe) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn degenerate_schedules() {
        let cfg = TrainConfig { warmup_epochs: 0, epochs: 1, ..Default::default() };
        assert_eq!(lr_at(0, &cfg, 10), 0.1);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(lr_at(3, &cfg, 10).is_finite());
    }

    proptest! {
        #[test]
        fn continuous_and_nonincreasing_after_warmup(
            warmup in 0usize..5, extra in 1usize..30, spe in 1usize..50, lr in 0.001f64..1.0,
        ) {
            let cfg = TrainConfig { warmup_epochs: warmup, epochs: warmup + extra, base_lr: lr, ..Default::default() };
            let w = warmup * spe;
            let total = cfg.epochs * spe;
            if w > 0 {
                let jump = (lr_at(w, &cfg, spe) - lr_at(w - 1, &cfg, spe)).abs();
                prop_assert!(jump <= lr / w as f64 + 1e-12);
            }
            let mut prev = lr_at(w, &cfg, spe);
            for s in w + 1..=total + 2 {
                let cur = lr_at(s, &cfg, spe);
                prop_assert!(cur <= prev + 1e-15);
                prop_assert!(cur >= 0.0);
                prev = cur;
            }
            for s in 0..w {
                prop_assert!(lr_at(s, &cfg, spe) <= lr_at(s + 1, &cfg, spe));
            }
        }
    }
}
