/// Proximal map of `kappa * |x|`.
#[inline]
pub fn soft_threshold_scalar(v: f64, kappa: f64) -> f64 {
    let mag = v.abs() - kappa;
    if mag > 0.0 {
        v.signum() * mag
    } else {
        0.0
    }
}

/// Elementwise `sign(v) * max(|v| - kappa, 0)`, the prox of `kappa‖·‖₁`.
pub fn soft_threshold(v: &[f64], kappa: f64) -> Vec<f64> {
    debug_assert!(kappa >= 0.0);
    v.iter().map(|&x| soft_threshold_scalar(x, kappa)).collect()
}

/// Euclidean projection onto the unit ℓ∞ ball: `u / max(1, |u|)` per entry.
pub fn project_linf_ball(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&x| x / x.abs().max(1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert!((soft_threshold_scalar(1.2, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold_scalar(-0.3, 0.5), 0.0);
        assert!((soft_threshold_scalar(-1.5, 0.5) + 1.0).abs() < 1e-15);
        assert_eq!(project_linf_ball(&[2.0, -0.5, -3.0]), vec![1.0, -0.5, -1.0]);
    }

    // brute-force argmin of 0.5 (x - v)^2 + kappa |x| over a dense grid
    fn grid_prox(v: f64, kappa: f64) -> f64 {
        let h = 1e-4;
        let lo = -v.abs() - kappa - 1.0;
        let n = ((2.0 * (v.abs() + kappa + 1.0)) / h).ceil() as usize;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let f = 0.5 * (x - v).powi(2) + kappa * x.abs();
            if f < best.0 {
                best = (f, x);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_matches_grid_oracle() {
        let mut g = GaussianStream::new(17);
        for _ in 0..100 {
            let v = 2.0 * g.next_gaussian();
            let kappa = g.next_uniform();
            let got = soft_threshold_scalar(v, kappa);
            assert!((got - grid_prox(v, kappa)).abs() <= 1e-4, "v={v} kappa={kappa}");
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_non_expansive(
            a in prop::collection::vec(-10.0f64..10.0, 16),
            b in prop::collection::vec(-10.0f64..10.0, 16),
            kappa in 0.0f64..3.0,
        ) {
            let sa = soft_threshold(&a, kappa);
            let sb = soft_threshold(&b, kappa);
            let d_out: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn projection_is_clamp_and_idempotent(u in prop::collection::vec(-5.0f64..5.0, 32)) {
            let p = project_linf_ball(&u);
            for (x, y) in u.iter().zip(&p) {
                prop_assert_eq!(*y, x.clamp(-1.0, 1.0));
            }
            prop_assert_eq!(project_linf_ball(&p), p);
        }
    }
}
