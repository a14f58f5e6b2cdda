/// Largest `α ∈ (0, 1]` with `v + α·dv ≥ (1 − τ)·v` componentwise (`v > 0`).
pub fn fraction_to_boundary(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    v.iter().zip(dv).fold(1.0f64, |a, (&vi, &di)| a.min(ratio(vi, di, tau)))
}

/// Single-component ratio test; entries with `v == 0` (absent bounds) never bind.
pub(crate) fn ratio(v: f64, dv: f64, tau: f64) -> f64 {
    if dv < 0.0 && v > 0.0 {
        (-tau * v / dv).min(1.0)
    } else {
        1.0
    }
}

/// Armijo backtracking by halving from `alpha_max`.
///
/// `merit(α)` returns the merit at the trial point, or `None` when the trial
/// point cannot be evaluated. Returns the accepted step, or `None` once the
/// step would drop below `alpha_min`.
pub fn backtrack(
    phi0: f64,
    dphi: f64,
    alpha_max: f64,
    eta: f64,
    alpha_min: f64,
    mut merit: impl FnMut(f64) -> Option<f64>,
) -> Option<f64> {
    let mut alpha = alpha_max;
    while alpha >= alpha_min {
        if let Some(m) = merit(alpha) {
            if m.is_finite() && m <= phi0 + eta * alpha * dphi {
                return Some(alpha);
            }
        }
        alpha *= 0.5;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_test_caps_step() {
        let a = fraction_to_boundary(&[1.0], &[-2.0], 0.995);
        assert!((a - 0.4975).abs() < 1e-15);
        assert_eq!(fraction_to_boundary(&[1.0, 2.0], &[0.0, 3.0], 0.995), 1.0);
    }

    #[test]
    fn descent_direction_takes_full_step() {
        // φ(α) = (1 − α)², φ'(0) = −2
        let a = backtrack(1.0, -2.0, 1.0, 1e-4, 1e-12, |a| Some((1.0 - a) * (1.0 - a)));
        assert_eq!(a, Some(1.0));
    }

    #[test]
    fn ascent_direction_fails() {
        // claimed slope is negative but the merit increases along the ray
        let a = backtrack(1.0, -1.0, 1.0, 1e-4, 1e-12, |a| Some(1.0 + a));
        assert_eq!(a, None);
    }

    #[test]
    fn unevaluable_trials_are_halved() {
        let a = backtrack(0.0, -1.0, 1.0, 1e-4, 1e-12, |a| if a > 0.3 { None } else { Some(-a) });
        assert_eq!(a, Some(0.25));
    }
}
