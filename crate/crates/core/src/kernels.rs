//! Power-flow kernels: exact `cos`/`sin`, the first-order all-pass surrogate
//! and its pre-rotated form, each with first and second derivatives with
//! respect to the live angle argument.
//!
//! The all-pass kernel is the unit-modulus rational function
//! `r(δ) = (1 + j·a·δ)/(1 − j·a·δ)`, whose real and imaginary parts are
//!
//! ```text
//! r_cos(δ) = (1 − (aδ)²)/(1 + (aδ)²),   r_sin(δ) = 2aδ/(1 + (aδ)²).
//! ```
//!
//! The pre-rotated kernel evaluates `cos(δ_dc + Δ)` / `sin(δ_dc + Δ)` through
//! the angle-addition identities with the all-pass pair standing in for
//! `cos Δ` and `sin Δ`. Rotation by a fixed angle is orthogonal, so unit
//! modulus survives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All-pass design parameter `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParam {
    a: f64,
}

impl KernelParam {
    /// Matches `sin'(0) = 1` exactly (`ds(0) = 2a`).
    pub const DEFAULT_A: f64 = 0.5;

    pub fn new(a: f64) -> Result<Self> {
        if a.is_finite() && a > 0.0 {
            Ok(KernelParam { a })
        } else {
            Err(Error::InvalidParameter(format!(
                "all-pass parameter a = {a} must be finite and positive"
            )))
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }
}

impl Default for KernelParam {
    fn default() -> Self {
        KernelParam {
            a: Self::DEFAULT_A,
        }
    }
}

/// Kernel values and derivatives with respect to the live angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelEval {
    pub c: f64,
    pub s: f64,
    pub dc: f64,
    pub ds: f64,
    pub d2c: f64,
    pub d2s: f64,
}

/// Cached reference angle `δ_dc` of one coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationRef {
    pub delta_dc: f64,
    pub cos_dc: f64,
    pub sin_dc: f64,
}

impl RotationRef {
    pub fn new(delta_dc: f64) -> Self {
        // Evaluated on |δ| so that sin stays exactly odd whatever libm call is emitted.
        let (sin_abs, cos_dc) = delta_dc.abs().sin_cos();
        RotationRef {
            delta_dc,
            cos_dc,
            sin_dc: sin_abs.copysign(delta_dc),
        }
    }
}

fn check(delta: f64) -> Result<()> {
    if delta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(delta))
    }
}

pub fn eval_trig(delta: f64) -> Result<KernelEval> {
    check(delta)?;
    Ok(trig(delta))
}

pub fn eval_allpass(delta: f64, p: KernelParam) -> Result<KernelEval> {
    check(delta)?;
    Ok(allpass(delta, p.a))
}

/// `delta_live` is the deviation Δ from the pair's reference angle.
pub fn eval_rotated(r: &RotationRef, delta_live: f64, p: KernelParam) -> Result<KernelEval> {
    check(delta_live)?;
    Ok(rotated(r, delta_live, p.a))
}

#[inline]
pub(crate) fn trig(delta: f64) -> KernelEval {
    let (s, c) = delta.sin_cos();
    KernelEval {
        c,
        s,
        dc: -s,
        ds: c,
        d2c: -c,
        d2s: -s,
    }
}

#[cfg(test)]
thread_local! {
    static POISONED: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Make every all-pass evaluation on this thread return NaN (tests only),
/// to prove which code paths never touch the surrogate.
#[cfg(test)]
pub(crate) fn poison_allpass(on: bool) {
    POISONED.with(|p| p.set(on));
}

#[inline]
pub(crate) fn allpass(delta: f64, a: f64) -> KernelEval {
    #[cfg(test)]
    if POISONED.with(|p| p.get()) {
        return KernelEval {
            c: f64::NAN,
            s: f64::NAN,
            dc: f64::NAN,
            ds: f64::NAN,
            d2c: f64::NAN,
            d2s: f64::NAN,
        };
    }
    let u = a * delta;
    let u2 = u * u;
    if !u2.is_finite() {
        // |aδ| beyond ~1e154: the kernel sits at −1 + j0.
        return KernelEval {
            c: -1.0,
            s: 2.0 / u,
            ..KernelEval::default()
        };
    }
    let den = 1.0 + u2;
    let inv = 1.0 / den;
    let inv2 = inv * inv;
    let inv3 = inv2 * inv;
    let a2 = a * a;
    KernelEval {
        c: (1.0 - u2) * inv,
        s: 2.0 * u * inv,
        dc: -4.0 * a * u * inv2,
        ds: 2.0 * a * (1.0 - u2) * inv2,
        d2c: a2 * (12.0 * u2 - 4.0) * inv3,
        d2s: -4.0 * a2 * u * (3.0 - u2) * inv3,
    }
}

#[inline]
pub(crate) fn rotated(r: &RotationRef, delta_live: f64, a: f64) -> KernelEval {
    let k = allpass(delta_live, a);
    let (cd, sd) = (r.cos_dc, r.sin_dc);
    KernelEval {
        c: cd * k.c - sd * k.s,
        s: sd * k.c + cd * k.s,
        dc: cd * k.dc - sd * k.ds,
        ds: sd * k.dc + cd * k.ds,
        d2c: cd * k.d2c - sd * k.d2s,
        d2s: sd * k.d2c + cd * k.d2s,
    }
}

/// One row of the kernel sample table (angles in degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSample {
    pub delta_deg: f64,
    pub trig_c: f64,
    pub trig_s: f64,
    pub ap_c: f64,
    pub ap_s: f64,
    pub trig_dc: f64,
    pub trig_ds: f64,
    pub ap_dc: f64,
    pub ap_ds: f64,
}

/// Sample exact and all-pass kernels on an evenly spaced grid of `points`
/// angles spanning `[from_deg, to_deg]`. A non-zero `shift_deg` evaluates the
/// all-pass pair at `δ − shift`.
pub fn kernel_samples(
    from_deg: f64,
    to_deg: f64,
    points: usize,
    p: KernelParam,
    shift_deg: f64,
) -> Result<Vec<KernelSample>> {
    if points < 2 || !(to_deg > from_deg) {
        return Err(Error::InvalidParameter(format!(
            "sample grid [{from_deg}, {to_deg}] with {points} points"
        )));
    }
    let step = (to_deg - from_deg) / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let deg = if k + 1 == points {
                to_deg
            } else {
                from_deg + step * k as f64
            };
            let t = eval_trig(deg.to_radians())?;
            let ap = eval_allpass((deg - shift_deg).to_radians(), p)?;
            Ok(KernelSample {
                delta_deg: deg,
                trig_c: t.c,
                trig_s: t.s,
                ap_c: ap.c,
                ap_s: ap.s,
                trig_dc: t.dc,
                trig_ds: t.ds,
                ap_dc: ap.dc,
                ap_ds: ap.ds,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn p(a: f64) -> KernelParam {
        KernelParam::new(a).unwrap()
    }

    /// Central difference of `f` at `x`.
    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn close(num: f64, exact: f64, rel: f64) -> bool {
        (num - exact).abs() <= rel * exact.abs().max(1.0)
    }

    #[test]
    fn trig_identities() {
        let k = eval_trig(0.0).unwrap();
        assert_eq!((k.c, k.s, k.dc, k.ds), (1.0, 0.0, -0.0, 1.0));
        let k = eval_trig(FRAC_PI_2).unwrap();
        assert!(k.c.abs() < 1e-16 && (k.s - 1.0).abs() < 1e-16);
        let k = eval_trig(0.3).unwrap();
        assert_eq!(k.c, 0.3f64.cos());
        assert_eq!(k.s, 0.3f64.sin());
    }

    #[test]
    fn allpass_at_origin() {
        for a in [0.1, 0.5, 1.7] {
            let k = eval_allpass(0.0, p(a)).unwrap();
            assert_eq!(k.c, 1.0);
            assert_eq!(k.s, 0.0);
            assert_eq!(k.dc, 0.0);
            assert_eq!(k.ds, 2.0 * a);
        }
    }

    #[test]
    fn allpass_reference_values() {
        // (1 - 0.01)/(1 + 0.01) and 0.2/1.01
        let k = eval_allpass(0.2, p(0.5)).unwrap();
        assert!((k.c - 0.99 / 1.01).abs() < 1e-15);
        assert!((k.s - 0.2 / 1.01).abs() < 1e-15);
        assert!((k.c - 0.9801980).abs() < 1e-7);
        assert!((k.s - 0.1980198).abs() < 1e-7);
    }

    #[test]
    fn allpass_far_field() {
        let k = eval_allpass(1000.0, p(0.5)).unwrap();
        assert!(k.c < -0.9999 && k.s > 0.0 && k.s < 1e-2);
        assert!((k.c * k.c + k.s * k.s - 1.0).abs() < 1e-12);
        let k = eval_allpass(1e300, p(0.5)).unwrap();
        assert!(k.c == -1.0 && k.s.is_finite());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(eval_trig(f64::NAN).is_err());
        assert!(eval_allpass(f64::INFINITY, p(0.5)).is_err());
        assert!(eval_rotated(&RotationRef::new(0.1), f64::NAN, p(0.5)).is_err());
        assert!(KernelParam::new(0.0).is_err());
        assert!(KernelParam::new(-1.0).is_err());
    }

    #[test]
    fn rotated_at_zero_deviation_is_reference() {
        let r = RotationRef::new(0.7);
        let k = eval_rotated(&r, 0.0, p(0.5)).unwrap();
        assert_eq!(k.c, 0.7f64.cos());
        assert_eq!(k.s, 0.7f64.sin());
    }

    #[test]
    fn rotated_without_reference_is_allpass() {
        let r = RotationRef::new(0.0);
        for d in [-1.3, -0.2, 0.0, 0.4, 2.9] {
            assert_eq!(
                eval_rotated(&r, d, p(0.5)).unwrap(),
                eval_allpass(d, p(0.5)).unwrap()
            );
        }
    }

    #[test]
    fn rotated_tracks_exact_trig_near_reference() {
        let k = eval_rotated(&RotationRef::new(0.3), 0.05, p(0.5)).unwrap();
        assert!((k.c - 0.35f64.cos()).abs() < 2e-4);
        assert!((k.s - 0.35f64.sin()).abs() < 2e-4);
    }

    #[test]
    fn accuracy_window_near_origin() {
        let n = 20_001;
        let worst = (0..n)
            .map(|k| -0.2 + 0.4 * k as f64 / (n - 1) as f64)
            .map(|d| (allpass(d, 0.5).s - d.sin()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 7e-4, "max error {worst}");
    }

    #[test]
    fn derivatives_match_finite_differences_on_grid() {
        let h = 1e-5;
        for a in [0.25, 0.5, 1.0, 2.0] {
            for k in 0..=400 {
                let d = -PI + 2.0 * PI * k as f64 / 400.0;
                let e = allpass(d, a);
                assert!(close(fd(|x| allpass(x, a).c, d, h), e.dc, 1e-6));
                assert!(close(fd(|x| allpass(x, a).s, d, h), e.ds, 1e-6));
                assert!(close(fd(|x| allpass(x, a).dc, d, h), e.d2c, 1e-6));
                assert!(close(fd(|x| allpass(x, a).ds, d, h), e.d2s, 1e-6));
                let r = RotationRef::new(0.37 - d / 3.0);
                let e = rotated(&r, d, a);
                assert!(close(fd(|x| rotated(&r, x, a).c, d, h), e.dc, 1e-6));
                assert!(close(fd(|x| rotated(&r, x, a).s, d, h), e.ds, 1e-6));
                assert!(close(fd(|x| rotated(&r, x, a).dc, d, h), e.d2c, 1e-6));
                assert!(close(fd(|x| rotated(&r, x, a).ds, d, h), e.d2s, 1e-6));
                let t = trig(d);
                assert!(close(fd(|x| trig(x).c, d, h), t.dc, 1e-6));
                assert!(close(fd(|x| trig(x).dc, d, h), t.d2c, 1e-6));
            }
        }
    }

    #[test]
    fn sample_grid_endpoints() {
        let rows = kernel_samples(-180.0, 180.0, 361, p(0.5), 0.0).unwrap();
        assert_eq!(rows.len(), 361);
        assert_eq!(rows[0].delta_deg, -180.0);
        assert_eq!(rows[360].delta_deg, 180.0);
        assert_eq!(rows[180].ap_c, 1.0);
        assert!(kernel_samples(0.0, 0.0, 10, p(0.5), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn even_odd_symmetry(d in -10.0f64..10.0, a in 1e-3f64..2.0) {
            let (kp, km) = (allpass(d, a), allpass(-d, a));
            prop_assert_eq!(kp.c, km.c);
            prop_assert_eq!(kp.s, -km.s);
        }

        #[test]
        fn denominator_never_below_one(d in -1e6f64..1e6, a in 1e-3f64..2.0) {
            let u = a * d;
            prop_assert!(1.0 + u * u >= 1.0);
            let k = allpass(d, a);
            prop_assert!(k.c.abs() <= 1.0 && k.s.abs() <= 1.0);
        }
    }
}
