//! Hand-derived reference for the MFI regression targets and inference rules.
//!
//! Every variant writes the network output as `g = φ(a_t, e, t) − u` for a fixed
//! analytic `φ` (PlainU is the exception: `g = u`). The average velocity obeys
//! `u = v − (t − b)·du/dt` along the path `da_t/dt = v`, `de/dt = 0`, so the
//! target for `g` is `φ − v + (t − b)·(dφ/dt − dg/dt)`.

use mfql::Variant;

/// `(φ, dφ/dt)` for a variant, or `None` when the network predicts `u` itself.
pub fn phi(variant: Variant, a_t: f64, e: f64, t: f64, v: f64) -> Option<(f64, f64)> {
    match variant {
        Variant::PlainU => None,
        Variant::ResidualAt => Some((a_t, v)),
        Variant::EMinusU => Some((e, 0.0)),
        Variant::EtMinusU => Some((t * e, e)),
        Variant::Const2 => Some((2.0, 0.0)),
        Variant::TimeT => Some((t, 1.0)),
        Variant::TwoAt => Some((2.0 * a_t, 2.0 * v)),
    }
}

pub fn target(variant: Variant, e: f64, a_t: f64, v: f64, b: f64, t: f64, dgdt: f64) -> f64 {
    match phi(variant, a_t, e, t, v) {
        None => v - (t - b) * dgdt,
        Some((p, dp)) => p - v + (t - b) * (dp - dgdt),
    }
}

/// One-step action `e − u(e, 0, 1)` recovered from the network output.
pub fn action(variant: Variant, e: f64, g: f64) -> f64 {
    let u = match phi(variant, e, e, 1.0, 0.0) {
        None => g,
        Some((p, _)) => p - g,
    };
    e - u
}
