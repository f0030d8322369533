//! Small numeric helpers shared by the filter-heavy modules.

/// Exact discrete step of a first-order lag `T dy/dt = r - y` over `dt`
/// with the input held at `r`. A non-positive time constant degenerates
/// to a pass-through.
#[inline]
pub(crate) fn exp_track(y: f64, r: f64, dt: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        r
    } else {
        y + (r - y) * (-(-dt / tau).exp_m1())
    }
}

#[inline]
pub(crate) fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}
