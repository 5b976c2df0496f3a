//! Float helpers that `core` does not provide without `std`.

#[inline]
pub(crate) fn sqrt_f32(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub(crate) fn sqrt_f64(x: f64) -> f64 {
    libm::sqrt(x)
}
