//! Matérn ν = 3/2 covariance on Euclidean distance.

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// `s²·(1 + √3 r/l)·exp(−√3 r/l)` with `r = ‖x − x'‖₂`.
pub fn matern32(x: &[f64], x_prime: &[f64], length_scale: f64, signal_var: f64) -> f64 {
    let r = x
        .iter()
        .zip(x_prime)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    matern32_r(r, length_scale, signal_var)
}

#[inline]
pub fn matern32_r(r: f64, length_scale: f64, signal_var: f64) -> f64 {
    let a = SQRT3 * r / length_scale;
    signal_var * (1.0 + a) * (-a).exp()
}

/// Derivative of the kernel with respect to `ln l`: `s²·a²·exp(−a)`.
#[inline]
pub fn matern32_dlog_length(r: f64, length_scale: f64, signal_var: f64) -> f64 {
    let a = SQRT3 * r / length_scale;
    signal_var * a * a * (-a).exp()
}
