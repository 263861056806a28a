use crate::error::{Error, Result};

const ASYMPTOTIC_START: f64 = 10.0;

/// Digamma function `Ψ(x) = d/dx ln Γ(x)` for `x > 0`.
///
/// Shifts `x` upward with `Ψ(x) = Ψ(x + 1) − 1/x` until it reaches the
/// asymptotic region, then sums the Bernoulli-number series
/// `ln x − 1/(2x) − Σ B₂ₙ / (2n x²ⁿ)`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!(
            "digamma needs a finite positive argument, got {x}"
        )));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < ASYMPTOTIC_START {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // B2/2, B4/4, ... B14/14
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 / x - series)
}
