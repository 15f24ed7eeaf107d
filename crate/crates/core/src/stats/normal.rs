use std::sync::LazyLock;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

static STD_NORMAL: LazyLock<Normal> = LazyLock::new(|| Normal::new(0.0, 1.0).unwrap());

pub fn norm_cdf(x: f64) -> f64 {
    STD_NORMAL.cdf(x)
}

pub fn norm_pdf(x: f64) -> f64 {
    STD_NORMAL.pdf(x)
}

/// Inverse standard normal CDF, polished with two Newton steps so that
/// round trips through `norm_cdf` hold to ~1e-15 in the central range.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidQuery(format!("quantile probability {p} outside (0, 1)")));
    }
    let mut x = STD_NORMAL.inverse_cdf(p);
    for _ in 0..2 {
        let d = norm_pdf(x);
        if d < 1e-300 {
            break;
        }
        x -= (norm_cdf(x) - p) / d;
    }
    Ok(x)
}
