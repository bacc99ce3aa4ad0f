//! Maps from the unit hypercube to parameter space (inverse-CDF transforms).
//!
//! Nested sampling needs a proper prior. A user-supplied map is trusted to
//! be a monotone inverse CDF; nothing here checks that it is.

use std::fmt;
use std::sync::Arc;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub type UnitMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DimTransform {
    Uniform {
        a: f64,
        b: f64,
    },
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    /// A monotone non-decreasing map of (0, 1), labelled for fingerprints.
    Custom {
        label: String,
        map: UnitMap,
    },
}

impl fmt::Debug for DimTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimTransform::Uniform { a, b } => write!(f, "uniform({a}, {b})"),
            DimTransform::Gaussian { mu, sigma } => write!(f, "gaussian({mu}, {sigma})"),
            DimTransform::Custom { label, .. } => write!(f, "custom({label})"),
        }
    }
}

impl DimTransform {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InputDomain(format!(
                "uniform prior needs a < b, got ({a}, {b})"
            )));
        }
        Ok(DimTransform::Uniform { a, b })
    }

    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::InputDomain(format!(
                "gaussian prior needs sigma > 0, got {sigma}"
            )));
        }
        Ok(DimTransform::Gaussian { mu, sigma })
    }

    pub fn apply(&self, u: f64) -> Result<f64> {
        match self {
            DimTransform::Uniform { a, b } => transform_uniform(u, *a, *b),
            DimTransform::Gaussian { mu, sigma } => transform_gaussian(u, *mu, *sigma),
            DimTransform::Custom { map, .. } => {
                if !(0.0..=1.0).contains(&u) {
                    return Err(Error::InputDomain(format!("unit coordinate {u} outside [0, 1]")));
                }
                Ok(map(u))
            }
        }
    }
}

/// Per-dimension prior transform.
#[derive(Clone, Debug)]
pub struct PriorTransform {
    dims: Vec<DimTransform>,
}

impl PriorTransform {
    pub fn new(dims: Vec<DimTransform>) -> Self {
        PriorTransform { dims }
    }

    /// The same uniform interval in every one of `d` dimensions.
    pub fn uniform_cube(a: f64, b: f64, d: usize) -> Result<Self> {
        let t = DimTransform::uniform(a, b)?;
        Ok(PriorTransform { dims: vec![t; d] })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[DimTransform] {
        &self.dims
    }

    pub fn transform(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dims.len() {
            return Err(Error::InputDomain(format!(
                "expected {} unit coordinates, got {}",
                self.dims.len(),
                u.len()
            )));
        }
        self.dims.iter().zip(u).map(|(t, &x)| t.apply(x)).collect()
    }

    pub fn fingerprint(&self) -> String {
        let parts: Vec<String> = self.dims.iter().map(|d| format!("{d:?}")).collect();
        parts.join(",")
    }
}

pub fn transform_uniform(u: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InputDomain(format!("unit coordinate {u} outside [0, 1]")));
    }
    if !(a < b) {
        return Err(Error::InputDomain(format!(
            "uniform prior needs a < b, got ({a}, {b})"
        )));
    }
    Ok(a + u * (b - a))
}

/// `mu + Φ⁻¹(u)·sigma`. The endpoints map to infinite tails and are rejected.
pub fn transform_gaussian(u: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InputDomain(format!(
            "gaussian transform needs 0 < u < 1, got {u}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InputDomain(format!(
            "gaussian prior needs sigma > 0, got {sigma}"
        )));
    }
    Ok(mu + normal_quantile(u) * sigma)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile for `0 < p < 1`.
///
/// Acklam's rational approximation (relative error about 1e-9) followed by
/// one Halley step against the erfc-based CDF. In the upper tail the
/// refinement works with `1 - p`, which is exact in floating point there.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

#[allow(clippy::excessive_precision)]
fn lower_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // Halley refinement; p <= 0.5 so x <= 0 and the CDF is computed in its
    // accurate lower tail.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}
