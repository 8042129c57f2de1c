//! Closed-form log densities, their partial derivatives, and the log/exp
//! transform used to put positive parameters on an unconstrained scale.
//!
//! The exponential distribution is parameterized by its *scale* `eta`
//! (mean = `eta`), not by a rate.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Normal { loc: f64, scale: f64 },
    Cauchy { loc: f64, scale: f64 },
    /// Exponential with mean `scale`.
    Exponential { scale: f64 },
}

/// Partial derivatives of a log density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPdfGrad {
    pub dx: f64,
    pub dloc: f64,
    pub dscale: f64,
}

impl Distribution {
    pub fn normal(loc: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Distribution::Normal { loc, scale })
    }

    pub fn cauchy(loc: f64, scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Distribution::Cauchy { loc, scale })
    }

    pub fn exponential(scale: f64) -> Result<Self> {
        check_scale(scale)?;
        Ok(Distribution::Exponential { scale })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Normal { scale, .. }
            | Distribution::Cauchy { scale, .. }
            | Distribution::Exponential { scale } => check_scale(scale),
        }
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            Distribution::Normal { loc, scale } => normal_lpdf(x, loc, scale),
            Distribution::Cauchy { loc, scale } => cauchy_lpdf(x, loc, scale),
            Distribution::Exponential { scale } => exponential_lpdf(x, scale),
        })
    }

    /// Derivatives w.r.t. the point, the location and the scale. The
    /// exponential has no location; `dloc` is zero for it.
    pub fn log_pdf_grad(&self, x: f64) -> Result<LogPdfGrad> {
        self.validate()?;
        Ok(match *self {
            Distribution::Normal { loc, scale } => normal_lpdf_grad(x, loc, scale),
            Distribution::Cauchy { loc, scale } => cauchy_lpdf_grad(x, loc, scale),
            Distribution::Exponential { scale } => exponential_lpdf_grad(x, scale),
        })
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("scale must be positive, got {scale}")))
    }
}

// Unchecked kernels for the model hot loops. Callers guarantee scale > 0.

#[inline]
pub fn normal_lpdf(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    -scale.ln() - LN_SQRT_2PI - 0.5 * z * z
}

#[inline]
pub fn normal_lpdf_grad(x: f64, loc: f64, scale: f64) -> LogPdfGrad {
    let d = x - loc;
    let s2 = scale * scale;
    LogPdfGrad {
        dx: -d / s2,
        dloc: d / s2,
        dscale: -1.0 / scale + d * d / (s2 * scale),
    }
}

#[inline]
pub fn cauchy_lpdf(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    -(PI * scale).ln() - z.mul_add(z, 1.0).ln()
}

#[inline]
pub fn cauchy_lpdf_grad(x: f64, loc: f64, scale: f64) -> LogPdfGrad {
    let z = (x - loc) / scale;
    let denom = z.mul_add(z, 1.0);
    let dloc = 2.0 * z / (scale * denom);
    LogPdfGrad {
        dx: -dloc,
        dloc,
        dscale: (-1.0 + 2.0 * z * z / denom) / scale,
    }
}

/// `-inf` for negative `x`.
#[inline]
pub fn exponential_lpdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        f64::NEG_INFINITY
    } else {
        -scale.ln() - x / scale
    }
}

#[inline]
pub fn exponential_lpdf_grad(x: f64, scale: f64) -> LogPdfGrad {
    if x < 0.0 {
        return LogPdfGrad {
            dx: 0.0,
            dloc: 0.0,
            dscale: 0.0,
        };
    }
    LogPdfGrad {
        dx: -1.0 / scale,
        dloc: 0.0,
        dscale: -1.0 / scale + x / (scale * scale),
    }
}

/// Maps a positive value to the real line.
pub fn unconstrain(positive: f64) -> Result<f64> {
    if positive > 0.0 && positive.is_finite() {
        Ok(positive.ln())
    } else {
        Err(Error::domain(format!(
            "cannot unconstrain non-positive value {positive}"
        )))
    }
}

/// Inverse of [`unconstrain`]: returns `(exp(z), log|d exp(z)/dz|)`.
#[inline]
pub fn constrain(z: f64) -> (f64, f64) {
    (z.exp(), z)
}
