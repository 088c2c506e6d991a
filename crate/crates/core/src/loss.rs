//! Logistic loss on raw margins and its first/second derivatives.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second derivative of the per-instance loss with respect to the margin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradPair {
    pub g: f64,
    pub h: f64,
}

fn check_margin(margin: f64) -> Result<()> {
    if margin.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite margin {margin}")))
    }
}

fn check_label(y: u8) -> Result<()> {
    if y <= 1 {
        Ok(())
    } else {
        Err(Error::InvalidLabel { row: 0, value: f64::from(y) })
    }
}

#[inline]
pub(crate) fn sigmoid_unchecked(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + libm::exp(-margin))
    } else {
        let e = libm::exp(margin);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

pub fn sigmoid(margin: f64) -> Result<f64> {
    check_margin(margin)?;
    Ok(sigmoid_unchecked(margin))
}

#[inline]
pub(crate) fn grad_pair_unchecked(y: u8, margin: f64) -> GradPair {
    let p = sigmoid_unchecked(margin);
    // 1 - p without cancellation; also makes (y, m) and (1 - y, -m) exact mirrors
    let q = sigmoid_unchecked(-margin);
    let g = if y == 1 { -q } else { p };
    GradPair { g, h: p * q }
}

pub fn grad_pair(y: u8, margin: f64) -> Result<GradPair> {
    check_label(y)?;
    check_margin(margin)?;
    Ok(grad_pair_unchecked(y, margin))
}

#[inline]
pub(crate) fn loss_unchecked(y: u8, margin: f64) -> f64 {
    if y == 1 {
        softplus(-margin)
    } else {
        softplus(margin)
    }
}

/// `y ln(1+e^-m) + (1-y) ln(1+e^m)`.
pub fn loss_value(y: u8, margin: f64) -> Result<f64> {
    check_label(y)?;
    check_margin(margin)?;
    Ok(loss_unchecked(y, margin))
}
