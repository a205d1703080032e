//! Proximal operators and constraint-set projections.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::tensor::Frame;
use crate::vecops;

/// Supported-region norm at or below which a filter cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Elementwise `sign(x) * max(0, |x| - gamma)`.
pub fn soft_threshold(x: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "soft-threshold level must be finite and non-negative, got {gamma}"
        )));
    }
    ensure_finite(x, "soft-threshold input")?;
    let mut out = x.to_vec();
    soft_threshold_in_place(&mut out, gamma);
    Ok(out)
}

pub(crate) fn soft_threshold_in_place(x: &mut [f64], gamma: f64) {
    for v in x.iter_mut() {
        let a = v.abs() - gamma;
        *v = if a > 0.0 { a.copysign(*v) } else { 0.0 };
    }
}

/// Proximal operator of `tau * ||.||_2`: `max(0, 1 - tau / ||r||) * r`.
pub fn block_l2_shrink(r: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "shrinkage level must be finite and non-negative, got {tau}"
        )));
    }
    ensure_finite(r, "shrinkage input")?;
    let mut out = r.to_vec();
    block_l2_shrink_in_place(&mut out, tau);
    Ok(out)
}

pub(crate) fn block_l2_shrink_in_place(r: &mut [f64], tau: f64) {
    let norm = vecops::norm(r);
    if norm <= tau {
        r.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let scale = 1.0 - tau / norm;
        r.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Filters that vanish outside a small support at the frame origin and have
/// unit l2 norm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSetPN {
    support: Frame,
    frame: Frame,
}

impl ConstraintSetPN {
    pub fn new(support: Frame, frame: Frame) -> Result<Self> {
        if !support.fits_within(&frame) {
            return Err(Error::Shape(format!(
                "support {support} does not fit inside frame {frame}"
            )));
        }
        Ok(ConstraintSetPN { support, frame })
    }

    pub fn support(&self) -> &Frame {
        &self.support
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    fn in_support(&self, index: usize) -> bool {
        let (r, c) = (index / self.frame.cols(), index % self.frame.cols());
        r < self.support.rows() && c < self.support.cols()
    }

    /// Membership up to `tol`: zero energy outside the support and unit norm.
    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        if z.len() != self.frame.len() {
            return false;
        }
        let outside = z
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.in_support(*i))
            .all(|(_, v)| v.abs() <= tol);
        outside && (vecops::norm(z) - 1.0).abs() <= tol
    }

    /// Zero the padding region, then scale to unit norm, in place.
    pub fn project_in_place(&self, z: &mut [f64]) -> Result<()> {
        if z.len() != self.frame.len() {
            return Err(Error::Shape(format!(
                "filter of {} samples against frame {}",
                z.len(),
                self.frame
            )));
        }
        ensure_finite(z, "projection input")?;
        let cols = self.frame.cols();
        let (sr, sc) = (self.support.rows(), self.support.cols());
        let mut energy = 0.0;
        for (i, v) in z.iter_mut().enumerate() {
            if i / cols < sr && i % cols < sc {
                energy += *v * *v;
            } else {
                *v = 0.0;
            }
        }
        let norm = energy.sqrt();
        if norm <= DEGENERATE_NORM {
            return Err(Error::Degenerate(format!(
                "supported part has norm {norm:e}; cannot normalize"
            )));
        }
        let inv = 1.0 / norm;
        z.iter_mut().for_each(|v| *v *= inv);
        Ok(())
    }
}

/// Projection onto the unit-norm, support-limited filter set.
pub fn project_cpn(z: &[f64], set: &ConstraintSetPN) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    set.project_in_place(&mut out)?;
    Ok(out)
}

/// R-tuples whose blocks are all equal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsensusSet {
    replicas: usize,
}

impl ConsensusSet {
    pub fn new(replicas: usize) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::InvalidParameter("consensus set needs R >= 1".into()));
        }
        Ok(ConsensusSet { replicas })
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn contains(&self, blocks: &[Vec<f64>], tol: f64) -> bool {
        blocks.len() == self.replicas
            && blocks.iter().all(|b| {
                b.len() == blocks[0].len()
                    && b.iter().zip(&blocks[0]).all(|(x, y)| (x - y).abs() <= tol)
            })
    }
}

/// Replace every block by the arithmetic mean of all blocks.
pub fn project_consensus(blocks: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Shape("consensus projection of zero blocks".into()))?;
    if let Some(bad) = blocks.iter().find(|b| b.len() != first.len()) {
        return Err(Error::Shape(format!(
            "block of length {} against block of length {}",
            bad.len(),
            first.len()
        )));
    }
    let mean = vecops::mean_of(blocks.iter().map(Vec::as_slice), first.len());
    Ok(vec![mean; blocks.len()])
}
