//! Endpoint-head post-processing and its training loss.

use crate::error::{Error, Result};
use crate::lane::{add, Point3, SparseLane};

/// Predicted offsets from every preset point to the lane's start and end.
#[derive(Debug, Clone, PartialEq)]
pub struct EpPrediction {
    pub s_hat: Vec<Point3>,
    pub e_hat: Vec<Point3>,
}

impl EpPrediction {
    pub fn new(s_hat: Vec<Point3>, e_hat: Vec<Point3>) -> Result<Self> {
        if s_hat.len() != e_hat.len() {
            return Err(Error::DimensionMismatch {
                expected: s_hat.len(),
                actual: e_hat.len(),
            });
        }
        if !s_hat.iter().chain(&e_hat).flatten().all(|v| v.is_finite()) {
            return Err(Error::config("endpoint prediction contains non-finite values"));
        }
        Ok(Self { s_hat, e_hat })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            s_hat: vec![[0.0; 3]; m],
            e_hat: vec![[0.0; 3]; m],
        }
    }

    pub fn len(&self) -> usize {
        self.s_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_hat.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchStatus {
    Patched,
    /// Fewer than two visible points; the lane was passed through unchanged.
    TooFewValid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchOutcome {
    pub lane: SparseLane,
    pub status: PatchStatus,
}

/// Moves the first visible point by `s_hat` and the last by `e_hat`, on all
/// three axes. Everything else is left untouched.
pub fn ep_patch_inference(pred: &SparseLane, ep: &EpPrediction) -> Result<PatchOutcome> {
    if ep.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            expected: pred.len(),
            actual: ep.len(),
        });
    }
    let span = pred.visible_span().filter(|_| pred.visible_count() >= 2);
    let Some((first, last)) = span else {
        return Ok(PatchOutcome {
            lane: pred.clone(),
            status: PatchStatus::TooFewValid,
        });
    };
    let mut lane = pred.clone();
    lane.set_point(first, add(pred.point(first), ep.s_hat[first]));
    lane.set_point(last, add(pred.point(last), ep.e_hat[last]));
    Ok(PatchOutcome {
        lane: lane.with_endpoints_patched(true),
        status: PatchStatus::Patched,
    })
}

/// Mean over preset points of `|s_hat - s|_1 + |e_hat - e|_1`.
pub fn loss_ep(pred: &EpPrediction, target_s: &[Point3], target_e: &[Point3]) -> Result<f64> {
    let m = pred.len();
    for len in [pred.e_hat.len(), target_s.len(), target_e.len()] {
        if len != m {
            return Err(Error::DimensionMismatch { expected: m, actual: len });
        }
    }
    if m == 0 {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    let l1 = |a: &Point3, b: &Point3| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>();
    let total: f64 = (0..m)
        .map(|j| l1(&pred.s_hat[j], &target_s[j]) + l1(&pred.e_hat[j], &target_e[j]))
        .sum();
    Ok(total / m as f64)
}
