//! Rank-level sets `M_(s)`, derivative-vanishing sets `N_(r)` and the
//! critical set `M_c` of a vectorial conserved quantity, decided with a
//! tolerance-based numerical rank.

use std::fmt;

use crate::differentiate::{jacobian, partial_tensor, JacobianMatrix};
use crate::error::{usage, Error, Result};
use crate::system::{ConservedQuantitySet, StateVector};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Below this the largest singular value is treated as zero.
pub const ZERO_FLOOR: f64 = 1e-300;
/// Decisions whose margin falls under this are reported as borderline.
pub const BORDERLINE_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RankDecision {
    pub s: usize,
    /// Nonincreasing, length `min(k, n)`.
    pub singular_values: Vec<f64>,
    pub rel_tol: f64,
    /// Absolute cut: singular values strictly above it count.
    pub threshold: f64,
    /// `min(σ/threshold)` over kept values and `min(threshold/σ)` over
    /// dropped ones; infinite when there is nothing to compare.
    pub margin: f64,
}

impl RankDecision {
    pub fn is_borderline(&self) -> bool {
        self.margin < BORDERLINE_MARGIN
    }

    /// The `i`-th singular value (1-based) with `σ_0 = ∞` and zeros past
    /// the end.
    fn sigma(&self, i: usize) -> f64 {
        match i {
            0 => f64::INFINITY,
            _ => self.singular_values.get(i - 1).copied().unwrap_or(0.0),
        }
    }

    /// Relative distance from the `M_(s)` decision boundary; `<= 0` inside
    /// (needs `σ_{s+1} <= threshold < σ_s`).
    pub fn residual_for_rank(&self, s: usize) -> f64 {
        (self.sigma(s + 1) / self.threshold - 1.0).max(1.0 - self.sigma(s) / self.threshold)
    }

    /// `σ_k/threshold − 1`: nonpositive iff the rank is below `k`.
    pub fn residual_for_critical(&self, k: usize) -> f64 {
        self.sigma(k) / self.threshold - 1.0
    }
}

fn singular_values(m: &JacobianMatrix) -> Result<Vec<f64>> {
    if let Some(i) = m.as_row_major().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: i,
            context: "matrix entry (row-major) passed to the rank decision".into(),
        });
    }
    let svd = m
        .to_dmatrix()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or(Error::SvdNonConvergence {
            rows: m.rows(),
            cols: m.cols(),
        })?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

fn decide(sv: Vec<f64>, rel_tol: f64, threshold: f64) -> RankDecision {
    let s = sv.iter().filter(|&&v| v > threshold).count();
    let margin = sv.iter().fold(f64::INFINITY, |m, &v| {
        let r = if v > threshold { v / threshold } else { threshold / v };
        m.min(r)
    });
    RankDecision {
        s,
        singular_values: sv,
        rel_tol,
        threshold,
        margin,
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("rank tolerance must be in (0, 1), got {tau}")))
    }
}

/// `s = #{σ_i > τ·σ₁}`; an all-zero matrix has rank 0.
pub fn numerical_rank(m: &JacobianMatrix, tau: f64) -> Result<RankDecision> {
    check_tau(tau)?;
    let sv = singular_values(m)?;
    let s1 = sv.first().copied().unwrap_or(0.0);
    Ok(decide(sv, tau, (tau * s1).max(ZERO_FLOOR)))
}

/// Rank with the threshold `max(τ·σ₁, τ·floor_scale)`, so a matrix that is
/// small in absolute terms counts as zero.
pub fn numerical_rank_scaled(m: &JacobianMatrix, tau: f64, floor_scale: f64) -> Result<RankDecision> {
    check_tau(tau)?;
    let sv = singular_values(m)?;
    let s1 = sv.first().copied().unwrap_or(0.0);
    Ok(decide(sv, tau, (tau * s1).max(tau * floor_scale).max(ZERO_FLOOR)))
}

/// Rank of the Jacobian at `x`. The absolute floor is `τ·max(1, ‖x‖)`, the
/// same scale `member_N` uses.
#[allow(non_snake_case)]
pub fn classify_M(quantity: &ConservedQuantitySet, x: &StateVector, tau: f64) -> Result<RankDecision> {
    let j = jacobian(quantity, x)?;
    numerical_rank_scaled(&j, tau, x.scale())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    /// Rank-level set `M_(s)`.
    M(usize),
    /// Partials of orders `1..=r` vanish.
    N(usize),
    /// Rank below `k`.
    Critical,
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetKind::M(s) => write!(f, "M_({s})"),
            SetKind::N(r) => write!(f, "N_({r})"),
            SetKind::Critical => write!(f, "M_c"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetMembership {
    pub kind: SetKind,
    pub verdict: bool,
    /// Signed distance from the threshold, relative for rank-based kinds
    /// and absolute for `N_(r)`. Inside iff `residual <= 0` (ties on a kept
    /// singular value count as outside `M_(s)`).
    pub residual: f64,
    pub threshold: f64,
    pub rank: Option<RankDecision>,
}

/// Membership of `x` in `M_(s)`.
#[allow(non_snake_case)]
pub fn member_M(quantity: &ConservedQuantitySet, x: &StateVector, s: usize, tau: f64) -> Result<SetMembership> {
    let d = classify_M(quantity, x, tau)?;
    Ok(SetMembership {
        kind: SetKind::M(s),
        verdict: d.s == s,
        residual: d.residual_for_rank(s),
        threshold: d.threshold,
        rank: Some(d),
    })
}

/// Membership in `N_(r)`: every partial of order `1..=r` of every component
/// satisfies `|∂^α F_i(x)| ≤ abs_tol·max(1, ‖x‖)`.
#[allow(non_snake_case)]
pub fn member_N(quantity: &ConservedQuantitySet, x: &StateVector, r: usize, abs_tol: f64) -> Result<SetMembership> {
    if !(abs_tol >= 0.0 && abs_tol.is_finite()) {
        return Err(usage(format!("abs_tol must be nonnegative, got {abs_tol}")));
    }
    let t = partial_tensor(quantity, x, r)?;
    let thr = abs_tol * x.scale();
    let worst = t.max_abs();
    Ok(SetMembership {
        kind: SetKind::N(r),
        verdict: worst <= thr,
        residual: worst - thr,
        threshold: thr,
        rank: None,
    })
}

/// Membership in the critical set: rank below `k`.
pub fn member_critical(quantity: &ConservedQuantitySet, x: &StateVector, tau: f64) -> Result<SetMembership> {
    let d = classify_M(quantity, x, tau)?;
    let k = quantity.k();
    Ok(SetMembership {
        kind: SetKind::Critical,
        verdict: d.s < k,
        residual: d.residual_for_critical(k),
        threshold: d.threshold,
        rank: Some(d),
    })
}
