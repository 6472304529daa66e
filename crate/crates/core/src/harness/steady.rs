//! Steady-state housekeeping lower-semicontinuity verdict.

use serde::Serialize;

use crate::ou::EPS_TAIL;
use crate::stats::richardson_linear;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyRow {
    pub eps: f64,
    pub shk_ss_eps: f64,
    pub shk_ss_eps_se: f64,
    pub shk_ss_bar: f64,
    /// `σ_hk,ssᵉ − σ̄_hk,ss`, possibly from a paired estimator.
    pub gap: f64,
    pub gap_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyVerdict {
    pub rows: Vec<SteadyRow>,
    /// Smallest gap over the ε-tail.
    pub tail_min_gap: f64,
    /// Gap extrapolated linearly to ε = 0 through the two smallest ε.
    pub extrapolated_gap: Option<f64>,
    /// `min(gap + gap_tol + se_mult·SE)` over the ε-tail; pass iff nonnegative.
    pub margin: f64,
    pub pass: bool,
}

/// Rows ordered by decreasing ε. Passes iff every tail gap is at least
/// `−gap_tol − se_mult·SE`.
pub fn steady_state_verdict(rows: Vec<SteadyRow>, gap_tol: f64, se_mult: f64) -> SteadyVerdict {
    let n = rows.len();
    let tail = &rows[n.saturating_sub(EPS_TAIL)..];
    let margin = tail
        .iter()
        .map(|r| r.gap + gap_tol + se_mult * r.gap_se)
        .fold(f64::INFINITY, f64::min);
    let tail_min_gap = tail.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    let extrapolated_gap = (n >= 2).then(|| {
        let (a, b) = (&rows[n - 2], &rows[n - 1]);
        richardson_linear(a.eps, a.gap, b.eps, b.gap)
    });
    SteadyVerdict {
        tail_min_gap,
        extrapolated_gap,
        margin,
        pass: n > 0 && margin >= 0.0,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(eps: f64, gap: f64, se: f64) -> SteadyRow {
        SteadyRow {
            eps,
            shk_ss_eps: gap,
            shk_ss_eps_se: se,
            shk_ss_bar: 0.0,
            gap,
            gap_se: se,
        }
    }

    #[test]
    fn reversible_passes() {
        let v = steady_state_verdict(vec![row(0.2, 0.0, 0.0), row(0.1, 0.0, 0.0)], 1e-3, 3.0);
        assert!(v.pass);
        assert_eq!(v.tail_min_gap, 0.0);
    }

    #[test]
    fn mc_uses_standard_error() {
        let rows = vec![row(0.3, -0.02, 0.01), row(0.1, -0.01, 0.004), row(0.03, 0.0, 0.001)];
        assert!(steady_state_verdict(rows.clone(), 1e-3, 3.0).pass);
        assert!(!steady_state_verdict(rows, 1e-3, 1.0).pass);
    }
}
