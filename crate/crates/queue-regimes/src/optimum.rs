//! Socially optimal threshold: gambler's-ruin quantities of the embedded
//! chain, the marginal surplus D_n, Naor's threshold n*, and an independent
//! welfare oracle over threshold policies.

use serde::Serialize;
use thiserror::Error;

use crate::model::Params;

/// Tolerance for tie detection in threshold comparisons.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OptimumError {
    #[error("surplus still nonnegative at the cap n = {cap}; raise the cap")]
    CapTooSmall { cap: u32 },
}

/// Ruin probability and expected absorption rounds of the truncated embedded
/// chain started at n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuinQuantities {
    /// Probability of reaching 0 before returning to n.
    pub theta: f64,
    /// Expected rounds until absorption at 0 or n.
    pub t_rounds: f64,
}

/// Solves a tridiagonal system with the Thomas algorithm.
/// Row i: lower[i]*x[i-1] + diag[i]*x[i] + upper[i]*x[i+1] = rhs[i].
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    debug_assert!(m >= 1);
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..m {
        let denom = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..m - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

/// First-step linear solve on states {0, ..., n}. From the start at n, an
/// arrival re-hits n (absorption, not ruin) and a service moves to n-1, so
///
///   theta_n = q * h(n-1),    T_n = 1 + q * t(n-1),
///
/// where h and t solve the interior recursions
///   h(i) = p h(i+1) + q h(i-1),  h(0) = 1, h(n) = 0,
///   t(i) = 1 + p t(i+1) + q t(i-1),  t(0) = t(n) = 0.
pub fn ruin_quantities(params: &Params, n: u32) -> RuinQuantities {
    assert!(n >= 1);
    let (p, q) = (params.p(), params.q());
    if n == 1 {
        return RuinQuantities {
            theta: q,
            t_rounds: 1.0,
        };
    }
    let m = (n - 1) as usize;
    let lower = vec![-q; m];
    let diag = vec![1.0; m];
    let upper = vec![-p; m];

    let mut rhs_h = vec![0.0; m];
    rhs_h[0] = q; // h(0) = 1 folded into row i = 1
    let h = solve_tridiagonal(&lower, &diag, &upper, &rhs_h);

    let rhs_t = vec![1.0; m];
    let t = solve_tridiagonal(&lower, &diag, &upper, &rhs_t);

    RuinQuantities {
        theta: q * h[m - 1],
        t_rounds: 1.0 + q * t[m - 1],
    }
}

/// Marginal surplus of threshold n over n-1: D_n = r theta_n - c/(lambda+mu) T_n.
pub fn surplus(params: &Params, n: u32) -> f64 {
    let rq = ruin_quantities(params, n);
    params.reward() * rq.theta - params.round_cost() * rq.t_rounds
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub n_star: u32,
    /// Knife-edge flag: |D_{n*}| within tolerance of zero.
    pub tie: bool,
}

/// The socially optimal threshold: the largest n with D_n >= 0, or 0 when
/// even D_1 is negative. D_n is strictly decreasing so a forward scan stops
/// at the first sign change.
pub fn naor_threshold(params: &Params, n_cap: u32) -> Result<Threshold, OptimumError> {
    assert!(n_cap >= 1);
    let mut prev = None;
    for n in 1..=n_cap {
        let d = surplus(params, n);
        if d < 0.0 {
            let n_star = n - 1;
            let tie = match prev {
                Some(d_star) => f64::abs(d_star) <= TIE_EPS,
                None => false,
            };
            return Ok(Threshold { n_star, tie });
        }
        prev = Some(d);
    }
    Err(OptimumError::CapTooSmall { cap: n_cap })
}

/// Naor's individual joining threshold floor(r mu / c): a customer joins iff
/// the position it would wait through still leaves a nonnegative payoff.
pub fn individual_threshold(params: &Params) -> u32 {
    (params.reward() * params.mu() / params.cost()).floor() as u32
}

/// Long-run welfare rate of the admit-up-to-n policy, from the stationary
/// distribution of the birth-death chain truncated at n.
pub fn threshold_welfare(params: &Params, n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let rho = params.lambda() / params.mu();
    // pi_k proportional to rho^k on {0, ..., n}.
    let mut weights = Vec::with_capacity(n as usize + 1);
    let mut w = 1.0;
    for _ in 0..=n {
        weights.push(w);
        w *= rho;
    }
    let total: f64 = weights.iter().sum();
    let pi0 = weights[0] / total;
    let mean_queue: f64 = weights
        .iter()
        .enumerate()
        .map(|(k, w)| k as f64 * w / total)
        .sum();
    params.reward() * params.mu() * (1.0 - pi0) - params.cost() * mean_queue
}

/// Detects knife-edge parameter points where the threshold comparison is a
/// tie within `eps` (|D_{n*}| or |D_{n*+1}| nearly zero).
pub fn knife_edge(params: &Params, n_cap: u32, eps: f64) -> Result<bool, OptimumError> {
    let t = naor_threshold(params, n_cap)?;
    let near = |n: u32| n >= 1 && surplus(params, n).abs() <= eps;
    Ok(near(t.n_star) || near(t.n_star + 1))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurveRow {
    pub n: u32,
    pub theta: f64,
    pub t_rounds: f64,
    pub surplus: f64,
    pub welfare: f64,
}

/// The (n, theta_n, T_n, D_n, W(n)) curve for n = 1..=n_max.
pub fn surplus_curve(params: &Params, n_max: u32) -> Vec<CurveRow> {
    (1..=n_max)
        .map(|n| {
            let rq = ruin_quantities(params, n);
            CurveRow {
                n,
                theta: rq.theta,
                t_rounds: rq.t_rounds,
                surplus: params.reward() * rq.theta - params.round_cost() * rq.t_rounds,
                welfare: threshold_welfare(params, n),
            }
        })
        .collect()
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("n,theta,t_rounds,surplus,welfare\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.12},{:.12},{:.12},{:.12}\n",
            r.n, r.theta, r.t_rounds, r.surplus, r.welfare
        ));
    }
    out
}
