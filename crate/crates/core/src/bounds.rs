//! Closed-form bounds on the critical infection rate and a Monte Carlo
//! bracket of it.
//!
//! All rates here are per-neighbour. The scaled gap of a rate λ is
//! d(2dλ − (1+δ+γ)/γ).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hitting::{kesten, lambda_tilde, srw_table};
use crate::lattice::{Configuration, Rates, TorusSpec};
use crate::markov::{estimate_survival, ProcessKind, Stop};
use crate::rng;
use crate::stats::Estimate;

/// First-jump probabilities from ({O}, {e₁}): semi site dies, fully site
/// dies, promotion, infection of another neighbour. They sum to 1.
pub fn first_jump_probabilities(lambda: f64, rates: &Rates, d: usize) -> [f64; 4] {
    let other = (2 * d - 1) as f64 * lambda;
    let denom = other + 2.0 + rates.delta + rates.gamma;
    [(1.0 + rates.delta) / denom, 1.0 / denom, rates.gamma / denom, other / denom]
}

/// The four-term function whose crossing of 1 gives the lower bound.
pub fn m_function(lambda: f64, rates: &Rates, d: usize) -> f64 {
    let [semi_dies, fully_dies, promote, infect] = first_jump_probabilities(lambda, rates, d);
    let two_d = 2.0 * d as f64 * lambda;
    let ratio = two_d / (two_d + 1.0);
    promote * (4 * d - 1) as f64 * lambda / (two_d + 1.0)
        + fully_dies * rates.gamma / rates.sum() * ratio
        + semi_dies * ratio
        + infect * (two_d + 2.0) / (two_d + 1.0)
}

/// (1+δ+γ)/(2dγ) · (2+δ+γ)/(1 + [1 − (1+1/γ)/(2d)](1+δ+γ)).
pub fn lower_bound_337(d: usize, rates: &Rates) -> Result<f64> {
    let s = rates.sum();
    let two_d = 2.0 * d as f64;
    let denom = 1.0 + (1.0 - (1.0 + 1.0 / rates.gamma) / two_d) * s;
    if !(denom > 0.0) || d == 0 {
        return Err(Error::DimensionTooSmall {
            d,
            what: "1 + [1 − (1+1/γ)/(2d)](1+δ+γ)",
            value: denom,
        });
    }
    Ok(s / (two_d * rates.gamma) * (2.0 + rates.delta + rates.gamma) / denom)
}

/// Root of M(λ) = 1 by bisection on (0, hi], where `hi` must have M ≥ 1.
pub fn m_threshold(rates: &Rates, d: usize) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while m_function(hi, rates, d) < 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m_function(mid, rates, d) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// (f₁, f₂) = (½(1+1/γ)(1+δ+γ)²/(γ(2+δ+γ)), ((1+δ+γ)/γ)(1+1/γ)).
pub fn f_constants(rates: &Rates) -> (f64, f64) {
    let s = rates.sum();
    let g = rates.gamma;
    let f1 = 0.5 * (1.0 + 1.0 / g) * s * s / (g * (2.0 + rates.delta + g));
    let f2 = (s / g) * (1.0 + 1.0 / g);
    (f1, f2)
}

/// d(2dλ − (1+δ+γ)/γ).
pub fn scaled_gap(d: usize, rates: &Rates, lambda: f64) -> f64 {
    let d = d as f64;
    d * (2.0 * d * lambda - rates.sum() / rates.gamma)
}

/// λ̃ with the two-term expansion standing in for Γ̃(e₁).
pub fn upper_bound_kesten(d: usize, rates: &Rates) -> Result<f64> {
    lambda_tilde(d, rates, kesten(d))
}

/// λ̃ with Γ̃(e₁) from the ball solve of radius `radius`.
pub fn upper_bound_solved(d: usize, rates: &Rates, radius: usize) -> Result<f64> {
    let t = srw_table(d, radius)?;
    lambda_tilde(d, rates, t.return_probability())
}

/// Settings of the Monte Carlo bracket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BracketConfig {
    /// Survival fraction separating "dies" from "survives".
    pub threshold: f64,
    pub horizon: f64,
    /// Reaching this many infected sites counts as survival.
    pub cap: Option<usize>,
    pub replicas: usize,
    pub seed: u64,
    /// Largest total number of runs (grid points × replicas).
    pub max_runs: usize,
}

impl Default for BracketConfig {
    fn default() -> Self {
        BracketConfig {
            threshold: 0.02,
            horizon: 20.0,
            cap: Some(1000),
            replicas: 400,
            seed: 0,
            max_runs: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketPoint {
    pub lambda: f64,
    pub survival: Estimate,
    pub censored: usize,
}

/// Adjacent grid points where the survival fraction crosses the threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McBracket {
    pub lo: f64,
    pub hi: f64,
    /// No crossing inside the grid: `lo`/`hi` are the grid ends.
    pub degenerate: bool,
    pub points: Vec<BracketPoint>,
    pub config: BracketConfig,
}

impl McBracket {
    /// Grid step at the bracket (0 for a single point).
    pub fn step(&self) -> f64 {
        self.points.windows(2).map(|w| w[1].lambda - w[0].lambda).fold(0.0, f64::max)
    }
}

/// Survival from one fully-infected site at each λ of a sorted grid.
pub fn bracket_critical(torus: &TorusSpec, rates: &Rates, grid: &[f64], cfg: BracketConfig) -> Result<McBracket> {
    if grid.is_empty() {
        return Err(Error::param("grid", "empty λ grid"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::param("grid", "must be sorted, distinct and nonnegative"));
    }
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::param("threshold", "must lie in (0, 1)"));
    }
    let runs = grid.len().saturating_mul(cfg.replicas);
    if runs > cfg.max_runs {
        return Err(Error::BudgetExceeded(format!("{runs} runs requested, budget {}", cfg.max_runs)));
    }
    let start = Configuration::from_sets([torus.origin()], [])?;
    let stop = Stop {
        horizon: cfg.horizon,
        cap: cfg.cap,
    };
    let mut points = Vec::with_capacity(grid.len());
    for (k, &lambda) in grid.iter().enumerate() {
        let r = rates.with_lambda(lambda);
        let survival = estimate_survival(
            ProcessKind::TwoStage,
            torus,
            r,
            &start,
            stop,
            cfg.replicas,
            rng::derive(cfg.seed, k as u64),
        )?;
        points.push(BracketPoint {
            lambda,
            survival: survival.estimate,
            censored: survival.censored,
        });
    }
    let above = points.iter().position(|p| p.survival.point > cfg.threshold);
    let (lo, hi, degenerate) = match above {
        Some(0) => (grid[0], grid[0], true),
        Some(i) => (grid[i - 1], grid[i], false),
        None => (grid[grid.len() - 1], grid[grid.len() - 1], true),
    };
    Ok(McBracket {
        lo,
        hi,
        degenerate,
        points,
        config: cfg,
    })
}

/// All closed-form quantities for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub d: usize,
    pub delta: f64,
    pub gamma: f64,
    pub lower_337: Option<f64>,
    pub m_threshold: f64,
    pub upper_kesten: Option<f64>,
    pub upper_solved: Option<f64>,
    pub f1: f64,
    pub f2: f64,
    pub gap_lower: Option<f64>,
    pub gap_upper_kesten: Option<f64>,
    pub mc_bracket: Option<McBracket>,
    /// Why a bound is missing, if one is.
    pub notes: Vec<String>,
}

/// Closed forms at dimension `d`; `solve_radius` adds λ̃ from a ball solve.
pub fn bounds_report(d: usize, rates: &Rates, solve_radius: Option<usize>) -> BoundsReport {
    let mut notes = Vec::new();
    let mut keep = |r: Result<f64>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    let lower = keep(lower_bound_337(d, rates));
    let upper_k = keep(upper_bound_kesten(d, rates));
    let upper_s = solve_radius.and_then(|r| keep(upper_bound_solved(d, rates, r)));
    let (f1, f2) = f_constants(rates);
    BoundsReport {
        d,
        delta: rates.delta,
        gamma: rates.gamma,
        lower_337: lower,
        m_threshold: m_threshold(rates, d),
        upper_kesten: upper_k,
        upper_solved: upper_s,
        f1,
        f2,
        gap_lower: lower.map(|l| scaled_gap(d, rates, l)),
        gap_upper_kesten: upper_k.map(|u| scaled_gap(d, rates, u)),
        mc_bracket: None,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates() -> Rates {
        Rates {
            lambda: 1.0,
            delta: 1.0,
            gamma: 2.0,
        }
    }

    #[test]
    fn lower_bound_value() {
        assert!((lower_bound_337(10, &rates()).unwrap() - 0.1 * 5.0 / 4.7).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_needs_large_d() {
        let r = Rates {
            lambda: 1.0,
            delta: 0.1,
            gamma: 0.05,
        };
        assert!(matches!(lower_bound_337(1, &r), Err(Error::DimensionTooSmall { .. })));
    }

    #[test]
    fn first_jumps_sum_to_one() {
        for lambda in [0.01, 0.3, 7.0] {
            let p = first_jump_probabilities(lambda, &rates(), 6);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn m_crosses_at_the_lower_bound() {
        let lb = lower_bound_337(10, &rates()).unwrap();
        assert!(m_function(lb - 1e-6, &rates(), 10) < 1.0);
        assert!(m_function(lb + 1e-6, &rates(), 10) >= 1.0);
        assert!((m_threshold(&rates(), 10) - lb).abs() < 1e-9);
        assert!(m_function(1e-9, &rates(), 10) < 1.0);
    }

    #[test]
    fn f_values() {
        let (f1, f2) = f_constants(&rates());
        assert!((f1 - 1.2).abs() < 1e-14);
        assert!((f2 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn empty_grid_and_budget() {
        let torus = TorusSpec::new(1, 3).unwrap();
        assert!(bracket_critical(&torus, &rates(), &[], BracketConfig::default()).is_err());
        let cfg = BracketConfig {
            max_runs: 10,
            ..BracketConfig::default()
        };
        assert!(matches!(
            bracket_critical(&torus, &rates(), &[0.5, 1.0], cfg),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn zero_grid_is_degenerate() {
        let torus = TorusSpec::new(1, 5).unwrap();
        let cfg = BracketConfig {
            replicas: 50,
            horizon: 50.0,
            ..BracketConfig::default()
        };
        let b = bracket_critical(&torus, &rates(), &[0.0], cfg).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.points[0].survival.point, 0.0);
    }
}
