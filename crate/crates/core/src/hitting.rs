//! Hitting probabilities of the simple random walk and of the auxiliary
//! walk on offsets × {1, 2, 3}, and the thresholds built from them.
//!
//! Linear solves run on the l1 ball of radius R in ℤ^d, reduced to orbits of
//! the hyperoctahedral group, by Gauss–Seidel sweeps.

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Rates;
use crate::orbits::{Geometry, OrbitSpace};
use crate::rng;
use crate::stats::Estimate;

/// Largest change per sweep at which the iterative solves stop.
pub const SOLVE_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 2_000_000;

/// Two-term large-d expansion 1/(2d) + 1/(2d²) of the return probability.
pub fn kesten(d: usize) -> f64 {
    let d = d as f64;
    1.0 / (2.0 * d) + 1.0 / (2.0 * d * d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SrwMethod {
    /// Fraction of `walks` walks hitting O within `max_steps` steps.
    MonteCarlo { walks: usize, max_steps: u64, seed: u64 },
    /// Harmonic solve on the radius-R ball.
    LinearSolve { radius: usize },
}

/// One hitting probability with its bracket.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HitValue {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    /// Monte Carlo standard error (0 for solves).
    pub std_error: f64,
    pub method: String,
    /// Set for recurrent dimensions and for capped Monte Carlo.
    pub warning: Option<String>,
}

impl HitValue {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Γ̃ over the ball, with boundary value 0 (`lower`), boundary value 1
/// (`upper`), and the point value whose boundary is the asymptotic Green
/// function scaled self-consistently (`value`).
#[derive(Clone, Debug)]
pub struct SrwTable {
    pub space: OrbitSpace,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: Vec<f64>,
}

impl SrwTable {
    pub fn at(&self, offset: &[i64]) -> Option<(f64, f64, f64)> {
        self.space.locate(offset).map(|o| (self.lower[o], self.value[o], self.upper[o]))
    }

    /// Return probability Γ̃(e₁).
    pub fn return_probability(&self) -> f64 {
        self.value[self.space.e1()]
    }
}

/// Leading term of the simple random walk Green function,
/// (d/2)Γ(d/2 − 1)π^{−d/2}|y|^{2−d} (Euclidean |y|), for d ≥ 3.
pub fn green_asymptotic(d: usize, euclid: f64) -> f64 {
    let h = d as f64 / 2.0;
    h * statrs::function::gamma::gamma(h - 1.0) * std::f64::consts::PI.powf(-h) * euclid.powf(2.0 - d as f64)
}

/// Solves u = (average over neighbours of u) off O, with u(O) = `at_origin`
/// and `outside` giving values beyond the ball.
fn harmonic(space: &OrbitSpace, at_origin: f64, outside: impl Fn(&[u16]) -> f64) -> Vec<f64> {
    let n = space.len();
    let deg = 2.0 * space.dim() as f64;
    let fixed: Vec<f64> = (0..n)
        .map(|o| space.outside(o).iter().map(|(k, c)| *c as f64 * outside(k)).sum::<f64>() / deg)
        .collect();
    let mut u = vec![0.0; n];
    u[space.origin()] = at_origin;
    let sweep = |u: &mut [f64], omega: f64| -> f64 {
        let mut change: f64 = 0.0;
        for o in 1..n {
            let mut acc = fixed[o];
            for st in space.steps(o) {
                if let Some(y) = st.to {
                    acc += st.count as f64 * u[y] / deg;
                }
            }
            let new = u[o] + omega * (acc - u[o]);
            change = change.max((new - u[o]).abs());
            u[o] = new;
        }
        change
    };
    relax(&mut u, sweep);
    u
}

/// Runs `sweep(u, ω)` to convergence. A few plain Gauss–Seidel sweeps
/// estimate the contraction rate μ, which sets ω = 2/(1 + √(1 − μ)).
fn relax(u: &mut [f64], mut sweep: impl FnMut(&mut [f64], f64) -> f64) {
    let mut prev = sweep(u, 1.0);
    let mut rate: f64 = 0.0;
    for _ in 0..20 {
        let c = sweep(u, 1.0);
        if c < SOLVE_TOL {
            return;
        }
        if prev > 0.0 {
            rate = c / prev;
        }
        prev = c;
    }
    let omega = (2.0 / (1.0 + (1.0 - rate.min(0.9999)).sqrt())).clamp(1.0, 1.95);
    let mut last = f64::INFINITY;
    for k in 0..MAX_SWEEPS {
        let c = sweep(u, omega);
        if c < SOLVE_TOL {
            return;
        }
        // over-relaxation gone wrong: fall back to plain sweeps
        if k > 1000 && c > last {
            while sweep(u, 1.0) >= SOLVE_TOL {}
            return;
        }
        if k % 1000 == 0 {
            last = c;
        }
    }
}

/// Γ̃ over the radius-R ball.
pub fn srw_table(d: usize, radius: usize) -> Result<SrwTable> {
    if d < 3 {
        return Err(Error::param("d", "the solve needs a transient walk (d ≥ 3)"));
    }
    let space = OrbitSpace::new(d, radius, Geometry::Ball)?;
    let lower = harmonic(&space, 1.0, |_| 0.0);
    let upper = harmonic(&space, 1.0, |_| 1.0);
    // Γ̃(y) = G(y)(1 − F) off O, with F = Γ̃(e₁); split by linearity and
    // solve the scalar consistency condition for F
    let green = |k: &[u16]| green_asymptotic(d, k.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt());
    let u1 = harmonic(&space, 0.0, green);
    let e1 = space.e1();
    let f = (lower[e1] + u1[e1]) / (1.0 + u1[e1]);
    let value = lower.iter().zip(&u1).map(|(a, b)| a + (1.0 - f) * b).collect();
    Ok(SrwTable {
        space,
        lower,
        upper,
        value,
    })
}

/// Γ̃(x), the probability that the simple random walk from `x` visits O.
pub fn srw_hit_prob(d: usize, x: &[i64], method: SrwMethod) -> Result<HitValue> {
    if d == 0 || x.len() != d {
        return Err(Error::param("x", "offset length must equal d"));
    }
    if x.iter().all(|&c| c == 0) {
        return Ok(HitValue {
            value: 1.0,
            lower: 1.0,
            upper: 1.0,
            std_error: 0.0,
            method: "trivial".into(),
            warning: None,
        });
    }
    if d <= 2 {
        return Ok(HitValue {
            value: 1.0,
            lower: 1.0,
            upper: 1.0,
            std_error: 0.0,
            method: "recurrent".into(),
            warning: Some(format!(
                "walk is recurrent in d = {d}; value is 1 and truncated estimates are misleading"
            )),
        });
    }
    match method {
        SrwMethod::LinearSolve { radius } => {
            let norm: u64 = x.iter().map(|c| c.unsigned_abs()).sum();
            if norm as usize > radius {
                return Err(Error::param("R", "offset lies outside the ball"));
            }
            let t = srw_table(d, radius)?;
            let (lower, value, upper) = t.at(x).expect("offset inside ball");
            Ok(HitValue {
                value,
                lower,
                upper,
                std_error: 0.0,
                method: format!("linear_solve(R={radius})"),
                warning: None,
            })
        }
        SrwMethod::MonteCarlo { walks, max_steps, seed } => {
            if walks == 0 {
                return Err(Error::param("walks", "must be at least 1"));
            }
            let hits = (0..walks as u64)
                .into_par_iter()
                .filter(|&w| srw_walk(x, max_steps, &mut rng::stream(seed, w)))
                .count();
            let e = Estimate::proportion(hits, walks, seed);
            Ok(HitValue {
                value: e.point,
                lower: e.point,
                upper: 1.0,
                std_error: e.std_error,
                method: format!("monte_carlo(max_steps={max_steps})"),
                warning: Some(format!("capped at {max_steps} steps: estimates a lower bound")),
            })
        }
    }
}

fn srw_walk(start: &[i64], max_steps: u64, rng: &mut rng::Rng) -> bool {
    let d = start.len() as u64;
    let mut x = start.to_vec();
    let mut norm: i64 = x.iter().map(|c| c.abs()).sum();
    for _ in 0..max_steps {
        let r = rng.next_u64() % (2 * d);
        let axis = (r / 2) as usize;
        let before = x[axis].abs();
        x[axis] += if r.is_multiple_of(2) { 1 } else { -1 };
        norm += x[axis].abs() - before;
        if norm == 0 {
            return true;
        }
    }
    false
}

/// Which form of the recursion for the auxiliary walk to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ThetaVariant {
    /// Promotion weight 1/(2+δ+γ); the transition table of the walk.
    LambdaFree,
    /// Weights with λ added to both numerator and denominator, as displayed
    /// in the source recursion; kept for comparison.
    WithLambda,
}

/// Γ(x, i) over the ball with value 0 beyond it; (O,3) is not part of the
/// walk and holds NaN.
#[derive(Clone, Debug)]
pub struct ThetaTable {
    pub space: OrbitSpace,
    pub variant: ThetaVariant,
    values: Vec<f64>,
}

impl ThetaTable {
    pub fn get(&self, orbit: usize, component: usize) -> f64 {
        self.values[3 * orbit + component - 1]
    }

    pub fn at(&self, offset: &[i64], component: usize) -> Option<f64> {
        self.space.locate(offset).map(|o| self.get(o, component))
    }
}

/// (stay-to-component-3 weight, move weight) of a (x,2) step.
fn theta_weights(rates: &Rates, variant: ThetaVariant) -> (f64, f64) {
    let extra = match variant {
        ThetaVariant::LambdaFree => 0.0,
        ThetaVariant::WithLambda => rates.lambda,
    };
    let denom = 2.0 + rates.delta + rates.gamma + extra;
    (1.0 / denom, (1.0 + rates.delta + rates.gamma + extra) / denom)
}

/// Γ(x, i) by linear solve on the radius-R ball. `rates.lambda` only
/// matters for [`ThetaVariant::WithLambda`].
pub fn theta_hit_prob(d: usize, rates: &Rates, radius: usize, variant: ThetaVariant) -> Result<ThetaTable> {
    rates.validate()?;
    let space = OrbitSpace::new(d, radius, Geometry::Ball)?;
    let n = space.len();
    let deg = 2.0 * d as f64;
    let (stay, move_w) = theta_weights(rates, variant);
    let origin = space.origin();
    let e1 = space.e1();
    let mut v = vec![0.0; 3 * n];
    v[0] = 1.0;
    v[2] = f64::NAN;
    let sweep = |v: &mut [f64], omega: f64| -> f64 {
        let mut change: f64 = 0.0;
        for o in 0..n {
            if o == origin {
                continue;
            }
            let avg = |v: &[f64], comp: usize| -> f64 {
                space
                    .steps(o)
                    .iter()
                    .filter_map(|st| st.to.map(|y| st.count as f64 * v[3 * y + comp - 1]))
                    .sum::<f64>()
                    / deg
            };
            let g3 = avg(v, 2);
            let g2 = stay * g3 + move_w * avg(v, 1);
            for (comp, target) in [(3, g3), (2, g2), (1, g2)] {
                let i = 3 * o + comp - 1;
                let new = v[i] + omega * (target - v[i]);
                change = change.max((new - v[i]).abs());
                v[i] = new;
            }
        }
        let new = v[3 * e1];
        change = change.max((new - v[1]).abs());
        v[1] = new;
        change
    };
    relax(&mut v, sweep);
    Ok(ThetaTable { space, variant, values: v })
}

/// Largest violation of the recursion over rows whose neighbours all lie
/// in the ball.
pub fn theta_recursion_residual(table: &ThetaTable, rates: &Rates) -> f64 {
    let space = &table.space;
    let deg = 2.0 * space.dim() as f64;
    let (stay, move_w) = theta_weights(rates, table.variant);
    let mut worst: f64 = (table.get(0, 1) - 1.0).abs();
    worst = worst.max((table.get(0, 2) - table.get(space.e1(), 1)).abs());
    for o in 1..space.len() {
        if !space.is_interior(o) {
            continue;
        }
        let avg = |comp: usize| -> f64 {
            space
                .steps(o)
                .iter()
                .map(|st| st.count as f64 * table.get(st.to.unwrap(), comp))
                .sum::<f64>()
                / deg
        };
        worst = worst
            .max((table.get(o, 1) - table.get(o, 2)).abs())
            .max((table.get(o, 2) - stay * table.get(o, 3) - move_w * avg(1)).abs())
            .max((table.get(o, 3) - avg(2)).abs());
    }
    worst
}

/// Monte Carlo estimate of Γ(x, i) with walks capped at `max_steps`.
pub fn theta_hit_mc(
    x: &[i64],
    component: usize,
    rates: &Rates,
    variant: ThetaVariant,
    walks: usize,
    max_steps: u64,
    seed: u64,
) -> Result<Estimate> {
    if !(1..=3).contains(&component) || x.is_empty() {
        return Err(Error::param("component", "must be 1, 2 or 3"));
    }
    if x.iter().all(|&c| c == 0) && component == 3 {
        return Err(Error::param("component", "(O,3) is not a state of the walk"));
    }
    let (stay, _) = theta_weights(rates, variant);
    let hits = (0..walks as u64)
        .into_par_iter()
        .filter(|&w| theta_walk(x, component, stay, max_steps, &mut rng::stream(seed, w)))
        .count();
    Ok(Estimate::proportion(hits, walks, seed))
}

fn theta_walk(start: &[i64], component: usize, stay: f64, max_steps: u64, rng: &mut rng::Rng) -> bool {
    let d = start.len() as u64;
    let mut x = start.to_vec();
    let mut norm: i64 = x.iter().map(|c| c.abs()).sum();
    let mut comp = component;
    let step = |x: &mut Vec<i64>, norm: &mut i64, rng: &mut rng::Rng| {
        let r = rng.next_u64() % (2 * d);
        let axis = (r / 2) as usize;
        let before = x[axis].abs();
        x[axis] += if r.is_multiple_of(2) { 1 } else { -1 };
        *norm += x[axis].abs() - before;
    };
    for _ in 0..max_steps {
        match (norm == 0, comp) {
            (true, 1) => return true,
            // (O,2) → (e₁,1); any unit vector is equivalent
            (true, _) => {
                step(&mut x, &mut norm, rng);
                comp = 1;
            }
            (false, 1) => comp = 2,
            (false, 2) => {
                if rng::unit_f64(rng.next_u64()) < stay {
                    comp = 3;
                } else {
                    step(&mut x, &mut norm, rng);
                    comp = 1;
                }
            }
            (false, _) => {
                step(&mut x, &mut norm, rng);
                comp = 2;
            }
        }
    }
    norm == 0 && comp == 1
}

/// h = (γ[1 − 2Γ(O,2)] − 2Γ(e₁,2) − b)/(γ + 2 + b) with
/// b = (1+δ+γ)/(2dλ); `rates.lambda` is the per-neighbour rate.
pub fn h_lambda(gamma_o2: f64, gamma_e12: f64, rates: &Rates, d: usize) -> f64 {
    let b = rates.b(d);
    (rates.gamma * (1.0 - 2.0 * gamma_o2) - 2.0 * gamma_e12 - b) / (rates.gamma + 2.0 + b)
}

/// λ̃ = (1+δ+γ)/(2d[γ − (2γ+2)Γ̃(e₁)]), as a per-neighbour rate.
pub fn lambda_tilde(d: usize, rates: &Rates, srw_return: f64) -> Result<f64> {
    let denom = rates.gamma - (2.0 * rates.gamma + 2.0) * srw_return;
    if !(denom > 0.0) {
        return Err(Error::DimensionTooSmall {
            d,
            what: "γ − (2γ+2)Γ̃(e₁)",
            value: denom,
        });
    }
    Ok(rates.sum() / (2.0 * d as f64 * denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates() -> Rates {
        Rates {
            lambda: 3.0 / 20.0,
            delta: 1.0,
            gamma: 2.0,
        }
    }

    #[test]
    fn recurrent_dimensions_flag() {
        let v = srw_hit_prob(1, &[1], SrwMethod::LinearSolve { radius: 10 }).unwrap();
        assert_eq!(v.value, 1.0);
        assert!(v.warning.is_some());
    }

    #[test]
    fn srw_bracket_orders() {
        let t = srw_table(4, 12).unwrap();
        for o in 0..t.space.len() {
            assert!(t.lower[o] <= t.value[o] + 1e-12 && t.value[o] <= t.upper[o] + 1e-12);
        }
        assert_eq!(t.value[0], 1.0);
    }

    #[test]
    fn srw_d3_return_probability() {
        let t = srw_table(3, 40).unwrap();
        assert!((t.return_probability() - 0.340_537).abs() < 1e-3, "{}", t.return_probability());
    }

    #[test]
    fn theta_origin_values() {
        let t = theta_hit_prob(5, &rates(), 5, ThetaVariant::LambdaFree).unwrap();
        assert_eq!(t.get(0, 1), 1.0);
        assert!((t.get(0, 2) - t.get(t.space.e1(), 1)).abs() < 1e-13);
        assert!(theta_recursion_residual(&t, &rates()) < 1e-10);
    }

    #[test]
    fn theta_below_srw_on_same_ball() {
        let t = theta_hit_prob(4, &rates(), 8, ThetaVariant::LambdaFree).unwrap();
        let s = srw_table(4, 8).unwrap();
        for o in 1..t.space.len() {
            assert!(t.get(o, 1) <= s.lower[o] + 1e-12);
        }
    }

    #[test]
    fn h_limits() {
        let r = Rates { lambda: 1e12, ..rates() };
        assert!((h_lambda(0.0, 0.0, &r, 10) - 0.5).abs() < 1e-9);
        assert!(h_lambda(0.05, 0.05, &rates(), 10) <= 1.0 - 2.0 * 0.05);
    }

    #[test]
    fn lambda_tilde_values() {
        let r = rates();
        assert!((lambda_tilde(10, &r, 0.0).unwrap() - 4.0 / 40.0).abs() < 1e-15);
        assert!((lambda_tilde(10, &r, kesten(10)).unwrap() - 4.0 / 33.4).abs() < 1e-12);
        assert!(matches!(lambda_tilde(3, &r, 0.3405), Err(Error::DimensionTooSmall { .. })));
    }

    #[test]
    fn green_leading_term_d3() {
        assert!((green_asymptotic(3, 2.0) - 3.0 / (2.0 * std::f64::consts::PI * 2.0)).abs() < 1e-12);
    }
}
