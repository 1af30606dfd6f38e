//! The auxiliary linear system and its moment equations.
//!
//! Each site carries a pair (ζ, g) of nonnegative reals. A site flips to
//! (0, 0) at rate 1, to (ζ, 0) at rate δ, to (ζ + g/γ, 0) at rate γ, and to
//! (ζ, g + b·ζ(y)) at rate λ for each neighbour y, with b = (1+δ+γ)/(2dλ).
//! Reading ζ > 0 as state 2 and ζ = 0 < g as state 1 recovers the
//! two-stage process started from all sites fully infected.
//!
//! Second moments F(x,1) = E[ζ(O)ζ(x)], F(x,2) = E[ζ(O)g(x)] and
//! F(x,3) = E[g(O)g(x)] solve dF/dt = G F, with G built here on orbits of
//! offsets (see [`crate::orbits`]).

use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dopri5, OutputType, System};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hitting::ThetaTable;
use crate::lattice::{Rates, TorusSpec};
use crate::markov::Counts;
use crate::orbits::{Geometry, OrbitSpace};
use crate::rng;
use crate::stats::Estimate;

/// Dense per-site state of the linear system on a torus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearField {
    pub zeta: Vec<f64>,
    pub g: Vec<f64>,
}

impl LinearField {
    /// Every site at (1, 1).
    pub fn ones(sites: usize) -> Self {
        LinearField {
            zeta: vec![1.0; sites],
            g: vec![1.0; sites],
        }
    }

    /// Two-stage states read off the field.
    pub fn project(&self) -> Vec<u8> {
        self.zeta
            .iter()
            .zip(&self.g)
            .map(|(&z, &g)| {
                if z > 0.0 {
                    2
                } else if g > 0.0 {
                    1
                } else {
                    0
                }
            })
            .collect()
    }

    /// Applies one flip at site `x`. `b` is the infection increment factor.
    pub fn apply(&mut self, x: usize, flip: Flip, rates: &Rates, b: f64) {
        match flip {
            Flip::Reset => {
                self.zeta[x] = 0.0;
                self.g[x] = 0.0;
            }
            Flip::ClearSemi => self.g[x] = 0.0,
            Flip::Promote => {
                self.zeta[x] += self.g[x] / rates.gamma;
                self.g[x] = 0.0;
            }
            Flip::Infect { from } => self.g[x] += b * self.zeta[from],
        }
    }

    pub fn projected_counts(&self) -> Counts {
        let states = self.project();
        Counts {
            fully: states.iter().filter(|&&s| s == 2).count(),
            semi: states.iter().filter(|&&s| s == 1).count(),
        }
    }
}

/// The four flip types of a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    /// (ζ, g) → (0, 0), rate 1.
    Reset,
    /// (ζ, g) → (ζ, 0), rate δ.
    ClearSemi,
    /// (ζ, g) → (ζ + g/γ, 0), rate γ.
    Promote,
    /// (ζ, g) → (ζ, g + b·ζ(from)), rate λ per neighbour.
    Infect { from: usize },
}

/// Simulates the linear system from all-(1,1) and returns the field at each
/// of the sorted `times`. Replica `replica` uses stream `replica` of `seed`.
pub fn simulate_linear_field(torus: &TorusSpec, rates: &Rates, times: &[f64], seed: u64, replica: u64) -> Result<Vec<LinearField>> {
    rates.validate()?;
    check_times(times)?;
    let mut rng = rng::stream(seed, replica);
    Ok(run_field(torus, rates, times, &mut rng))
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::param("horizon", "need at least one time"));
    }
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("horizon", "times must be finite, nonnegative and sorted"));
    }
    Ok(())
}

fn run_field(torus: &TorusSpec, rates: &Rates, times: &[f64], rng: &mut rng::Rng) -> Vec<LinearField> {
    let n = torus.num_sites();
    let degree = torus.degree();
    let b = rates.b(torus.dim());
    // every site carries the same total rate, so sites are picked uniformly
    let per_site = rates.sum() + degree as f64 * rates.lambda;
    let total = per_site * n as f64;
    let mut field = LinearField::ones(n);
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut next = 0;
    loop {
        t += rng::exp_time(rng, total);
        while next < times.len() && times[next] < t {
            out.push(field.clone());
            next += 1;
        }
        if next == times.len() {
            return out;
        }
        let x = (rng::unit_f64(rng.next_u64()) * n as f64) as usize;
        let u = rng::unit_f64(rng.next_u64()) * per_site;
        let flip = if u < 1.0 {
            Flip::Reset
        } else if u < 1.0 + rates.delta {
            Flip::ClearSemi
        } else if u < rates.sum() {
            Flip::Promote
        } else {
            let dir = (((u - rates.sum()) / rates.lambda) as usize).min(degree - 1);
            Flip::Infect {
                from: torus.neighbor(crate::Site(x as u32), dir).index(),
            }
        };
        field.apply(x, flip, rates, b);
    }
}

fn replica_fields(torus: &TorusSpec, rates: &Rates, times: &[f64], replicas: usize, seed: u64) -> Result<Vec<Vec<LinearField>>> {
    rates.validate()?;
    check_times(times)?;
    if replicas == 0 {
        return Err(Error::param("replicas", "must be at least 1"));
    }
    Ok((0..replicas as u64)
        .into_par_iter()
        .map(|r| run_field(torus, rates, times, &mut rng::stream(seed, r)))
        .collect())
}

/// Estimates of E ζ_t(O) and E g_t(O) at each time. Each replica
/// contributes its spatial average, which has the same mean by translation
/// invariance.
pub fn first_moment_estimates(
    torus: &TorusSpec,
    rates: &Rates,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<(Estimate, Estimate)>> {
    let runs = replica_fields(torus, rates, times, replicas, seed)?;
    let n = torus.num_sites() as f64;
    Ok((0..times.len())
        .map(|k| {
            let z: Vec<f64> = runs.iter().map(|r| r[k].zeta.iter().sum::<f64>() / n).collect();
            let g: Vec<f64> = runs.iter().map(|r| r[k].g.iter().sum::<f64>() / n).collect();
            (Estimate::mean(&z, seed), Estimate::mean(&g, seed))
        })
        .collect())
}

/// Estimate of E[ζ_t(O)²], spatially averaged per replica.
pub fn second_moment_estimate(torus: &TorusSpec, rates: &Rates, t: f64, replicas: usize, seed: u64) -> Result<Estimate> {
    let runs = replica_fields(torus, rates, &[t], replicas, seed)?;
    let n = torus.num_sites() as f64;
    let v: Vec<f64> = runs.iter().map(|r| r[0].zeta.iter().map(|z| z * z).sum::<f64>() / n).collect();
    Ok(Estimate::mean(&v, seed))
}

/// Counts of the projected two-stage configuration at time `t`, one per
/// replica.
pub fn projected_counts(torus: &TorusSpec, rates: &Rates, t: f64, replicas: usize, seed: u64) -> Result<Vec<Counts>> {
    let runs = replica_fields(torus, rates, &[t], replicas, seed)?;
    Ok(runs.iter().map(|r| r[0].projected_counts()).collect())
}

/// Means (E ζ_t, E g_t) from the first-moment equations
/// dζ/dt = −ζ + g, dg/dt = (1+δ+γ)(ζ − g), solved exactly.
pub fn first_moments_ode(rates: &Rates, start: (f64, f64), t: f64) -> (f64, f64) {
    let s = rates.sum();
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, s, -s]);
    let v = (a * t).exp() * DVector::from_vec(vec![start.0, start.1]);
    (v[0], v[1])
}

/// Slot of (orbit, component) in a moment vector; components are 1, 2, 3.
pub fn slot(orbit: usize, component: usize) -> usize {
    debug_assert!((1..=3).contains(&component));
    3 * orbit + component - 1
}

/// Sparse operator with one list of (column, coefficient) per row.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    rows: Vec<Vec<(usize, f64)>>,
    /// False for ball rows that need a neighbour outside the ball.
    complete: Vec<bool>,
}

impl SparseOperator {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.complete[i]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, c)| c * v[j]).sum();
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                m[(i, j)] += c;
            }
        }
        m
    }
}

/// The second-moment operator on `space`. `rates.lambda` is the
/// per-neighbour rate entering b = (1+δ+γ)/(2dλ).
pub fn build_g(space: &OrbitSpace, rates: &Rates) -> Result<SparseOperator> {
    rates.validate()?;
    if space.radius() < 2 {
        return Err(Error::param("R", "must be at least 2"));
    }
    let d = space.dim() as f64;
    let s = rates.sum();
    let mut rows = vec![Vec::new(); 3 * space.len()];
    let mut complete = vec![true; 3 * space.len()];
    let origin = space.origin();
    for x in 0..space.len() {
        // Σ_{y∼x} F(y, j) with weight w, as row entries
        let neighbours = |j: usize, w: f64, row: &mut Vec<(usize, f64)>| -> bool {
            let mut all_inside = true;
            for step in space.steps(x) {
                match step.to {
                    Some(y) => row.push((slot(y, j), w * step.count as f64)),
                    None => all_inside = false,
                }
            }
            all_inside
        };
        let (r1, r2, r3) = (slot(x, 1), slot(x, 2), slot(x, 3));
        if x == origin {
            rows[r1] = vec![(r1, -1.0), (r2, 2.0), (r3, 1.0 / rates.gamma)];
            let mut row = vec![(r2, -s)];
            complete[r2] = neighbours(1, s / (2.0 * d), &mut row);
            rows[r2] = row;
            let mut row = vec![(r3, -s), (r1, s * s / (2.0 * d * rates.lambda))];
            complete[r3] = neighbours(2, s / d, &mut row);
            rows[r3] = row;
        } else {
            rows[r1] = vec![(r1, -2.0), (r2, 2.0)];
            let mut row = vec![(r2, -(2.0 + rates.delta + rates.gamma)), (r3, 1.0)];
            complete[r2] = neighbours(1, s / (2.0 * d), &mut row);
            rows[r2] = row;
            let mut row = vec![(r3, -2.0 * s)];
            complete[r3] = neighbours(2, s / d, &mut row);
            rows[r3] = row;
        }
    }
    Ok(SparseOperator { rows, complete })
}

/// Values indexed by orbit × {1, 2, 3}.
#[derive(Clone, Debug)]
pub struct MomentVector {
    pub space: OrbitSpace,
    pub values: Vec<f64>,
}

impl MomentVector {
    pub fn ones(space: &OrbitSpace) -> Self {
        MomentVector {
            space: space.clone(),
            values: vec![1.0; 3 * space.len()],
        }
    }

    pub fn get(&self, orbit: usize, component: usize) -> f64 {
        self.values[slot(orbit, component)]
    }

    /// Value at an arbitrary lattice offset.
    pub fn at(&self, offset: &[i64], component: usize) -> Option<f64> {
        self.space.locate(offset).map(|o| self.get(o, component))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// (representative offset, component, value) rows.
    pub fn rows(&self) -> impl Iterator<Item = (String, usize, f64)> + '_ {
        (0..self.space.len()).flat_map(move |o| {
            let rep = self.space.rep(o).iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
            (1..=3).map(move |i| (rep.clone(), i, self.get(o, i)))
        })
    }
}

/// Result of integrating dF/dt = G F.
#[derive(Clone, Debug)]
pub struct MomentSolution {
    pub moments: MomentVector,
    /// (t, F_t(O,1)) at every accepted step.
    pub origin_path: Vec<(f64, f64)>,
    pub accepted_steps: u32,
    pub rejected_steps: u32,
}

impl MomentSolution {
    pub fn sup_origin(&self) -> f64 {
        self.origin_path.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Flow<'a>(&'a SparseOperator);

impl System<f64, DVector<f64>> for Flow<'_> {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        self.0.apply_into(y.as_slice(), dy.as_mut_slice());
    }
}

/// Absolute tolerance of [`integrate_moments`].
pub const MOMENT_ATOL: f64 = 1e-8;

/// Integrates dF/dt = G F from `start` to time `t` with an embedded
/// Dormand–Prince 5(4) pair.
pub fn integrate_moments(g: &SparseOperator, start: &MomentVector, t: f64) -> Result<MomentSolution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be finite and nonnegative"));
    }
    if g.len() != start.values.len() {
        return Err(Error::param("F0", "length does not match the operator"));
    }
    let origin = slot(start.space.origin(), 1);
    if t == 0.0 {
        return Ok(MomentSolution {
            moments: start.clone(),
            origin_path: vec![(0.0, start.values[origin])],
            accepted_steps: 0,
            rejected_steps: 0,
        });
    }
    let y0 = DVector::from_column_slice(&start.values);
    let mut solver = Dopri5::from_param(
        Flow(g),
        0.0,
        t,
        t,
        y0,
        MOMENT_ATOL,
        MOMENT_ATOL,
        0.9,
        0.04,
        0.2,
        10.0,
        t,
        0.0,
        200_000,
        1000,
        OutputType::Sparse,
    );
    let stats = solver.integrate().map_err(|e| {
        let time = match e {
            ode_solvers::dop_shared::IntegrationError::MaxNumStepReached { x, .. }
            | ode_solvers::dop_shared::IntegrationError::StepSizeUnderflow { x }
            | ode_solvers::dop_shared::IntegrationError::StiffnessDetected { x } => x,
        };
        Error::Step { time, step: f64::NAN }
    })?;
    let path: Vec<(f64, f64)> = solver.x_out().iter().zip(solver.y_out()).map(|(&x, y)| (x, y[origin])).collect();
    let last = solver.y_out().last().expect("solver records the end point");
    Ok(MomentSolution {
        moments: MomentVector {
            space: start.space.clone(),
            values: last.as_slice().to_vec(),
        },
        origin_path: path,
        accepted_steps: stats.accepted_steps,
        rejected_steps: stats.rejected_steps,
    })
}

/// e^{tG} F₀ by dense exponentiation; for small operators only.
pub fn exponentiate_moments(g: &SparseOperator, start: &MomentVector, t: f64) -> Result<MomentVector> {
    const LIMIT: usize = 1500;
    if g.len() > LIMIT {
        return Err(Error::Size {
            states: g.len(),
            limit: LIMIT,
        });
    }
    let v = (g.dense() * t).exp() * DVector::from_column_slice(&start.values);
    Ok(MomentVector {
        space: start.space.clone(),
        values: v.as_slice().to_vec(),
    })
}

/// The candidate eigenvector: Γ(x,i) + h off (O,3), and γ[1 − 2Γ(e₁,1) − h]
/// at (O,3).
pub fn build_k(gamma: &ThetaTable, h: f64, rates: &Rates) -> Result<MomentVector> {
    let space = &gamma.space;
    let mut values = vec![0.0; 3 * space.len()];
    for o in 0..space.len() {
        for i in 1..=3 {
            values[slot(o, i)] = gamma.get(o, i) + h;
        }
    }
    values[slot(space.origin(), 3)] = rates.gamma * (1.0 - 2.0 * gamma.get(space.e1(), 1) - h);
    let k = MomentVector {
        space: space.clone(),
        values,
    };
    let min = k.min();
    if !(min > 0.0) {
        return Err(Error::Domain(format!(
            "candidate eigenvector has minimum entry {min:.6e} (λ at or below threshold, or truncation too small)"
        )));
    }
    Ok(k)
}

/// ‖G K‖∞ split into interior rows (offset norm < R − 1) and the three
/// origin rows.
#[derive(Clone, Debug, Serialize)]
pub struct Residual {
    pub interior: f64,
    pub origin: [f64; 3],
    pub rows_checked: usize,
}

pub fn eigen_residual(g: &SparseOperator, k: &MomentVector) -> Residual {
    let gk = g.apply(&k.values);
    let space = &k.space;
    let mut interior: f64 = 0.0;
    let mut rows_checked = 0;
    for o in 0..space.len() {
        if space.norm(o) + 1 < space.radius() {
            for i in 1..=3 {
                let r = slot(o, i);
                debug_assert!(g.is_complete(r));
                interior = interior.max(gk[r].abs());
                rows_checked += 1;
            }
        }
    }
    let o = space.origin();
    Residual {
        interior,
        origin: [gk[slot(o, 1)].abs(), gk[slot(o, 2)].abs(), gk[slot(o, 3)].abs()],
        rows_checked,
    }
}

/// Orbit space matching a torus of side 2R+1.
pub fn torus_space(d: usize, radius: usize) -> Result<OrbitSpace> {
    OrbitSpace::new(d, radius, Geometry::Torus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hitting::{theta_hit_prob, ThetaVariant};

    fn rates() -> Rates {
        Rates {
            lambda: 1.0,
            delta: 1.0,
            gamma: 2.0,
        }
    }

    #[test]
    fn g_on_ones() {
        let space = torus_space(3, 3).unwrap();
        let r = rates();
        let g = build_g(&space, &r).unwrap();
        let out = g.apply(&MomentVector::ones(&space).values);
        let s = r.sum();
        for (idx, v) in out.iter().enumerate() {
            let expect = if idx == slot(0, 1) {
                1.0 + 1.0 / r.gamma
            } else if idx == slot(0, 3) {
                s * (1.0 + r.b(3))
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-12, "row {idx}: {v} vs {expect}");
        }
    }

    #[test]
    fn off_diagonal_entries_are_nonnegative() {
        let space = torus_space(2, 3).unwrap();
        let g = build_g(&space, &rates()).unwrap();
        for i in 0..g.len() {
            for &(j, c) in g.row(i) {
                if i != j {
                    assert!(c >= 0.0);
                }
            }
        }
    }

    #[test]
    fn origin_special_entry() {
        let space = torus_space(2, 2).unwrap();
        let r = rates();
        let g = build_g(&space, &r).unwrap();
        let entry: f64 = g.row(slot(0, 3)).iter().filter(|e| e.0 == slot(0, 1)).map(|e| e.1).sum();
        assert!((entry - r.sum().powi(2) / (4.0 * r.lambda)).abs() < 1e-15);
    }

    #[test]
    fn integration_matches_exponential() {
        let space = torus_space(2, 2).unwrap();
        let g = build_g(&space, &rates()).unwrap();
        let f0 = MomentVector::ones(&space);
        let a = integrate_moments(&g, &f0, 1.0).unwrap();
        let b = exponentiate_moments(&g, &f0, 1.0).unwrap();
        for (x, y) in a.moments.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6 * y.abs().max(1.0), "{x} vs {y}");
        }
        assert!(a.moments.min() > 0.0);
        assert_eq!(integrate_moments(&g, &f0, 0.0).unwrap().moments.values, f0.values);
    }

    #[test]
    fn first_moment_ode_is_stationary_at_ones() {
        let (z, g) = first_moments_ode(&rates(), (1.0, 1.0), 3.0);
        assert!((z - 1.0).abs() < 1e-12 && (g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn promotion_with_empty_g_keeps_zeta() {
        let mut f = LinearField {
            zeta: vec![0.7],
            g: vec![0.0],
        };
        f.apply(0, Flip::Promote, &rates(), 1.0);
        assert_eq!(f.zeta[0], 0.7);
        f.g[0] = 1.0;
        f.apply(0, Flip::Promote, &rates(), 1.0);
        assert_eq!((f.zeta[0], f.g[0]), (1.2, 0.0));
    }

    #[test]
    fn simulation_is_deterministic() {
        let torus = TorusSpec::new(2, 3).unwrap();
        let a = simulate_linear_field(&torus, &rates(), &[0.5, 1.0], 3, 1).unwrap();
        let b = simulate_linear_field(&torus, &rates(), &[0.5, 1.0], 3, 1).unwrap();
        assert_eq!(a, b);
        assert!(simulate_linear_field(&torus, &rates(), &[1.0, 0.5], 3, 1).is_err());
    }

    #[test]
    fn projection_reads_states() {
        let f = LinearField {
            zeta: vec![0.0, 0.0, 2.0],
            g: vec![0.0, 0.5, 0.0],
        };
        assert_eq!(f.project(), vec![0, 1, 2]);
    }

    #[test]
    fn k_eigen_identity_small() {
        let r = Rates {
            lambda: 3.0 / 20.0,
            delta: 1.0,
            gamma: 2.0,
        };
        let table = theta_hit_prob(10, &r, 4, ThetaVariant::LambdaFree).unwrap();
        let h = crate::hitting::h_lambda(table.get(0, 2), table.get(table.space.e1(), 2), &r, 10);
        assert!(h > 0.0);
        let k = build_k(&table, h, &r).unwrap();
        let g = build_g(&table.space, &r).unwrap();
        let res = eigen_residual(&g, &k);
        assert!(res.interior < 1e-9, "{res:?}");
        assert!(res.origin.iter().all(|v| *v < 1e-10), "{res:?}");
    }

    #[test]
    fn build_k_rejects_nonpositive() {
        let r = rates();
        let table = theta_hit_prob(3, &r, 3, ThetaVariant::LambdaFree).unwrap();
        assert!(matches!(build_k(&table, -0.5, &r), Err(Error::Domain(_))));
    }
}
