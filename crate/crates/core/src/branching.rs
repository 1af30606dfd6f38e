//! Two-type branching process dominating the on-off process.
//!
//! Type-2 individuals die at rate 1, turn into type 1 at rate δ and give birth
//! to a type-1 child at rate λ. Type-1 individuals die at rate 1 and turn into
//! type 2 at rate γ. State `(zeta, g)` counts type-2 and type-1 individuals.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Rates;
use crate::markov::Outcome;
use crate::rng::{self, Rng};
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchingState {
    /// Type-2 count.
    pub zeta: u64,
    /// Type-1 count.
    pub g: u64,
}

impl BranchingState {
    pub fn new(zeta: u64, g: u64) -> Self {
        BranchingState { zeta, g }
    }

    pub fn total(&self) -> u64 {
        self.zeta + self.g
    }

    pub fn is_extinct(&self) -> bool {
        self.total() == 0
    }
}

/// Mean number of type-2 children of a type-2 individual, λγ/(1+δ+γ).
pub fn mean_offspring(rates: &Rates) -> f64 {
    rates.lambda * rates.gamma / rates.sum()
}

/// Probability of never dying out from `n` type-2 and `m` type-1
/// individuals. Zero at or below criticality.
pub fn survival_closed_form(n: u64, m: u64, rates: &Rates) -> f64 {
    let (p10, p01) = single_survival(rates);
    1.0 - (1.0 - p10).powf(n as f64) * (1.0 - p01).powf(m as f64)
}

/// (π̂(1,0), π̂(0,1)).
pub fn single_survival(rates: &Rates) -> (f64, f64) {
    let s = rates.sum();
    let lg = rates.lambda * rates.gamma;
    if lg <= s {
        return (0.0, 0.0);
    }
    (1.0 - s / lg, (lg - s) / (rates.lambda * (rates.gamma + 1.0)))
}

/// Cap and horizon for one run. Reaching `cap` total individuals counts as
/// survival.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchingStop {
    pub cap: Option<u64>,
    pub horizon: Option<f64>,
}

impl BranchingStop {
    pub fn cap(cap: u64) -> Self {
        BranchingStop {
            cap: Some(cap),
            horizon: None,
        }
    }
}

/// One run of the branching process.
///
/// Without a horizon only the embedded jump chain is simulated: extinction
/// and cap-hitting do not depend on holding times.
pub fn simulate_branching(initial: BranchingState, rates: &Rates, stop: BranchingStop, rng: &mut Rng) -> Result<Outcome> {
    match stop {
        BranchingStop { cap: None, horizon: None } => {
            return Err(Error::param("cap", "need a cap or a horizon"));
        }
        BranchingStop { cap: Some(c), .. } if c <= initial.total() && !initial.is_extinct() => {
            return Err(Error::param(
                "cap",
                format!("cap {c} must exceed initial population {}", initial.total()),
            ));
        }
        BranchingStop { horizon: Some(h), .. } if !(h > 0.0) => {
            return Err(Error::param("horizon", "must be positive"));
        }
        _ => {}
    }
    Ok(run(initial, rates, stop, rng))
}

fn run(initial: BranchingState, rates: &Rates, stop: BranchingStop, rng: &mut Rng) -> Outcome {
    let cap = stop.cap.map_or(f64::INFINITY, |c| c as f64);
    let (mut z, mut g) = (initial.zeta as f64, initial.g as f64);
    let per_z = 1.0 + rates.delta + rates.lambda;
    let per_g = 1.0 + rates.gamma;
    let z_down = 1.0 + rates.delta;
    let mut t = 0.0;
    loop {
        if z + g == 0.0 {
            return Outcome::Extinct(t);
        }
        if z + g >= cap {
            return Outcome::ReachedCap(t);
        }
        let rz = z * per_z;
        let total = rz + g * per_g;
        if let Some(h) = stop.horizon {
            t += rng::exp_time(rng, total);
            if t > h {
                return Outcome::Censored;
            }
        }
        // same draw and comparisons as the lane kernel
        let v = rng::unit_f64(rng.next_u64()) * total;
        let (dz, dg) = jump(v, z, g, rz, z_down);
        z += dz;
        g += dg;
    }
}

/// Population change for a jump selected by `v` ∈ [0, total rate).
/// Order of the rate slices: type-2 death, demotion, birth, type-1 death,
/// promotion.
#[inline(always)]
fn jump(v: f64, z: f64, g: f64, rz: f64, z_down: f64) -> (f64, f64) {
    let dz = if v < z * z_down {
        -1.0
    } else if v < rz + g {
        0.0
    } else {
        1.0
    };
    let dg = if v < z {
        0.0
    } else if v < rz {
        1.0
    } else {
        -1.0
    };
    (dz, dg)
}

/// Fraction of `replicas` runs that survive (reach the cap or outlive the
/// horizon). Replica `r` uses stream `r` of `seed`.
pub fn estimate_branching_survival(
    initial: BranchingState,
    rates: &Rates,
    stop: BranchingStop,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    if replicas == 0 {
        return Err(Error::param("replicas", "must be at least 1"));
    }
    // validate once
    simulate_branching(initial, rates, stop, &mut rng::stream(seed, u64::MAX))?;
    let alive = match stop {
        BranchingStop {
            cap: Some(cap),
            horizon: None,
        } => {
            const BLOCK: u64 = 512;
            let n = replicas as u64;
            (0..n.div_ceil(BLOCK))
                .into_par_iter()
                .map(|b| lanes::count_survivors(initial, rates, cap, seed, b * BLOCK..((b + 1) * BLOCK).min(n)))
                .sum()
        }
        _ => (0..replicas as u64)
            .into_par_iter()
            .filter(|&r| run(initial, rates, stop, &mut rng::stream(seed, r)).survived())
            .count(),
    };
    Ok(Estimate::proportion(alive, replicas, seed))
}

/// Cap-only runs stepped eight at a time in lockstep, one xoshiro256++
/// generator per lane. Each replica keeps its own stream, so the count does
/// not depend on which lane ran it and every replica matches the scalar
/// path draw for draw.
mod lanes {
    use super::*;
    use std::ops::Range;

    const L: usize = 8;
    const BURST: usize = 16;

    struct Batch {
        s: [[u64; L]; 4],
        z: [f64; L],
        g: [f64; L],
    }

    pub(super) fn count_survivors(initial: BranchingState, rates: &Rates, cap: u64, seed: u64, ids: Range<u64>) -> usize {
        #[cfg(target_arch = "x86_64")]
        {
            if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512dq") {
                // SAFETY: the required features were detected at runtime.
                return unsafe { count_avx512(initial, rates, cap, seed, ids) };
            }
            if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                // SAFETY: as above.
                return unsafe { count_avx2(initial, rates, cap, seed, ids) };
            }
        }
        count_generic(initial, rates, cap, seed, ids)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx512dq,avx512vl,avx2,fma")]
    unsafe fn count_avx512(initial: BranchingState, rates: &Rates, cap: u64, seed: u64, ids: Range<u64>) -> usize {
        count_generic(initial, rates, cap, seed, ids)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn count_avx2(initial: BranchingState, rates: &Rates, cap: u64, seed: u64, ids: Range<u64>) -> usize {
        count_generic(initial, rates, cap, seed, ids)
    }

    #[inline(always)]
    fn count_generic(initial: BranchingState, rates: &Rates, cap: u64, seed: u64, mut ids: Range<u64>) -> usize {
        let (z0, g0) = (initial.zeta as f64, initial.g as f64);
        let capf = cap as f64;
        let per_z = 1.0 + rates.delta + rates.lambda;
        let per_g = 1.0 + rates.gamma;
        let z_down = 1.0 + rates.delta;
        let mut b = Batch {
            s: [[0; L]; 4],
            z: [0.0; L],
            g: [0.0; L],
        };
        // lanes with z < 0 are idle
        let mut live = 0;
        for l in 0..L {
            b.z[l] = -1.0;
            if let Some(r) = ids.next() {
                load(&mut b, l, seed, r, z0, g0);
                live += 1;
            }
        }
        let mut survivors = 0;
        while live > 0 {
            for _ in 0..BURST {
                for l in 0..L {
                    let (s0, s1, s2, s3) = (b.s[0][l], b.s[1][l], b.s[2][l], b.s[3][l]);
                    let out = s0.wrapping_add(s3).rotate_left(23).wrapping_add(s0);
                    let t = s1 << 17;
                    let s2 = s2 ^ s0;
                    let s3 = s3 ^ s1;
                    let s1 = s1 ^ s2;
                    let s0 = s0 ^ s3;
                    let (zl, gl) = (b.z[l], b.g[l]);
                    let n = zl + gl;
                    let running = zl >= 0.0 && n > 0.0 && n < capf;
                    // absorbed lanes keep their generator state too, so a
                    // replica's stream is consumed only by its own jumps
                    b.s[0][l] = if running { s0 } else { b.s[0][l] };
                    b.s[1][l] = if running { s1 } else { b.s[1][l] };
                    b.s[2][l] = if running { s2 ^ t } else { b.s[2][l] };
                    b.s[3][l] = if running { s3.rotate_left(45) } else { b.s[3][l] };
                    let rz = zl * per_z;
                    let v = rng::unit_f64(out) * (rz + gl * per_g);
                    let (dz, dg) = jump(v, zl, gl, rz, z_down);
                    b.z[l] = if running { zl + dz } else { zl };
                    b.g[l] = if running { gl + dg } else { gl };
                }
            }
            for l in 0..L {
                let n = b.z[l] + b.g[l];
                if b.z[l] >= 0.0 && (n == 0.0 || n >= capf) {
                    survivors += (n > 0.0) as usize;
                    match ids.next() {
                        Some(r) => load(&mut b, l, seed, r, z0, g0),
                        None => {
                            b.z[l] = -1.0;
                            live -= 1;
                        }
                    }
                }
            }
        }
        survivors
    }

    fn load(b: &mut Batch, l: usize, seed: u64, r: u64, z0: f64, g0: f64) {
        let st = rng::stream_state(seed, r);
        for (lane, word) in b.s.iter_mut().zip(st) {
            lane[l] = word;
        }
        b.z[l] = z0;
        b.g[l] = g0;
    }
}

/// Two-sided bound on the survival probability from the chain restricted to
/// total population ≤ K.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncatedBracket {
    /// Level K valued by a certified lower bound on survival.
    pub lower: f64,
    /// Level K treated as survival.
    pub upper: f64,
    pub cap: u64,
}

impl TruncatedBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }
}

/// Budget on the number of states (K+1)(K+2)/2 of the truncated chain.
pub const TRUNCATION_STATE_LIMIT: usize = 5_000_000;

/// Bracketing solutions of the truncated chain for every state of total
/// population below K.
#[derive(Clone, Debug)]
pub struct TruncatedTable {
    pub cap: u64,
    upper: Vec<Vec<f64>>,
    lower: Vec<Vec<f64>>,
    /// `(a, b)` with extinction probability ≤ aᶻ bᵍ from every state.
    pub certificate: (f64, f64),
}

impl TruncatedTable {
    pub fn bracket(&self, state: BranchingState) -> Result<TruncatedBracket> {
        let s = state.total() as usize;
        if s > self.cap as usize {
            return Err(Error::param("K", format!("state {state:?} above cap {}", self.cap)));
        }
        Ok(TruncatedBracket {
            lower: self.lower[s][state.zeta as usize],
            upper: self.upper[s][state.zeta as usize],
            cap: self.cap,
        })
    }
}

/// Solves the absorption problem of the chain restricted to total
/// population ≤ `cap`.
///
/// The upper bound values level K as survival. The lower bound values a
/// state `(z, g)` on level K by 1 − aᶻbᵍ, where `aᶻbᵍ` is a supermartingale
/// (checked from the rates), hence dominates the extinction probability.
/// Both are solved by line Gauss–Seidel: within each total population level
/// the promotion and demotion moves form a tridiagonal system, solved
/// exactly, while births and deaths couple adjacent levels.
pub fn truncated_survival_table(rates: &Rates, cap: u64) -> Result<TruncatedTable> {
    rates.validate()?;
    if cap < 2 {
        return Err(Error::param("K", "cap must be at least 2"));
    }
    let k = cap as usize;
    let states = (k + 1) * (k + 2) / 2;
    if states > TRUNCATION_STATE_LIMIT {
        return Err(Error::Size {
            states,
            limit: TRUNCATION_STATE_LIMIT,
        });
    }
    let upper = solve_levels(rates, k, |_| 1.0);
    let (a, b) = extinction_certificate(rates, 1.0 - upper[1][1], 1.0 - upper[1][0]);
    let lower = solve_levels(rates, k, |z| 1.0 - a.powi(z as i32) * b.powi((k - z) as i32));
    Ok(TruncatedTable {
        cap,
        upper,
        lower,
        certificate: (a, b),
    })
}

/// Single-state form of [`truncated_survival_table`].
pub fn truncated_survival_oracle(initial: BranchingState, rates: &Rates, cap: u64) -> Result<TruncatedBracket> {
    if cap < initial.total() {
        return Err(Error::param("K", format!("cap {cap} below initial population {}", initial.total())));
    }
    truncated_survival_table(rates, cap)?.bracket(initial)
}

/// Generator of aᶻbᵍ divided by itself, per type-2 and per type-1
/// individual.
fn drift(rates: &Rates, a: f64, b: f64) -> (f64, f64) {
    let per_z = (1.0 / a - 1.0) + rates.delta * (b / a - 1.0) + rates.lambda * (b - 1.0);
    let per_g = (1.0 / b - 1.0) + rates.gamma * (a / b - 1.0);
    (per_z, per_g)
}

/// Smallest `(a, b)` found on a grid above the estimates `(qa, qb)` of the
/// one-individual extinction probabilities for which aᶻbᵍ is a
/// supermartingale. Falls back to the trivial (1, 1).
///
/// Near the true extinction point the feasible set is a thin cone, so the
/// grid runs over the offset size and, separately, the ratio of the offsets.
fn extinction_certificate(rates: &Rates, qa: f64, qb: f64) -> (f64, f64) {
    let (qa, qb) = (qa.clamp(0.0, 1.0), qb.clamp(0.0, 1.0));
    let mut best = (1.0, 1.0);
    for i in 0..=96 {
        let ea = 10f64.powf(-12.0 + 12.0 * i as f64 / 96.0);
        for j in 1..=400 {
            let eb = ea * 4.0 * j as f64 / 400.0;
            let (a, b) = (qa + ea, qb + eb);
            if a >= 1.0 || b >= 1.0 {
                continue;
            }
            let (pz, pg) = drift(rates, a, b);
            // strict margin absorbs rounding in the drift evaluation
            if pz <= -1e-13 && pg <= -1e-13 && a + b < best.0 + best.1 {
                best = (a, b);
            }
        }
    }
    best
}

/// h[s][z] for the state (z, s − z).
fn solve_levels(rates: &Rates, k: usize, boundary: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let (delta, gamma, lambda) = (rates.delta, rates.gamma, rates.lambda);
    let mut h: Vec<Vec<f64>> = (0..=k).map(|s| vec![0.0; s + 1]).collect();
    for (z, v) in h[k].iter_mut().enumerate() {
        *v = boundary(z);
    }
    let mut a = vec![0.0; k + 1];
    let mut b = vec![0.0; k + 1];
    let mut c = vec![0.0; k + 1];
    let mut rhs = vec![0.0; k + 1];
    let mut cp = vec![0.0; k + 1];
    let mut sweep = |h: &mut Vec<Vec<f64>>, s: usize| -> f64 {
        // R h(z,g) = z h(z-1,g) + g h(z,g-1) + γ g h(z+1,g-1) + δ z h(z-1,g+1) + λ z h(z,g+1)
        for z in 0..=s {
            let g = (s - z) as f64;
            let zf = z as f64;
            let mut r = 0.0;
            if z > 0 {
                r += zf * h[s - 1][z - 1];
            }
            if s > z {
                r += g * h[s - 1][z];
            }
            r += lambda * zf * h[s + 1][z];
            b[z] = zf * (1.0 + delta + lambda) + g * (1.0 + gamma);
            // promotion (z+1, g-1) and demotion (z-1, g+1) stay on level s
            a[z] = if z > 0 { -delta * zf } else { 0.0 };
            c[z] = if z < s { -gamma * g } else { 0.0 };
            rhs[z] = r;
        }
        thomas(&a[..=s], &b[..=s], &c[..=s], &mut rhs[..=s], &mut cp[..=s]);
        let change = h[s].iter().zip(&rhs[..=s]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        h[s].copy_from_slice(&rhs[..=s]);
        change
    };
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for s in 1..k {
            change = change.max(sweep(&mut h, s));
        }
        for s in (1..k).rev() {
            change = change.max(sweep(&mut h, s));
        }
        if change < 1e-15 {
            break;
        }
    }
    h
}

/// Solves a tridiagonal system in place (`a` sub-, `b` main, `c`
/// super-diagonal); the solution overwrites `d`. `cp` is scratch.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], cp: &mut [f64]) {
    let n = b.len();
    cp[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}

/// Doubles K from `start` until the upper bound at `initial` moves by less
/// than `tol`.
pub fn truncated_survival_sweep(rates: &Rates, start: u64, tol: f64) -> Result<TruncatedTable> {
    let mut k = start.max(2);
    let mut prev = truncated_survival_table(rates, k)?;
    loop {
        k *= 2;
        let next = truncated_survival_table(rates, k)?;
        let moved = (0..=1).map(|z| (next.upper[1][z] - prev.upper[1][z]).abs()).fold(0.0, f64::max);
        if moved < tol {
            return Ok(next);
        }
        prev = next;
    }
}
