//! Event-driven simulation of the two-stage contact process and its dual
//! on-off process, survival estimation, and an exact distribution oracle for
//! tori with at most eight sites.
//!
//! The simulator is a thinned direct method. Every fully-infected site carries
//! a constant total rate (death, optional demotion, and 2d infection attempts
//! at rate λ each), every semi-infected site carries another constant rate.
//! An infection attempt that lands on an already infected neighbour is a null
//! event. This keeps the per-event cost O(1) regardless of neighbourhood
//! occupancy and is exact.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, Rates, Site, State, TorusSpec};
use crate::rng::{self, Rng};
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProcessKind {
    /// 2→0 at 1, 1→0 at 1+δ, 1→2 at γ, 0→1 at λ·#{state-2 neighbours}.
    TwoStage,
    /// {1,2}→0 at 1, 2→1 at δ, 1→2 at γ, 0→1 at λ·#{state-2 neighbours}.
    OnOff,
}

impl ProcessKind {
    /// Total exit rate of a state-1 site.
    #[inline]
    fn semi_death(self, rates: &Rates) -> f64 {
        match self {
            ProcessKind::TwoStage => 1.0 + rates.delta,
            ProcessKind::OnOff => 1.0,
        }
    }

    /// Rate of 2→1.
    #[inline]
    fn demotion(self, rates: &Rates) -> f64 {
        match self {
            ProcessKind::TwoStage => 0.0,
            ProcessKind::OnOff => rates.delta,
        }
    }
}

/// Total flip rate split by event type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RateBreakdown {
    /// Any infected site becoming healthy.
    pub death: f64,
    /// 2 → 1 (on-off only).
    pub demotion: f64,
    /// 1 → 2.
    pub promotion: f64,
    /// 0 → 1.
    pub infection: f64,
}

impl RateBreakdown {
    pub fn total(&self) -> f64 {
        self.death + self.demotion + self.promotion + self.infection
    }
}

/// Every possible single-site flip `(site, new state, rate)` out of `states`.
pub fn transitions(kind: ProcessKind, states: &[u8], torus: &TorusSpec, rates: &Rates) -> Vec<(Site, State, f64)> {
    let mut out = Vec::new();
    for x in torus.sites() {
        match states[x.index()] {
            2 => {
                out.push((x, State::Healthy, 1.0));
                if kind == ProcessKind::OnOff {
                    out.push((x, State::Semi, rates.delta));
                }
            }
            1 => {
                out.push((x, State::Healthy, kind.semi_death(rates)));
                out.push((x, State::Fully, rates.gamma));
            }
            _ => {
                let k = torus.neighbors(x).filter(|y| states[y.index()] == 2).count();
                if k > 0 && rates.lambda > 0.0 {
                    out.push((x, State::Semi, rates.lambda * k as f64));
                }
            }
        }
    }
    out
}

pub fn total_rate(kind: ProcessKind, config: &Configuration, torus: &TorusSpec, rates: &Rates) -> RateBreakdown {
    let mut b = RateBreakdown::default();
    let nf = config.num_fully() as f64;
    let ns = config.num_semi() as f64;
    b.death = nf + ns * kind.semi_death(rates);
    b.demotion = nf * kind.demotion(rates);
    b.promotion = ns * rates.gamma;
    let mut healthy_pressure = 0usize;
    let mut seen = std::collections::HashSet::new();
    for x in config.fully() {
        for y in torus.neighbors(x) {
            if config.state(y) == State::Healthy && seen.insert(y) {
                healthy_pressure += torus.neighbors(y).filter(|z| config.state(*z) == State::Fully).count();
            }
        }
    }
    b.infection = rates.lambda * healthy_pressure as f64;
    b
}

const ABSENT: u32 = u32::MAX;

/// Set of sites with O(1) insert, remove and uniform selection.
#[derive(Clone, Debug)]
struct IndexedSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexedSet {
    fn new(n: usize) -> Self {
        IndexedSet {
            items: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    #[inline]
    fn len(&self) -> usize {
        self.items.len()
    }

    #[inline]
    fn insert(&mut self, x: u32) {
        debug_assert_eq!(self.pos[x as usize], ABSENT);
        self.pos[x as usize] = self.items.len() as u32;
        self.items.push(x);
    }

    #[inline]
    fn remove(&mut self, x: u32) {
        let i = self.pos[x as usize] as usize;
        debug_assert!(i < self.items.len());
        let last = self.items.pop().unwrap();
        if last != x {
            self.items[i] = last;
            self.pos[last as usize] = i as u32;
        }
        self.pos[x as usize] = ABSENT;
    }

    fn clear(&mut self) {
        for &x in &self.items {
            self.pos[x as usize] = ABSENT;
        }
        self.items.clear();
    }
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    /// Both sets became empty at this time.
    Extinct(f64),
    /// The infected count first reached the cap at this time.
    ReachedCap(f64),
    /// Still alive at the horizon.
    Censored,
}

impl Outcome {
    /// Survival proxy: censored and cap-reaching runs count as survivors.
    pub fn survived(&self) -> bool {
        !matches!(self, Outcome::Extinct(_))
    }
}

/// When to stop a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub horizon: f64,
    /// Stop as soon as |C| + |D| reaches this many sites.
    pub cap: Option<usize>,
}

impl Stop {
    pub fn horizon(horizon: f64) -> Self {
        Stop { horizon, cap: None }
    }

    pub fn capped(horizon: f64, cap: usize) -> Self {
        Stop { horizon, cap: Some(cap) }
    }
}

/// Reusable single-trajectory simulator. One per worker thread.
#[derive(Clone, Debug)]
pub struct Simulator {
    kind: ProcessKind,
    torus: TorusSpec,
    rates: Rates,
    state: Vec<u8>,
    fully: IndexedSet,
    semi: IndexedSet,
    time: f64,
    fully_rate: f64,
    semi_rate: f64,
}

impl Simulator {
    pub fn new(kind: ProcessKind, torus: &TorusSpec, rates: Rates) -> Self {
        let n = torus.num_sites();
        let infect = 2.0 * torus.dim() as f64 * rates.lambda;
        Simulator {
            kind,
            torus: torus.clone(),
            rates,
            state: vec![0; n],
            fully: IndexedSet::new(n),
            semi: IndexedSet::new(n),
            time: 0.0,
            fully_rate: 1.0 + kind.demotion(&rates) + infect,
            semi_rate: kind.semi_death(&rates) + rates.gamma,
        }
    }

    pub fn reset(&mut self, initial: &Configuration) {
        for &x in self.fully.items.iter().chain(&self.semi.items) {
            self.state[x as usize] = 0;
        }
        self.fully.clear();
        self.semi.clear();
        self.time = 0.0;
        // sorted so the internal order, and therefore the trajectory, does
        // not depend on hash iteration order
        for x in initial.fully() {
            self.set(x.0, 2);
        }
        for x in initial.semi() {
            self.set(x.0, 1);
        }
    }

    #[inline]
    fn set(&mut self, x: u32, s: u8) {
        match self.state[x as usize] {
            2 => self.fully.remove(x),
            1 => self.semi.remove(x),
            _ => {}
        }
        match s {
            2 => self.fully.insert(x),
            1 => self.semi.insert(x),
            _ => {}
        }
        self.state[x as usize] = s;
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn num_fully(&self) -> usize {
        self.fully.len()
    }

    pub fn num_semi(&self) -> usize {
        self.semi.len()
    }

    pub fn num_infected(&self) -> usize {
        self.fully.len() + self.semi.len()
    }

    pub fn states(&self) -> &[u8] {
        &self.state
    }

    pub fn configuration(&self) -> Configuration {
        let fully = self.fully.items.iter().map(|&x| Site(x));
        let semi = self.semi.items.iter().map(|&x| Site(x));
        Configuration::from_sets(fully, semi).expect("simulator sets are disjoint")
    }

    /// Total rate of the thinned dynamics (includes null infection attempts).
    #[inline]
    fn envelope(&self) -> f64 {
        self.fully.len() as f64 * self.fully_rate + self.semi.len() as f64 * self.semi_rate
    }

    /// Runs until `until`, extinction, or the infected count reaching `cap`.
    pub fn advance_to(&mut self, rng: &mut Rng, until: f64, cap: Option<usize>) -> Outcome {
        let cap = cap.unwrap_or(usize::MAX);
        loop {
            if self.num_infected() == 0 {
                return Outcome::Extinct(self.time);
            }
            if self.num_infected() >= cap {
                return Outcome::ReachedCap(self.time);
            }
            let total = self.envelope();
            let next = self.time + rng::exp_time(rng, total);
            if next > until {
                self.time = until;
                return Outcome::Censored;
            }
            self.time = next;
            self.fire(rng.random::<f64>() * total);
        }
    }

    /// Applies the event selected by `u ∈ [0, envelope)`.
    #[inline]
    fn fire(&mut self, u: f64) {
        let nf = self.fully.len();
        let fully_total = nf as f64 * self.fully_rate;
        if u < fully_total {
            let i = ((u / self.fully_rate) as usize).min(nf - 1);
            let x = self.fully.items[i];
            let r = u - i as f64 * self.fully_rate;
            if r < 1.0 {
                self.set(x, 0);
                return;
            }
            let r = r - 1.0;
            let demote = self.kind.demotion(&self.rates);
            if r < demote {
                self.set(x, 1);
                return;
            }
            if self.rates.lambda <= 0.0 {
                return;
            }
            let deg = self.torus.degree();
            let dir = (((r - demote) / self.rates.lambda) as usize).min(deg - 1);
            let y = self.torus.neighbor(Site(x), dir).0;
            if self.state[y as usize] == 0 {
                self.set(y, 1);
            }
        } else {
            let ns = self.semi.len();
            let v = u - fully_total;
            let i = ((v / self.semi_rate) as usize).min(ns - 1);
            let x = self.semi.items[i];
            let r = v - i as f64 * self.semi_rate;
            if r < self.kind.semi_death(&self.rates) {
                self.set(x, 0);
            } else {
                self.set(x, 2);
            }
        }
    }
}

/// Counts at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub fully: usize,
    pub semi: usize,
}

impl Counts {
    pub fn infected(&self) -> usize {
        self.fully + self.semi
    }
}

/// Summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub outcome: Outcome,
    /// Counts at each requested checkpoint (after all events at or before it).
    pub checkpoints: Vec<(f64, Counts)>,
    pub final_counts: Counts,
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) {
        return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
    }
    Ok(())
}

/// One run from `initial` using stream `replica` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    kind: ProcessKind,
    torus: &TorusSpec,
    rates: Rates,
    initial: &Configuration,
    stop: Stop,
    checkpoints: &[f64],
    seed: u64,
    replica: u64,
) -> Result<Trajectory> {
    check_horizon(stop.horizon)?;
    let mut sim = Simulator::new(kind, torus, rates);
    let mut rng = rng::stream(seed, replica);
    Ok(run_one(&mut sim, &mut rng, initial, stop, checkpoints))
}

fn run_one(sim: &mut Simulator, rng: &mut Rng, initial: &Configuration, stop: Stop, checkpoints: &[f64]) -> Trajectory {
    sim.reset(initial);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut outcome = None;
    for &t in checkpoints.iter().filter(|&&t| t <= stop.horizon) {
        if outcome.is_none() {
            match sim.advance_to(rng, t, stop.cap) {
                Outcome::Censored => {}
                o => outcome = Some(o),
            }
        }
        out.push((
            t,
            Counts {
                fully: sim.num_fully(),
                semi: sim.num_semi(),
            },
        ));
    }
    let outcome = outcome.unwrap_or_else(|| sim.advance_to(rng, stop.horizon, stop.cap));
    Trajectory {
        outcome,
        checkpoints: out,
        final_counts: Counts {
            fully: sim.num_fully(),
            semi: sim.num_semi(),
        },
    }
}

/// Runs `replicas` independent trajectories in parallel; replica `r` uses
/// stream `r` of `seed`, so the result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn simulate_many(
    kind: ProcessKind,
    torus: &TorusSpec,
    rates: Rates,
    initial: &Configuration,
    stop: Stop,
    checkpoints: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    check_horizon(stop.horizon)?;
    Ok((0..replicas as u64)
        .into_par_iter()
        .map_init(
            || Simulator::new(kind, torus, rates),
            |sim, r| {
                let mut rng = rng::stream(seed, r);
                run_one(sim, &mut rng, initial, stop, checkpoints)
            },
        )
        .collect())
}

/// Survival estimate together with the proxy used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub estimate: Estimate,
    pub horizon: f64,
    pub cap: Option<usize>,
    /// Replicas still alive at the horizon without reaching the cap. They
    /// count as survivors, which biases the estimate upward.
    pub censored: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_survival(
    kind: ProcessKind,
    torus: &TorusSpec,
    rates: Rates,
    initial: &Configuration,
    stop: Stop,
    replicas: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    if replicas == 0 {
        return Err(Error::param("replicas", "must be at least 1"));
    }
    check_horizon(stop.horizon)?;
    let outcomes: Vec<Outcome> = (0..replicas as u64)
        .into_par_iter()
        .map_init(
            || Simulator::new(kind, torus, rates),
            |sim, r| {
                let mut rng = rng::stream(seed, r);
                sim.reset(initial);
                sim.advance_to(&mut rng, stop.horizon, stop.cap)
            },
        )
        .collect();
    let alive = outcomes.iter().filter(|o| o.survived()).count();
    let censored = outcomes.iter().filter(|o| matches!(o, Outcome::Censored)).count();
    Ok(SurvivalEstimate {
        estimate: Estimate::proportion(alive, replicas, seed),
        horizon: stop.horizon,
        cap: stop.cap,
        censored,
    })
}

/// Survival estimates from the small initial conditions used in the
/// first-jump analysis of the lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FirstJumpEstimates {
    /// From a single semi-infected origin.
    pub alpha: Estimate,
    /// From a single fully-infected origin.
    pub q1: Estimate,
    /// From ({O}, {e₁}).
    pub k1: Estimate,
    /// From ({O}, {e₁, y}), maximised over y ∈ {e₂, −e₁}.
    pub k2: Estimate,
    /// From ({O, e₁}, ∅).
    pub q2: Estimate,
    /// From ({O, e₁}, {y}), maximised over y ∈ {e₂, −e₁}.
    pub q3: Estimate,
}

/// All six first-jump survival probabilities, each from its own derived seed.
/// Needs `d ≥ 2` so that e₂ exists.
pub fn first_jump_estimates(torus: &TorusSpec, rates: Rates, stop: Stop, replicas: usize, seed: u64) -> Result<FirstJumpEstimates> {
    if torus.dim() < 2 {
        return Err(Error::param("d", "needs d >= 2"));
    }
    let o = torus.origin();
    let e1 = torus.unit(0);
    let e2 = torus.unit(1);
    let m1 = torus.neighbor(o, 1);
    let run = |tag: u64, c: &[Site], d: &[Site]| -> Result<Estimate> {
        let init = Configuration::from_sets(c.iter().copied(), d.iter().copied())?;
        let s = rng::derive(seed, tag);
        Ok(estimate_survival(ProcessKind::TwoStage, torus, rates, &init, stop, replicas, s)?.estimate)
    };
    let best = |a: Estimate, b: Estimate| if b.point > a.point { b } else { a };
    Ok(FirstJumpEstimates {
        alpha: run(0, &[], &[o])?,
        q1: run(1, &[o], &[])?,
        k1: run(2, &[o], &[e1])?,
        k2: best(run(3, &[o], &[e1, e2])?, run(4, &[o], &[e1, m1])?),
        q2: run(5, &[o, e1], &[])?,
        q3: best(run(6, &[o, e1], &[e2])?, run(7, &[o, e1], &[m1])?),
    })
}

/// Largest state space handled by the exact oracle (3^8).
pub const MAX_EXACT_STATES: usize = 6561;
/// Up to this many states the oracle exponentiates the dense generator.
pub const DENSE_LIMIT: usize = 729;

/// Sparse generator over {0,1,2}^sites, states encoded base 3 with site 0 as
/// the least significant digit.
#[derive(Clone, Debug)]
pub struct Generator {
    pub sites: usize,
    /// Off-diagonal entries per row.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Exit rate per row (minus the diagonal).
    pub exit: Vec<f64>,
}

pub fn encode(states: &[u8]) -> usize {
    states.iter().rev().fold(0, |acc, &s| acc * 3 + s as usize)
}

pub fn decode(mut index: usize, sites: usize) -> Vec<u8> {
    (0..sites)
        .map(|_| {
            let s = (index % 3) as u8;
            index /= 3;
            s
        })
        .collect()
}

fn state_count(torus: &TorusSpec) -> Result<usize> {
    let n = torus.num_sites();
    let states = 3usize.checked_pow(n as u32).unwrap_or(usize::MAX);
    if states > MAX_EXACT_STATES {
        return Err(Error::Size {
            states,
            limit: MAX_EXACT_STATES,
        });
    }
    Ok(states)
}

pub fn generator(kind: ProcessKind, torus: &TorusSpec, rates: &Rates) -> Result<Generator> {
    let states = state_count(torus)?;
    let sites = torus.num_sites();
    let mut rows = Vec::with_capacity(states);
    let mut exit = Vec::with_capacity(states);
    for i in 0..states {
        let cfg = decode(i, sites);
        let mut row = Vec::new();
        let mut out = 0.0;
        for (x, s, rate) in transitions(kind, &cfg, torus, rates) {
            let mut next = cfg.clone();
            next[x.index()] = s as u8;
            row.push((encode(&next), rate));
            out += rate;
        }
        rows.push(row);
        exit.push(out);
    }
    Ok(Generator { sites, rows, exit })
}

impl Generator {
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut q = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            q[(i, i)] = -self.exit[i];
            for &(j, r) in row {
                q[(i, j)] += r;
            }
        }
        q
    }
}

/// Law of the chain at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub t: f64,
    pub sites: usize,
    pub probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn probability(&self, event: impl Fn(&[u8]) -> bool) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| event(&decode(*i, self.sites)))
            .map(|(_, p)| p)
            .sum()
    }
}

/// Exact law at `t` by exponentiating the generator: dense scaling and
/// squaring up to [`DENSE_LIMIT`] states, sparse uniformization above.
pub fn exact_distribution(
    kind: ProcessKind,
    torus: &TorusSpec,
    rates: &Rates,
    initial: &Configuration,
    t: f64,
) -> Result<ExactDistribution> {
    let gen = generator(kind, torus, rates)?;
    let start = encode(&initial.to_states(torus));
    let probs = if gen.rows.len() <= DENSE_LIMIT {
        propagate_dense(&gen, start, t)
    } else {
        propagate_uniformized(&gen, start, t)
    };
    Ok(ExactDistribution {
        t,
        sites: gen.sites,
        probs,
    })
}

/// Row `start` of exp(tQ).
pub fn propagate_dense(gen: &Generator, start: usize, t: f64) -> Vec<f64> {
    let e = (gen.dense() * t).exp();
    e.row(start).iter().copied().collect()
}

/// e_start · exp(tQ) by uniformization: Σ_k Poisson(k; Λt) · e_start Pᵏ with
/// P = I + Q/Λ.
pub fn propagate_uniformized(gen: &Generator, start: usize, t: f64) -> Vec<f64> {
    let n = gen.rows.len();
    let mut out = vec![0.0; n];
    let lam = gen.exit.iter().cloned().fold(0.0, f64::max);
    if lam == 0.0 || t == 0.0 {
        out[start] = 1.0;
        return out;
    }
    let mu = lam * t;
    let mut v = vec![0.0; n];
    v[start] = 1.0;
    let mut next = vec![0.0; n];
    let mut acc = 0.0;
    let mut k = 0usize;
    loop {
        let log_w = -mu + k as f64 * mu.ln() - ln_factorial(k);
        let w = log_w.exp();
        if w > 0.0 {
            for (o, vi) in out.iter_mut().zip(&v) {
                *o += w * vi;
            }
        }
        acc += w;
        if (k as f64 > mu && 1.0 - acc < 1e-15) || k > 10 * (mu as usize + 100) {
            break;
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, row) in gen.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            next[i] += vi * (1.0 - gen.exit[i] / lam);
            for &(j, r) in row {
                next[j] += vi * r / lam;
            }
        }
        std::mem::swap(&mut v, &mut next);
        k += 1;
    }
    out
}

fn ln_factorial(k: usize) -> f64 {
    statrs::function::factorial::ln_factorial(k as u64)
}

/// Both sides of the two-stage / on-off duality on a small torus:
/// P(η_t from (C,D) has a 2 in A or a non-0 in B) and
/// P(ξ_t from (B,A) has a 2 in D or a non-0 in C).
pub fn duality_sides(torus: &TorusSpec, rates: &Rates, a: &[Site], b: &[Site], c: &[Site], d: &[Site], t: f64) -> Result<(f64, f64)> {
    let forward = Configuration::from_sets(c.iter().copied(), d.iter().copied())?;
    let dual = Configuration::from_sets(b.iter().copied(), a.iter().copied())?;
    let hits =
        |s: &[u8], twos: &[Site], nonzero: &[Site]| twos.iter().any(|x| s[x.index()] == 2) || nonzero.iter().any(|x| s[x.index()] != 0);
    let lhs = exact_distribution(ProcessKind::TwoStage, torus, rates, &forward, t)?.probability(|s| hits(s, a, b));
    let rhs = exact_distribution(ProcessKind::OnOff, torus, rates, &dual, t)?.probability(|s| hits(s, d, c));
    Ok((lhs, rhs))
}

/// Monte Carlo form of [`duality_sides`] for tori too large for the exact
/// oracle. The two sides use independent streams derived from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_duality_sides(
    torus: &TorusSpec,
    rates: &Rates,
    a: &[Site],
    b: &[Site],
    c: &[Site],
    d: &[Site],
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    if replicas == 0 {
        return Err(Error::param("replicas", "must be at least 1"));
    }
    check_horizon(t)?;
    let forward = Configuration::from_sets(c.iter().copied(), d.iter().copied())?;
    let dual = Configuration::from_sets(b.iter().copied(), a.iter().copied())?;
    let side = |kind: ProcessKind, start: &Configuration, twos: &[Site], nonzero: &[Site], seed: u64| {
        let hits = (0..replicas as u64)
            .into_par_iter()
            .map_init(
                || Simulator::new(kind, torus, *rates),
                |sim, r| {
                    let mut rng = rng::stream(seed, r);
                    sim.reset(start);
                    sim.advance_to(&mut rng, t, None);
                    let s = sim.states();
                    twos.iter().any(|x| s[x.index()] == 2) || nonzero.iter().any(|x| s[x.index()] != 0)
                },
            )
            .filter(|&h| h)
            .count();
        Estimate::proportion(hits, replicas, seed)
    };
    Ok((
        side(ProcessKind::TwoStage, &forward, a, b, rng::derive(seed, 0)),
        side(ProcessKind::OnOff, &dual, d, c, rng::derive(seed, 1)),
    ))
}
