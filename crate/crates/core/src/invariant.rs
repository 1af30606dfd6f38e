//! The upper invariant measure on finite tori and its comparison with the
//! product measure.
//!
//! Functions here take the unscaled infection rate λ and run the lattice
//! dynamics at λ/(2d) per neighbour. On a finite torus every chain dies out
//! eventually, so samples are quasi-stationary: they are only meaningful
//! while no chain has gone extinct.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::branching::survival_closed_form;
use crate::error::{Error, Result};
use crate::lattice::{Configuration, Rates, Site, TorusSpec};
use crate::markov::{estimate_survival, Outcome, ProcessKind, Simulator, Stop};
use crate::rng;
use crate::stats::Estimate;

pub const QUASI_STATIONARY_NOTE: &str = "finite torus: samples are quasi-stationary and valid only while no chain has died out";

/// Sampling schedule for ν.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NuSampler {
    pub burn_in: f64,
    /// Snapshots per chain.
    pub samples: usize,
    /// Time between snapshots.
    pub thinning: f64,
    /// Independent chains. Standard errors come from chain means.
    pub chains: usize,
    pub seed: u64,
}

impl NuSampler {
    fn validate(&self) -> Result<()> {
        if !(self.burn_in.is_finite() && self.burn_in >= 0.0) {
            return Err(Error::param("burn_in", "must be finite and nonnegative"));
        }
        if !(self.thinning.is_finite() && self.thinning > 0.0) {
            return Err(Error::param("thinning", "must be positive"));
        }
        if self.samples < 2 {
            return Err(Error::param("samples", "need at least 2 snapshots per chain"));
        }
        if self.chains < 2 {
            return Err(Error::param("chains", "need at least 2 chains"));
        }
        Ok(())
    }
}

/// First half against second half of the sampling window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StationarityGate {
    pub first_half: f64,
    pub second_half: f64,
    /// Mean over chains of (second − first) occupancy.
    pub drift: Estimate,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NuSamples {
    #[serde(skip)]
    torus: TorusSpec,
    pub d: usize,
    pub side: usize,
    pub lambda: f64,
    pub lambda_per_neighbour: f64,
    pub delta: f64,
    pub gamma: f64,
    pub sampler: NuSampler,
    pub gate: StationarityGate,
    pub note: &'static str,
    /// `chains[c][k]` is the state vector of snapshot k of chain c.
    #[serde(skip)]
    chains: Vec<Vec<Vec<u8>>>,
}

impl NuSamples {
    pub fn torus(&self) -> &TorusSpec {
        &self.torus
    }

    pub fn chains(&self) -> &[Vec<Vec<u8>>] {
        &self.chains
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-chain mean of `f` over snapshots, then mean ± SE across chains.
    pub fn chain_estimate(&self, f: impl Fn(&[u8]) -> f64 + Sync) -> Estimate {
        let means: Vec<f64> = self
            .chains
            .par_iter()
            .map(|c| c.iter().map(|s| f(s)).sum::<f64>() / c.len() as f64)
            .collect();
        Estimate::mean(&means, self.sampler.seed)
    }

    /// Fraction of infected sites.
    pub fn occupancy(&self) -> Estimate {
        self.chain_estimate(occupied_fraction)
    }

    /// Fraction of sites in each state, averaged over all snapshots.
    pub fn marginals(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for s in self.chains.iter().flatten().flatten() {
            counts[*s as usize] += 1;
        }
        let total = counts.iter().sum::<usize>().max(1) as f64;
        counts.map(|c| c as f64 / total)
    }
}

fn occupied_fraction(s: &[u8]) -> f64 {
    s.iter().filter(|&&v| v != 0).count() as f64 / s.len() as f64
}

/// Runs independent chains from the all-fully-infected configuration and
/// keeps thinned snapshots after the burn-in.
pub fn sample_nu(torus: &TorusSpec, rates: &Rates, sampler: NuSampler) -> Result<NuSamples> {
    rates.validate()?;
    sampler.validate()?;
    let d = torus.dim();
    let scaled = rates.scaled(d);
    let start = Configuration::all_fully(torus);
    let chains: Vec<Vec<Vec<u8>>> = (0..sampler.chains)
        .into_par_iter()
        .map(|c| {
            let mut sim = Simulator::new(ProcessKind::TwoStage, torus, scaled);
            let mut rng = rng::stream(sampler.seed, c as u64);
            sim.reset(&start);
            let mut snaps = Vec::with_capacity(sampler.samples);
            for k in 0..sampler.samples {
                let t = sampler.burn_in + k as f64 * sampler.thinning;
                if let Outcome::Extinct(time) = sim.advance_to(&mut rng, t, None) {
                    return Err(Error::ExtinctionDuringSampling { chain: c, time });
                }
                snaps.push(sim.states().to_vec());
            }
            Ok(snaps)
        })
        .collect::<Result<_>>()?;
    let gate = stationarity_gate(&chains, sampler.seed);
    Ok(NuSamples {
        torus: torus.clone(),
        d,
        side: torus.side(),
        lambda: rates.lambda,
        lambda_per_neighbour: scaled.lambda,
        delta: rates.delta,
        gamma: rates.gamma,
        sampler,
        gate,
        note: QUASI_STATIONARY_NOTE,
        chains,
    })
}

fn stationarity_gate(chains: &[Vec<Vec<u8>>], seed: u64) -> StationarityGate {
    let halves: Vec<(f64, f64)> = chains
        .iter()
        .map(|c| {
            let mid = c.len() / 2;
            let mean = |s: &[Vec<u8>]| s.iter().map(|v| occupied_fraction(v)).sum::<f64>() / s.len() as f64;
            (mean(&c[..mid]), mean(&c[mid..]))
        })
        .collect();
    let n = halves.len() as f64;
    let diffs: Vec<f64> = halves.iter().map(|(a, b)| b - a).collect();
    let drift = Estimate::mean(&diffs, seed);
    StationarityGate {
        first_half: halves.iter().map(|h| h.0).sum::<f64>() / n,
        second_half: halves.iter().map(|h| h.1).sum::<f64>() / n,
        drift,
        passed: drift.within(0.0, 2.0),
    }
}

/// Occupancy with the base schedule, with the burn-in doubled and, if given,
/// on a larger torus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityCheck {
    pub base: Estimate,
    pub doubled_time: Estimate,
    pub larger_torus: Option<Estimate>,
    pub passed: bool,
}

pub fn stability_check(torus: &TorusSpec, rates: &Rates, sampler: NuSampler, larger: Option<&TorusSpec>) -> Result<StabilityCheck> {
    let base = sample_nu(torus, rates, sampler)?.occupancy();
    let long = NuSampler {
        burn_in: 2.0 * sampler.burn_in,
        seed: rng::derive(sampler.seed, 1),
        ..sampler
    };
    let doubled_time = sample_nu(torus, rates, long)?.occupancy();
    let larger_torus = match larger {
        Some(t) => Some(
            sample_nu(
                t,
                rates,
                NuSampler {
                    seed: rng::derive(sampler.seed, 2),
                    ..sampler
                },
            )?
            .occupancy(),
        ),
        None => None,
    };
    let passed = base.agrees_with(&doubled_time, 2.0) && larger_torus.is_none_or(|e| base.agrees_with(&e, 2.0));
    Ok(StabilityCheck {
        base,
        doubled_time,
        larger_torus,
        passed,
    })
}

/// Event {no site of `a` fully infected, every site of `b` healthy}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PiQuery {
    pub a: Vec<Site>,
    pub b: Vec<Site>,
}

impl PiQuery {
    pub fn new(a: Vec<Site>, b: Vec<Site>) -> Result<Self> {
        let count = a.iter().filter(|x| b.contains(x)).count();
        if count > 0 {
            return Err(Error::Overlap { count });
        }
        Ok(PiQuery { a, b })
    }

    pub fn holds(&self, states: &[u8]) -> bool {
        self.a.iter().all(|x| states[x.index()] != 2) && self.b.iter().all(|y| states[y.index()] == 0)
    }
}

/// Direct estimate of π(A, B), averaged over all translates of the query.
pub fn estimate_pi(samples: &NuSamples, query: &PiQuery) -> Estimate {
    if query.a.is_empty() && query.b.is_empty() {
        return Estimate::mean(&vec![1.0; samples.chains.len()], samples.sampler.seed);
    }
    let torus = &samples.torus;
    let shift = |set: &[Site]| -> Vec<Vec<u32>> {
        torus
            .sites()
            .map(|t| set.iter().map(|&x| torus.translate(x, t).0).collect())
            .collect()
    };
    let (ta, tb) = (shift(&query.a), shift(&query.b));
    let n = torus.num_sites() as f64;
    samples.chain_estimate(|s| {
        let hits = ta
            .iter()
            .zip(&tb)
            .filter(|(a, b)| a.iter().all(|&x| s[x as usize] != 2) && b.iter().all(|&y| s[y as usize] == 0))
            .count();
        hits as f64 / n
    })
}

/// 1 − P(on-off process from (B fully, A semi) is alive at `horizon`).
///
/// Runs reaching `cap` infected sites stop early and count as alive; the
/// chance of dying out from there before the horizon is neglected.
pub fn dual_pi(query: &PiQuery, torus: &TorusSpec, rates: &Rates, stop: Stop, replicas: usize, seed: u64) -> Result<Estimate> {
    rates.validate()?;
    let start = Configuration::from_sets(query.b.iter().copied(), query.a.iter().copied())?;
    let s = estimate_survival(ProcessKind::OnOff, torus, rates.scaled(torus.dim()), &start, stop, replicas, seed)?;
    Ok(Estimate {
        point: 1.0 - s.estimate.point,
        ..s.estimate
    })
}

/// Probability that the on-off process from (B fully, A semi) reaches
/// `target` infected sites before `horizon`.
pub fn reach_probability(
    query: &PiQuery,
    torus: &TorusSpec,
    rates: &Rates,
    target: usize,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<Estimate> {
    rates.validate()?;
    if replicas == 0 {
        return Err(Error::param("replicas", "must be at least 1"));
    }
    let start = Configuration::from_sets(query.b.iter().copied(), query.a.iter().copied())?;
    let scaled = rates.scaled(torus.dim());
    let hits = (0..replicas as u64)
        .into_par_iter()
        .map_init(
            || Simulator::new(ProcessKind::OnOff, torus, scaled),
            |sim, r| {
                let mut rng = rng::stream(seed, r);
                sim.reset(&start);
                matches!(sim.advance_to(&mut rng, horizon, Some(target)), Outcome::ReachedCap(_))
            },
        )
        .filter(|&hit| hit)
        .count();
    Ok(Estimate::proportion(hits, replicas, seed))
}

/// Single-site law of the product measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductPrediction {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl ProductPrediction {
    /// Requires λγ > 1+δ+γ.
    pub fn new(rates: &Rates) -> Result<Self> {
        rates.validate()?;
        let s = rates.sum();
        let (l, g) = (rates.lambda, rates.gamma);
        if l * g <= s {
            return Err(Error::param("lambda", format!("need λγ > 1+δ+γ, got λγ = {} ≤ {s}", l * g)));
        }
        Ok(ProductPrediction {
            p0: s / (l * g),
            p1: (l * g - s) / (l * g * (g + 1.0)),
            p2: (l * g - s) / (l * (g + 1.0)),
        })
    }

    /// (1 − p2)^m p0^n for |A| = m, |B| = n.
    pub fn predict(&self, m: usize, n: usize) -> f64 {
        (1.0 - self.p2).powi(m as i32) * self.p0.powi(n as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SetFamily {
    /// A path of adjacent sites from the origin; A takes the first m.
    Clustered,
    /// Pairwise distance at least 3.
    Spread,
    /// A clustered, B spread away from A and from itself.
    Mixed,
}

impl SetFamily {
    pub const ALL: [SetFamily; 3] = [SetFamily::Clustered, SetFamily::Spread, SetFamily::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            SetFamily::Clustered => "clustered",
            SetFamily::Spread => "spread",
            SetFamily::Mixed => "mixed",
        }
    }
}

const SPREAD_DISTANCE: usize = 3;

fn path(torus: &TorusSpec, k: usize) -> Option<Vec<Site>> {
    let mut out = Vec::with_capacity(k);
    let mut x = torus.origin();
    for j in 0..k {
        if j > 0 {
            x = torus.neighbor(x, (j - 1) % torus.dim());
        }
        if out.contains(&x) {
            return None;
        }
        out.push(x);
    }
    Some(out)
}

/// Greedy pick in index order of `k` sites at distance ≥ 3 from `avoid`
/// and from each other.
fn spread(torus: &TorusSpec, k: usize, avoid: &[Site]) -> Option<Vec<Site>> {
    let mut out: Vec<Site> = Vec::with_capacity(k);
    for x in torus.sites() {
        if out.len() == k {
            break;
        }
        if avoid.iter().chain(&out).all(|&y| torus.distance(x, y) >= SPREAD_DISTANCE) {
            out.push(x);
        }
    }
    (out.len() == k).then_some(out)
}

/// The representative (A, B) with |A| = m, |B| = n, or `None` if the torus
/// is too small for the family's distance constraint.
pub fn family_sets(torus: &TorusSpec, family: SetFamily, m: usize, n: usize) -> Option<PiQuery> {
    let (a, b) = match family {
        SetFamily::Clustered => {
            let mut all = path(torus, m + n)?;
            let b = all.split_off(m);
            (all, b)
        }
        SetFamily::Spread => {
            let mut all = spread(torus, m + n, &[])?;
            let b = all.split_off(m);
            (all, b)
        }
        SetFamily::Mixed => {
            let a = path(torus, m)?;
            let b = spread(torus, n, &a)?;
            (a, b)
        }
    };
    Some(PiQuery { a, b })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub m: usize,
    pub n: usize,
    pub family: SetFamily,
    pub estimate: Estimate,
    pub prediction: f64,
    pub gap: f64,
}

/// Family maximum of |π̂ − prediction|. It is a lower bound on the supremum
/// over all sets of the given sizes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub m: usize,
    pub n: usize,
    pub rows: Vec<GapRow>,
    pub max_gap: f64,
    /// Families the torus could not accommodate.
    pub skipped: Vec<SetFamily>,
}

pub fn product_gap(samples: &NuSamples, m: usize, n: usize) -> Result<GapReport> {
    let rates = Rates {
        lambda: samples.lambda,
        delta: samples.delta,
        gamma: samples.gamma,
    };
    let prediction = ProductPrediction::new(&rates)?.predict(m, n);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for family in SetFamily::ALL {
        match family_sets(&samples.torus, family, m, n) {
            Some(q) => {
                let estimate = estimate_pi(samples, &q);
                rows.push(GapRow {
                    m,
                    n,
                    family,
                    estimate,
                    prediction,
                    gap: (estimate.point - prediction).abs(),
                });
            }
            None => skipped.push(family),
        }
    }
    let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(GapReport {
        m,
        n,
        rows,
        max_gap,
        skipped,
    })
}

/// Family minimum of ν(some site of A infected) over |A| = `size`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BTilde {
    pub size: usize,
    pub estimate: Estimate,
    pub family: SetFamily,
    pub skipped: Vec<SetFamily>,
}

pub fn b_tilde(samples: &NuSamples, size: usize) -> Result<BTilde> {
    if size == 0 {
        return Err(Error::param("size", "must be at least 1"));
    }
    let mut best: Option<(Estimate, SetFamily)> = None;
    let mut skipped = Vec::new();
    for family in [SetFamily::Clustered, SetFamily::Spread] {
        let Some(q) = family_sets(&samples.torus, family, 0, size) else {
            skipped.push(family);
            continue;
        };
        let pi = estimate_pi(samples, &q);
        let e = Estimate {
            point: 1.0 - pi.point,
            ..pi
        };
        if best.is_none_or(|(b, _)| e.point < b.point) {
            best = Some((e, family));
        }
    }
    let (estimate, family) = best.ok_or_else(|| Error::Domain(format!("no set family fits {size} sites on this torus")))?;
    Ok(BTilde {
        size,
        estimate,
        family,
        skipped,
    })
}

/// e^{−(1+δ)}(1 − e^{−γ}): a semi-infected site is fully infected at time 1
/// with at least this probability.
pub fn promotion_probability(rates: &Rates) -> f64 {
    (-(1.0 + rates.delta)).exp() * (1.0 - (-rates.gamma).exp())
}

/// ⌈Mp/2⌉.
pub fn mu(big_m: usize, p: f64) -> usize {
    (big_m as f64 * p / 2.0).ceil() as usize
}

/// P(Bin(M, p) ≥ Mp/2), summed exactly in log space.
pub fn alpha_tilde(big_m: usize, p: f64) -> f64 {
    let k0 = mu(big_m, p);
    if k0 == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms: Vec<f64> = (0..k0.min(big_m + 1))
        .map(|k| ln_binomial(big_m as u64, k as u64) + k as f64 * lp + (big_m - k) as f64 * lq)
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let below = top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>();
    (1.0 - below).clamp(0.0, 1.0)
}

/// n / (n − 1 + 2(γ+1)/(γ − (1+δ+γ)/λ)): asymptotic lower bound on the
/// infimum occupancy of n-site sets.
pub fn occupancy_lower_bound(n: usize, rates: &Rates) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let excess = rates.gamma - rates.sum() / rates.lambda;
    if excess <= 0.0 {
        return Err(Error::param("lambda", "need λ > (1+δ+γ)/γ"));
    }
    let n = n as f64;
    Ok(n / (n - 1.0 + 2.0 * (rates.gamma + 1.0) / excess))
}

/// The pieces of the lower bound on 1 − π(A, B) for |A| = m, |B| = n.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SixParts {
    pub big_m: usize,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub p: f64,
    pub alpha_tilde: f64,
    pub mu: usize,
    /// Asymptotic bound at set size n.
    pub occupancy_bound_n: Option<f64>,
    /// Asymptotic bound at set size μ, a plug-in for b̃.
    pub occupancy_bound_mu: Option<f64>,
    /// (2d − M)λ/(2d).
    pub reduced_lambda: Option<f64>,
    /// Branching survival from (n, m) at the reduced rate.
    pub branching_factor: Option<f64>,
    pub b_tilde: Option<Estimate>,
    /// branching factor × α̃ × b̃.
    pub composite: Option<f64>,
    pub notes: Vec<String>,
}

pub fn six_bounds(big_m: usize, n: usize, m: usize, d: usize, rates: &Rates, b_tilde: Option<Estimate>) -> Result<SixParts> {
    rates.validate()?;
    if big_m <= n + m {
        return Err(Error::param("M", format!("need M > n + m = {}, got {big_m}", n + m)));
    }
    let p = promotion_probability(rates);
    let mu_m = mu(big_m, p);
    let mut notes = Vec::new();
    let mut keep = |r: Result<f64>| r.map_err(|e| notes.push(e.to_string())).ok();
    let occupancy_bound_n = if n > 0 { keep(occupancy_lower_bound(n, rates)) } else { None };
    let occupancy_bound_mu = keep(occupancy_lower_bound(mu_m, rates));
    let (reduced_lambda, branching_factor) = if 2 * d > big_m {
        let l = (2 * d - big_m) as f64 * rates.lambda / (2 * d) as f64;
        (Some(l), Some(survival_closed_form(n as u64, m as u64, &rates.with_lambda(l))))
    } else {
        notes.push(format!("2d = {} ≤ M = {big_m}: reduced rate undefined", 2 * d));
        (None, None)
    };
    let alpha = alpha_tilde(big_m, p);
    let composite = match (branching_factor, b_tilde) {
        (Some(f), Some(b)) => Some(f * alpha * b.point),
        _ => None,
    };
    Ok(SixParts {
        big_m,
        n,
        m,
        d,
        p,
        alpha_tilde: alpha,
        mu: mu_m,
        occupancy_bound_n,
        occupancy_bound_mu,
        reduced_lambda,
        branching_factor,
        b_tilde,
        composite,
        notes,
    })
}

/// Bernoulli(p) draws summed over M, repeated; used to check the exact tail.
pub fn alpha_tilde_mc(big_m: usize, p: f64, replicas: usize, seed: u64) -> Estimate {
    let k0 = mu(big_m, p);
    let hits = (0..replicas as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = rng::stream(seed, r);
            (0..big_m).filter(|_| rng.random::<f64>() < p).count() >= k0
        })
        .count();
    Estimate::proportion(hits, replicas, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rates(lambda: f64) -> Rates {
        Rates {
            lambda,
            delta: 1.0,
            gamma: 2.0,
        }
    }

    fn sampler() -> NuSampler {
        NuSampler {
            burn_in: 10.0,
            samples: 6,
            thinning: 1.0,
            chains: 8,
            seed: 5,
        }
    }

    #[test]
    fn product_prediction_values() {
        let p = ProductPrediction::new(&rates(8.0)).unwrap();
        assert!((p.p0 - 0.25).abs() < 1e-15);
        assert!((p.p1 - 0.25).abs() < 1e-15);
        assert!((p.p2 - 0.5).abs() < 1e-15);
        assert!(ProductPrediction::new(&rates(2.0)).is_err());
        assert_eq!(p.predict(0, 0), 1.0);
        assert!((p.predict(1, 1) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn exact_pieces() {
        let p = promotion_probability(&rates(8.0));
        assert!((p - 0.117019).abs() < 1e-6);
        assert_eq!(mu(100, p), 6);
        assert!((occupancy_lower_bound(1, &rates(8.0)).unwrap() - 0.25).abs() < 1e-15);
        // small M: only k = 0 lies below μ = 1
        assert!((alpha_tilde(3, p) - (1.0 - (1.0 - p).powi(3))).abs() < 1e-14);
    }

    #[test]
    fn six_bounds_rejects_small_m() {
        assert!(six_bounds(2, 1, 1, 4, &rates(8.0), None).is_err());
        let s = six_bounds(100, 1, 1, 4, &rates(8.0), None).unwrap();
        assert!(s.branching_factor.is_none() && s.composite.is_none());
    }

    #[test]
    fn query_overlap() {
        assert!(PiQuery::new(vec![Site(1)], vec![Site(1)]).is_err());
    }

    #[test]
    fn subcritical_chain_dies() {
        let torus = TorusSpec::new(2, 3).unwrap();
        let s = NuSampler {
            burn_in: 200.0,
            ..sampler()
        };
        assert!(matches!(
            sample_nu(&torus, &rates(0.5), s),
            Err(Error::ExtinctionDuringSampling { .. })
        ));
    }

    #[test]
    fn vacuous_query_is_certain() {
        let torus = TorusSpec::new(4, 3).unwrap();
        let s = sample_nu(&torus, &rates(8.0), sampler()).unwrap();
        let e = estimate_pi(&s, &PiQuery::new(vec![], vec![]).unwrap());
        assert_eq!(e.point, 1.0);
        let dual = dual_pi(
            &PiQuery::new(vec![], vec![]).unwrap(),
            &torus,
            &rates(8.0),
            Stop::horizon(5.0),
            10,
            1,
        )
        .unwrap();
        assert_eq!(dual.point, 1.0);
    }

    #[test]
    fn families_on_small_torus() {
        let torus = TorusSpec::new(4, 3).unwrap();
        for family in SetFamily::ALL {
            let q = family_sets(&torus, family, 1, 1).unwrap();
            assert_eq!((q.a.len(), q.b.len()), (1, 1));
        }
        // distances on a ring of 5 never reach 3
        let ring = TorusSpec::new(1, 5).unwrap();
        assert!(family_sets(&ring, SetFamily::Spread, 1, 1).is_none());
    }

    proptest! {
        #[test]
        fn marginals_sum_to_one(lambda in 2.01f64..50.0, delta in 0.0f64..3.0, gamma in 0.5f64..10.0) {
            let r = Rates { lambda: lambda * (1.0 + delta + gamma) / gamma, delta, gamma };
            let p = ProductPrediction::new(&r).unwrap();
            prop_assert!((p.p0 + p.p1 + p.p2 - 1.0).abs() < 1e-12);
            for v in [p.p0, p.p1, p.p2] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn family_sets_are_disjoint(d in 2usize..5, m in 0usize..3, n in 0usize..3) {
            let torus = TorusSpec::new(d, 7).unwrap();
            for family in SetFamily::ALL {
                if let Some(q) = family_sets(&torus, family, m, n) {
                    prop_assert_eq!(q.a.len(), m);
                    prop_assert_eq!(q.b.len(), n);
                    prop_assert!(PiQuery::new(q.a.clone(), q.b.clone()).is_ok());
                }
            }
        }

        #[test]
        fn alpha_tilde_is_a_probability(big_m in 1usize..3000, p in 0.001f64..0.999) {
            let a = alpha_tilde(big_m, p);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
