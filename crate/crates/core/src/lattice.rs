//! Finite torus approximation of ℤ^d, model rates and configurations.
//!
//! Sites are packed mixed-radix indices over `side^d`; coordinates are decoded
//! on demand. All distances use wraparound per axis.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::BuildHasherDefault;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Infection rate per fully-infected neighbour (`lambda`), extra recovery
/// rate of semi-infected sites (`delta`) and promotion rate 1 → 2 (`gamma`).
///
/// This is plain data. Simulators accept `lambda = 0` (pure death chains);
/// [`Rates::validate`] enforces strict positivity for user-facing entry points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Rates {
    pub fn new(lambda: f64, delta: f64, gamma: f64) -> Result<Self> {
        let rates = Rates { lambda, delta, gamma };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda", self.lambda), ("delta", self.delta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(field, format!("must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// 1 + δ + γ, the total exit rate of a semi-infected site.
    #[inline]
    pub fn sum(&self) -> f64 {
        1.0 + self.delta + self.gamma
    }

    /// b = (1+δ+γ)/(2dλ), the weight of an infection event in the linear system.
    #[inline]
    pub fn b(&self, d: usize) -> f64 {
        self.sum() / (2.0 * d as f64 * self.lambda)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Rates { lambda, ..self }
    }

    /// Same δ, γ with the infection rate replaced by λ/(2d).
    pub fn scaled(self, d: usize) -> Self {
        self.with_lambda(self.lambda / (2.0 * d as f64))
    }
}

/// Packed site index on a torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub u32);

impl Site {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The torus (ℤ/Lℤ)^d with L ≥ 3, so every site has exactly 2d distinct
/// neighbours.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TorusSpec {
    d: usize,
    side: usize,
    sites: usize,
    strides: Vec<usize>,
}

/// Largest supported number of sites (indices are stored as `u32`).
pub const MAX_SITES: usize = u32::MAX as usize;

impl TorusSpec {
    pub fn new(d: usize, side: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        if side < 3 {
            return Err(Error::param("L", format!("side length must be at least 3, got {side}")));
        }
        let mut sites: usize = 1;
        let mut strides = Vec::with_capacity(d);
        for _ in 0..d {
            strides.push(sites);
            sites = sites
                .checked_mul(side)
                .filter(|&n| n <= MAX_SITES)
                .ok_or_else(|| Error::param("L", format!("{side}^{d} sites exceeds {MAX_SITES}")))?;
        }
        Ok(TorusSpec { d, side, sites, strides })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn num_sites(&self) -> usize {
        self.sites
    }

    #[inline]
    pub fn degree(&self) -> usize {
        2 * self.d
    }

    #[inline]
    pub fn origin(&self) -> Site {
        Site(0)
    }

    /// The unit vector e_i (0-based axis).
    pub fn unit(&self, axis: usize) -> Site {
        assert!(axis < self.d, "axis {axis} out of range for d = {}", self.d);
        Site(self.strides[axis] as u32)
    }

    /// Site with the given (possibly negative or out-of-range) coordinates,
    /// reduced modulo L.
    pub fn site(&self, coords: &[i64]) -> Site {
        assert_eq!(coords.len(), self.d);
        let l = self.side as i64;
        let idx = coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c.rem_euclid(l) as usize * s)
            .sum::<usize>();
        Site(idx as u32)
    }

    pub fn coords(&self, x: Site) -> Vec<usize> {
        let mut idx = x.index();
        (0..self.d)
            .map(|_| {
                let c = idx % self.side;
                idx /= self.side;
                c
            })
            .collect()
    }

    #[inline]
    fn coord(&self, x: Site, axis: usize) -> usize {
        (x.index() / self.strides[axis]) % self.side
    }

    /// Neighbour in direction `dir ∈ 0..2d`: axis `dir / 2`, `+1` for even
    /// `dir`, `-1` for odd.
    #[inline]
    pub fn neighbor(&self, x: Site, dir: usize) -> Site {
        let axis = dir >> 1;
        let stride = self.strides[axis];
        let c = self.coord(x, axis);
        let idx = x.index();
        let next = if dir & 1 == 0 {
            if c + 1 == self.side {
                idx - c * stride
            } else {
                idx + stride
            }
        } else if c == 0 {
            idx + (self.side - 1) * stride
        } else {
            idx - stride
        };
        Site(next as u32)
    }

    pub fn neighbors(&self, x: Site) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.d).map(move |dir| self.neighbor(x, dir))
    }

    /// Wraparound l1 distance.
    pub fn distance(&self, a: Site, b: Site) -> usize {
        (0..self.d)
            .map(|axis| {
                let (ca, cb) = (self.coord(a, axis), self.coord(b, axis));
                let diff = ca.abs_diff(cb);
                diff.min(self.side - diff)
            })
            .sum()
    }

    /// Wraparound l1 norm ‖x‖.
    pub fn norm(&self, x: Site) -> usize {
        self.distance(x, self.origin())
    }

    /// x + y.
    pub fn translate(&self, x: Site, by: Site) -> Site {
        let idx = (0..self.d)
            .map(|axis| ((self.coord(x, axis) + self.coord(by, axis)) % self.side) * self.strides[axis])
            .sum::<usize>();
        Site(idx as u32)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> {
        (0..self.sites as u32).map(Site)
    }
}

/// Validated model parameters with cached derived constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub rates: Rates,
    pub torus: TorusSpec,
    /// 1 + δ + γ
    pub sum: f64,
    /// (1+δ+γ)/(2dλ)
    pub b: f64,
}

pub fn validate(rates: Rates, d: usize, side: usize) -> Result<Params> {
    rates.validate()?;
    let torus = TorusSpec::new(d, side)?;
    Ok(Params {
        sum: rates.sum(),
        b: rates.b(d),
        rates,
        torus,
    })
}

/// Spin value of a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum State {
    Healthy = 0,
    Semi = 1,
    Fully = 2,
}

impl State {
    pub fn from_u8(v: u8) -> State {
        match v {
            0 => State::Healthy,
            1 => State::Semi,
            2 => State::Fully,
            _ => panic!("invalid spin value {v}"),
        }
    }
}

type SiteSet = HashSet<Site, BuildHasherDefault<DefaultHasher>>;

/// Sparse configuration: the disjoint sets of fully-infected (state 2) and
/// semi-infected (state 1) sites. Every other site is healthy.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Configuration {
    fully: SiteSet,
    semi: SiteSet,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds (C, D); fails if the two sets share a site.
    pub fn from_sets(fully: impl IntoIterator<Item = Site>, semi: impl IntoIterator<Item = Site>) -> Result<Self> {
        let fully: SiteSet = fully.into_iter().collect();
        let semi: SiteSet = semi.into_iter().collect();
        let count = fully.intersection(&semi).count();
        if count > 0 {
            return Err(Error::Overlap { count });
        }
        Ok(Configuration { fully, semi })
    }

    pub fn from_states(states: &[u8]) -> Self {
        let mut c = Configuration::new();
        for (i, &s) in states.iter().enumerate() {
            c.set(Site(i as u32), State::from_u8(s));
        }
        c
    }

    pub fn state(&self, x: Site) -> State {
        if self.fully.contains(&x) {
            State::Fully
        } else if self.semi.contains(&x) {
            State::Semi
        } else {
            State::Healthy
        }
    }

    pub fn set(&mut self, x: Site, s: State) {
        match s {
            State::Healthy => {
                self.fully.remove(&x);
                self.semi.remove(&x);
            }
            State::Semi => {
                self.fully.remove(&x);
                self.semi.insert(x);
            }
            State::Fully => {
                self.semi.remove(&x);
                self.fully.insert(x);
            }
        }
        self.debug_check();
    }

    #[inline]
    fn debug_check(&self) {
        debug_assert!(self.fully.is_disjoint(&self.semi), "fully and semi sets must stay disjoint");
    }

    /// C: fully-infected sites, sorted.
    pub fn fully(&self) -> Vec<Site> {
        let mut v: Vec<Site> = self.fully.iter().copied().collect();
        v.sort_unstable();
        v
    }

    /// D: semi-infected sites, sorted.
    pub fn semi(&self) -> Vec<Site> {
        let mut v: Vec<Site> = self.semi.iter().copied().collect();
        v.sort_unstable();
        v
    }

    /// I = C ∪ D, sorted.
    pub fn infected(&self) -> Vec<Site> {
        let mut v: Vec<Site> = self.fully.iter().chain(&self.semi).copied().collect();
        v.sort_unstable();
        v
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

    pub fn is_empty(&self) -> bool {
        self.fully.is_empty() && self.semi.is_empty()
    }

    /// Dense spin vector over the torus.
    pub fn to_states(&self, torus: &TorusSpec) -> Vec<u8> {
        let mut v = vec![0u8; torus.num_sites()];
        for x in &self.semi {
            v[x.index()] = 1;
        }
        for x in &self.fully {
            v[x.index()] = 2;
        }
        v
    }

    /// The all-fully-infected configuration.
    pub fn all_fully(torus: &TorusSpec) -> Self {
        Configuration {
            fully: torus.sites().collect(),
            semi: SiteSet::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Site>) -> Vec<Site> {
        v.sort();
        v
    }

    #[test]
    fn ring_of_three() {
        let t = TorusSpec::new(1, 3).unwrap();
        let n = sorted(t.neighbors(Site(0)).collect());
        assert_eq!(n, vec![Site(1), Site(2)]);
    }

    #[test]
    fn torus_wrap_in_two_dimensions() {
        let t = TorusSpec::new(2, 4).unwrap();
        let got = sorted(t.neighbors(t.origin()).collect());
        let want = sorted(vec![t.site(&[1, 0]), t.site(&[3, 0]), t.site(&[0, 1]), t.site(&[0, 3])]);
        assert_eq!(got, want);
    }

    #[test]
    fn regular_degree_in_three_dimensions() {
        let t = TorusSpec::new(3, 5).unwrap();
        for x in t.sites() {
            let mut n: Vec<Site> = t.neighbors(x).collect();
            assert_eq!(n.len(), 6);
            n.sort();
            n.dedup();
            assert_eq!(n.len(), 6);
            assert!(n.iter().all(|&y| t.distance(x, y) == 1));
        }
    }

    #[test]
    fn validate_caches_derived_constants() {
        let p = validate(
            Rates {
                lambda: 3.0,
                delta: 1.0,
                gamma: 2.0,
            },
            1,
            3,
        )
        .unwrap();
        assert_eq!(p.sum, 4.0);
        assert!((p.b - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn validate_names_offending_field() {
        let e = validate(
            Rates {
                lambda: 0.0,
                delta: 1.0,
                gamma: 2.0,
            },
            1,
            3,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Parameter { field: "lambda", .. }));
        let e = validate(
            Rates {
                lambda: 1.0,
                delta: -1.0,
                gamma: 2.0,
            },
            1,
            3,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Parameter { field: "delta", .. }));
        let e = validate(
            Rates {
                lambda: 1.0,
                delta: 1.0,
                gamma: 2.0,
            },
            2,
            2,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Parameter { field: "L", .. }));
    }

    #[test]
    fn wraparound_distance() {
        let t = TorusSpec::new(2, 7).unwrap();
        assert_eq!(t.distance(t.site(&[0, 0]), t.site(&[6, 6])), 2);
        assert_eq!(t.distance(t.site(&[1, 2]), t.site(&[4, 2])), 3);
        assert_eq!(t.norm(t.site(&[-3, 3])), 6);
    }

    #[test]
    fn configuration_rejects_overlap() {
        let e = Configuration::from_sets([Site(1), Site(2)], [Site(2)]).unwrap_err();
        assert_eq!(e, Error::Overlap { count: 1 });
    }

    #[test]
    fn configuration_set_moves_between_sets() {
        let mut c = Configuration::from_sets([Site(1)], [Site(2)]).unwrap();
        c.set(Site(2), State::Fully);
        c.set(Site(1), State::Semi);
        assert_eq!(c.fully(), vec![Site(2)]);
        assert_eq!(c.semi(), vec![Site(1)]);
        c.set(Site(2), State::Healthy);
        assert_eq!(c.num_infected(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn neighbor_relation_is_symmetric(d in 1usize..5, side in 3usize..7, raw in any::<u32>()) {
                let t = TorusSpec::new(d, side).unwrap();
                let x = Site(raw % t.num_sites() as u32);
                let n: Vec<Site> = t.neighbors(x).collect();
                prop_assert_eq!(n.len(), 2 * d);
                for y in n {
                    prop_assert!(t.neighbors(y).any(|z| z == x));
                    prop_assert_eq!(t.distance(x, y), 1);
                }
            }

            #[test]
            fn coords_round_trip(d in 1usize..5, side in 3usize..7, raw in any::<u32>()) {
                let t = TorusSpec::new(d, side).unwrap();
                let x = Site(raw % t.num_sites() as u32);
                let c: Vec<i64> = t.coords(x).into_iter().map(|v| v as i64).collect();
                prop_assert_eq!(t.site(&c), x);
            }
        }
    }
}
