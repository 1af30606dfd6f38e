//! Poisson-mark graphical representation.
//!
//! Each site carries three independent mark streams: Δ (rate 1) kills any
//! infected state, ∗ (rate δ) kills state 1 only, ⋄ (rate γ) promotes 1 → 2.
//! Each directed edge carries a → stream (rate λ): an arrow from a state-2
//! site turns a healthy target into state 1. Evolving several initial pairs
//! through the same marks couples them on one sample.
//!
//! Streams are materialized lazily, each from its own counter-based random
//! stream keyed by element id, so only sites the infection touches cost
//! anything and the marks never depend on evaluation order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, Rates, Site, State, TorusSpec};
use crate::rng;

/// Mark type. The discriminant orders simultaneous marks at one site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MarkKind {
    Death,
    Star,
    Diamond,
    /// Arrow along direction `dir` (see [`TorusSpec::neighbor`]).
    Arrow(u8),
}

impl MarkKind {
    fn code(self) -> usize {
        match self {
            MarkKind::Death => 0,
            MarkKind::Star => 1,
            MarkKind::Diamond => 2,
            MarkKind::Arrow(dir) => 3 + dir as usize,
        }
    }
}

/// One explicit mark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub time: f64,
    pub site: Site,
    pub kind: MarkKind,
}

#[derive(Clone, Debug)]
enum Source {
    Sampled { seed: u64 },
    Explicit(HashMap<(Site, MarkKind), Vec<f64>>),
}

/// Mark streams on `[0, horizon]`, either sampled from a seed or given
/// explicitly.
#[derive(Clone, Debug)]
pub struct GraphicalTimeline {
    torus: TorusSpec,
    rates: Rates,
    horizon: f64,
    source: Source,
}

pub fn sample_timeline(torus: &TorusSpec, rates: Rates, horizon: f64, seed: u64) -> Result<GraphicalTimeline> {
    if !(horizon > 0.0) {
        return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
    }
    Ok(GraphicalTimeline {
        torus: torus.clone(),
        rates,
        horizon,
        source: Source::Sampled { seed },
    })
}

impl GraphicalTimeline {
    /// Timeline holding exactly `marks`; every other stream is empty. Marks
    /// outside `(0, horizon]` are dropped.
    pub fn from_marks(torus: &TorusSpec, horizon: f64, marks: &[Mark]) -> Self {
        let mut lists: HashMap<(Site, MarkKind), Vec<f64>> = HashMap::new();
        for m in marks.iter().filter(|m| m.time > 0.0 && m.time <= horizon) {
            lists.entry((m.site, m.kind)).or_default().push(m.time);
        }
        for v in lists.values_mut() {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        GraphicalTimeline {
            torus: torus.clone(),
            rates: Rates {
                lambda: 0.0,
                delta: 0.0,
                gamma: 0.0,
            },
            horizon,
            source: Source::Explicit(lists),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn torus(&self) -> &TorusSpec {
        &self.torus
    }

    fn rate(&self, kind: MarkKind) -> f64 {
        match kind {
            MarkKind::Death => 1.0,
            MarkKind::Star => self.rates.delta,
            MarkKind::Diamond => self.rates.gamma,
            MarkKind::Arrow(_) => self.rates.lambda,
        }
    }

    fn element_id(&self, site: Site, kind: MarkKind) -> u64 {
        let per_site = 3 + self.torus.degree();
        (site.index() * per_site + kind.code()) as u64
    }

    /// Sorted mark times of one stream (a site stream for Δ/∗/⋄, the
    /// directed edge `site → neighbor(site, dir)` for arrows).
    pub fn marks(&self, site: Site, kind: MarkKind) -> Vec<f64> {
        match &self.source {
            Source::Explicit(lists) => lists.get(&(site, kind)).cloned().unwrap_or_default(),
            Source::Sampled { seed } => {
                let rate = self.rate(kind);
                let mut out = Vec::new();
                if rate <= 0.0 {
                    return out;
                }
                let mut r = rng::stream(*seed, self.element_id(site, kind));
                let mut t = 0.0;
                loop {
                    t += rng::exp_time(&mut r, rate);
                    if t > self.horizon {
                        return out;
                    }
                    out.push(t);
                }
            }
        }
    }

    /// Every mark of one site and its outgoing edges.
    pub fn site_marks(&self, site: Site) -> Vec<Mark> {
        let mut out = Vec::new();
        for kind in self.kinds() {
            out.extend(self.marks(site, kind).into_iter().map(|time| Mark { time, site, kind }));
        }
        out
    }

    fn kinds(&self) -> impl Iterator<Item = MarkKind> {
        let deg = self.torus.degree() as u8;
        [MarkKind::Death, MarkKind::Star, MarkKind::Diamond]
            .into_iter()
            .chain((0..deg).map(MarkKind::Arrow))
    }
}

/// Heap entry; ordered by (time, site, kind) ascending.
#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    site: Site,
    kind: MarkKind,
    stream: usize,
    index: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.site.cmp(&self.site))
            .then_with(|| other.kind.cmp(&self.kind))
    }
}

/// Piecewise-constant evolution of every initial pair on one timeline.
#[derive(Clone, Debug)]
pub struct CoupledTrajectory {
    horizon: f64,
    initial: Vec<Configuration>,
    /// Per pair: (time, site, new state), in time order.
    changes: Vec<Vec<(f64, Site, State)>>,
}

/// Sweeps all marks in time order and applies them to each pair.
pub fn evolve_coupled(timeline: &GraphicalTimeline, initials: &[(Vec<Site>, Vec<Site>)]) -> Result<CoupledTrajectory> {
    let torus = timeline.torus();
    let mut configs = Vec::with_capacity(initials.len());
    for (c, d) in initials {
        configs.push(Configuration::from_sets(c.iter().copied(), d.iter().copied())?);
    }
    let mut current: Vec<HashMap<Site, State>> = configs
        .iter()
        .map(|cfg| {
            cfg.fully()
                .into_iter()
                .map(|x| (x, State::Fully))
                .chain(cfg.semi().into_iter().map(|x| (x, State::Semi)))
                .collect()
        })
        .collect();
    let mut changes = vec![Vec::new(); configs.len()];

    let mut streams: Vec<Vec<f64>> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut touched = HashSet::new();
    let mut touch = |x: Site, after: f64, streams: &mut Vec<Vec<f64>>, heap: &mut BinaryHeap<Pending>| {
        if !touched.insert(x) {
            return;
        }
        for kind in timeline.kinds() {
            let list = timeline.marks(x, kind);
            let index = list.partition_point(|&t| t <= after);
            if index < list.len() {
                heap.push(Pending {
                    time: list[index],
                    site: x,
                    kind,
                    stream: streams.len(),
                    index,
                });
            }
            streams.push(list);
        }
    };
    let mut start: Vec<Site> = current.iter().flat_map(|m| m.keys().copied()).collect();
    start.sort_unstable();
    for x in start {
        touch(x, 0.0, &mut streams, &mut heap);
    }

    while let Some(p) = heap.pop() {
        let next = p.index + 1;
        if next < streams[p.stream].len() {
            heap.push(Pending {
                time: streams[p.stream][next],
                index: next,
                ..p
            });
        }
        let mut infected_target = None;
        for (pair, state) in current.iter_mut().enumerate() {
            let here = state.get(&p.site).copied().unwrap_or(State::Healthy);
            let update = match (p.kind, here) {
                (_, State::Healthy) => None,
                (MarkKind::Death, _) => Some((p.site, State::Healthy)),
                (MarkKind::Star, State::Semi) => Some((p.site, State::Healthy)),
                (MarkKind::Diamond, State::Semi) => Some((p.site, State::Fully)),
                (MarkKind::Arrow(dir), State::Fully) => {
                    let y = torus.neighbor(p.site, dir as usize);
                    if state.contains_key(&y) {
                        None
                    } else {
                        infected_target = Some(y);
                        Some((y, State::Semi))
                    }
                }
                _ => None,
            };
            if let Some((x, s)) = update {
                if s == State::Healthy {
                    state.remove(&x);
                } else {
                    state.insert(x, s);
                }
                changes[pair].push((p.time, x, s));
            }
        }
        if let Some(y) = infected_target {
            touch(y, p.time, &mut streams, &mut heap);
        }
    }

    Ok(CoupledTrajectory {
        horizon: timeline.horizon(),
        initial: configs,
        changes,
    })
}

impl CoupledTrajectory {
    pub fn pairs(&self) -> usize {
        self.initial.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Configuration of `pair` at time `t` (after every mark at or before `t`).
    pub fn config_at(&self, pair: usize, t: f64) -> Configuration {
        let mut cfg = self.initial[pair].clone();
        for &(time, x, s) in &self.changes[pair] {
            if time > t {
                break;
            }
            cfg.set(x, s);
        }
        cfg
    }

    /// (|C_t|, |D_t|) of `pair` at each time in `times`.
    pub fn counts_at(&self, pair: usize, times: &[f64]) -> Vec<(usize, usize)> {
        let mut f = self.initial[pair].num_fully() as i64;
        let mut s = self.initial[pair].num_semi() as i64;
        let mut state: HashMap<Site, State> = self.initial[pair]
            .fully()
            .into_iter()
            .map(|x| (x, State::Fully))
            .chain(self.initial[pair].semi().into_iter().map(|x| (x, State::Semi)))
            .collect();
        let mut it = self.changes[pair].iter().peekable();
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            while let Some(&&(time, x, new)) = it.peek() {
                if time > t {
                    break;
                }
                let old = state.get(&x).copied().unwrap_or(State::Healthy);
                match old {
                    State::Fully => f -= 1,
                    State::Semi => s -= 1,
                    State::Healthy => {}
                }
                match new {
                    State::Fully => f += 1,
                    State::Semi => s += 1,
                    State::Healthy => {}
                }
                if new == State::Healthy {
                    state.remove(&x);
                } else {
                    state.insert(x, new);
                }
                it.next();
            }
            out.push((f as usize, s as usize));
        }
        out
    }

    /// 1 if `pair` still has an infected site at `t`.
    pub fn survival_indicator(&self, pair: usize, t: f64) -> u8 {
        let (f, s) = self.counts_at(pair, &[t])[0];
        u8::from(f + s > 0)
    }
}
