//! Lattice offsets modulo coordinate permutations and sign flips.
//!
//! Functions of an offset that are invariant under the hyperoctahedral group
//! are stored once per orbit. An orbit is represented by its sorted
//! (non-increasing) absolute coordinates.
//!
//! Two geometries are supported: the torus of odd side 2R+1 (every offset
//! folds to coordinates in 0..=R) and the l1 ball of radius R in ℤ^d, whose
//! neighbours outside the ball are reported as missing.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    /// Torus of side 2R+1 centred on the origin.
    Torus,
    /// {x ∈ ℤ^d : |x|₁ ≤ R}.
    Ball,
}

/// Budget on the number of orbits of one space.
pub const ORBIT_LIMIT: usize = 2_000_000;

/// Neighbour of an orbit representative, aggregated over the 2d directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    /// Target orbit, or `None` outside a ball.
    pub to: Option<usize>,
    /// How many of the 2d directions lead there.
    pub count: u32,
}

#[derive(Clone, Debug)]
pub struct OrbitSpace {
    d: usize,
    radius: usize,
    geometry: Geometry,
    reps: Vec<Vec<u16>>,
    index: HashMap<Vec<u16>, usize>,
    steps: Vec<Vec<Step>>,
    /// Outside-ball neighbours of each orbit, as representatives.
    outside: Vec<Vec<(Vec<u16>, u32)>>,
}

impl OrbitSpace {
    pub fn new(d: usize, radius: usize, geometry: Geometry) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if radius == 0 {
            return Err(Error::param("R", "must be at least 1"));
        }
        let mut reps = Vec::new();
        let mut cur = Vec::with_capacity(d);
        enumerate(d, radius, geometry, radius, &mut cur, &mut reps)?;
        // origin first, then by l1 norm
        reps.sort_by(|a, b| norm1(a).cmp(&norm1(b)).then_with(|| b.cmp(a)));
        let index: HashMap<Vec<u16>, usize> = reps.iter().cloned().enumerate().map(|(i, r)| (r, i)).collect();
        let mut space = OrbitSpace {
            d,
            radius,
            geometry,
            reps,
            index,
            steps: Vec::new(),
            outside: Vec::new(),
        };
        let (steps, outside) = (0..space.reps.len()).map(|i| space.build_steps(i)).unzip();
        space.steps = steps;
        space.outside = outside;
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    /// Representative (sorted absolute coordinates) of orbit `i`.
    pub fn rep(&self, i: usize) -> &[u16] {
        &self.reps[i]
    }

    pub fn origin(&self) -> usize {
        0
    }

    /// Orbit of the unit vector e₁.
    pub fn e1(&self) -> usize {
        let mut e = vec![0u16; self.d];
        e[0] = 1;
        self.index[&e]
    }

    /// Orbit containing an arbitrary offset, or `None` outside a ball.
    pub fn locate(&self, offset: &[i64]) -> Option<usize> {
        assert_eq!(offset.len(), self.d);
        let mut key: Vec<u16> = offset.iter().map(|&c| self.fold(c)).collect();
        key.sort_unstable_by(|a, b| b.cmp(a));
        self.index.get(&key).copied()
    }

    fn fold(&self, c: i64) -> u16 {
        match self.geometry {
            Geometry::Torus => {
                let side = 2 * self.radius as i64 + 1;
                let m = c.rem_euclid(side);
                m.min(side - m) as u16
            }
            Geometry::Ball => c.unsigned_abs().min(u16::MAX as u64) as u16,
        }
    }

    /// l1 norm of the representative (wraparound norm on the torus).
    pub fn norm(&self, i: usize) -> usize {
        norm1(&self.reps[i])
    }

    /// Number of lattice offsets in orbit `i`.
    pub fn orbit_size(&self, i: usize) -> f64 {
        let rep = &self.reps[i];
        // d! / Π(multiplicity!) permutations, 2 signs per nonzero coordinate
        let mut size = factorial(self.d);
        let mut j = 0;
        while j < rep.len() {
            let mut k = j;
            while k < rep.len() && rep[k] == rep[j] {
                k += 1;
            }
            size /= factorial(k - j);
            j = k;
        }
        size * 2f64.powi(rep.iter().filter(|&&c| c > 0).count() as i32)
    }

    /// Neighbours of orbit `i`, aggregated by target orbit. Counts sum to 2d.
    pub fn steps(&self, i: usize) -> &[Step] {
        &self.steps[i]
    }

    /// Outside-ball neighbours of orbit `i` with their direction counts.
    pub fn outside(&self, i: usize) -> &[(Vec<u16>, u32)] {
        &self.outside[i]
    }

    /// True when every neighbour of orbit `i` lies in the space without
    /// wrapping around the torus.
    pub fn is_interior(&self, i: usize) -> bool {
        self.norm(i) < self.radius && self.reps[i].iter().all(|&c| (c as usize) < self.radius)
    }

    #[allow(clippy::type_complexity)]
    fn build_steps(&self, i: usize) -> (Vec<Step>, Vec<(Vec<u16>, u32)>) {
        let rep = &self.reps[i];
        let mut inside: Vec<Step> = Vec::new();
        let mut outside: Vec<(Vec<u16>, u32)> = Vec::new();
        let signed: Vec<i64> = rep.iter().map(|&c| c as i64).collect();
        for axis in 0..self.d {
            for delta in [1i64, -1] {
                let mut y = signed.clone();
                y[axis] += delta;
                match self.locate(&y) {
                    Some(j) => match inside.iter_mut().find(|s| s.to == Some(j)) {
                        Some(s) => s.count += 1,
                        None => inside.push(Step { to: Some(j), count: 1 }),
                    },
                    None => {
                        let mut key: Vec<u16> = y.iter().map(|c| c.unsigned_abs() as u16).collect();
                        key.sort_unstable_by(|a, b| b.cmp(a));
                        match outside.iter_mut().find(|(k, _)| *k == key) {
                            Some((_, c)) => *c += 1,
                            None => outside.push((key, 1)),
                        }
                    }
                }
            }
        }
        let missing: u32 = outside.iter().map(|(_, c)| c).sum();
        if missing > 0 {
            inside.push(Step { to: None, count: missing });
        }
        (inside, outside)
    }
}

fn norm1(rep: &[u16]) -> usize {
    rep.iter().map(|&c| c as usize).sum()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Non-increasing sequences of length d; coordinates ≤ R on the torus, sum
/// ≤ R in the ball.
fn enumerate(d: usize, r: usize, geometry: Geometry, max: usize, cur: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) -> Result<()> {
    if cur.len() == d {
        if out.len() >= ORBIT_LIMIT {
            return Err(Error::Size {
                states: out.len() + 1,
                limit: ORBIT_LIMIT,
            });
        }
        out.push(cur.clone());
        return Ok(());
    }
    let budget = match geometry {
        Geometry::Torus => r,
        Geometry::Ball => r - norm1(cur),
    };
    for c in 0..=max.min(budget) {
        cur.push(c as u16);
        enumerate(d, r, geometry, c, cur, out)?;
        cur.pop();
    }
    Ok(())
}
