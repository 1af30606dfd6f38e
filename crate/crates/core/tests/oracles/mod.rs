//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use twostage::{Rates, Site, TorusSpec};

/// Probability that the two-type branching process started from
/// `(zeta, g)` reaches a total of `cap` individuals, by plain value iteration
/// on the embedded jump chain.
pub fn branching_reach(rates: &Rates, cap: usize, zeta: usize, g: usize) -> f64 {
    let idx = |z: usize, g: usize| z * (cap + 1) + g;
    let mut h = vec![0.0f64; (cap + 1) * (cap + 1)];
    for z in 0..=cap {
        h[idx(z, cap - z)] = 1.0;
    }
    loop {
        let mut change: f64 = 0.0;
        for total in (1..cap).rev() {
            for z in 0..=total {
                let g = total - z;
                let zf = z as f64;
                let gf = g as f64;
                let rate = zf * (1.0 + rates.delta + rates.lambda) + gf * (1.0 + rates.gamma);
                let mut v = 0.0;
                if z > 0 {
                    v += zf * h[idx(z - 1, g)];
                    v += zf * rates.delta * h[idx(z - 1, g + 1)];
                    v += zf * rates.lambda * h[idx(z, g + 1)];
                }
                if g > 0 {
                    v += gf * h[idx(z, g - 1)];
                    v += gf * rates.gamma * h[idx(z + 1, g - 1)];
                }
                let new = v / rate;
                change = change.max((new - h[idx(z, g)]).abs());
                h[idx(z, g)] = new;
            }
        }
        if change < 1e-15 {
            return h[idx(zeta, g)];
        }
    }
}

/// e^{−x} I₀(x) from the integral (1/π)∫₀^π e^{x(cos θ − 1)} dθ, by the
/// trapezoid rule, which is spectrally accurate for periodic integrands.
pub fn scaled_i0(x: f64) -> f64 {
    let n = 4096;
    let h = std::f64::consts::PI / n as f64;
    let mut s = 0.5 * (1.0 + (-2.0 * x).exp());
    for k in 1..n {
        s += (x * ((k as f64 * h).cos() - 1.0)).exp();
    }
    s * h / std::f64::consts::PI
}

/// Return probability of simple random walk on ℤ^d, d ≥ 3, from
/// 1 − 1/G(0) with G(0) = ∫₀^∞ (e^{−t/d} I₀(t/d))^d dt.
pub fn srw_return_probability(d: usize) -> f64 {
    let df = d as f64;
    let f = |t: f64| scaled_i0(t / df).powi(d as i32);
    // Gauss–Legendre, 8 nodes, on geometric panels
    const X: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let panel = |a: f64, b: f64| {
        let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
        r * X.iter().zip(&W).map(|(x, w)| w * (f(m - r * x) + f(m + r * x))).sum::<f64>()
    };
    let top = 4000.0 * df;
    let mut g = panel(0.0, 0.25);
    let mut a = 0.25;
    while a < top {
        let b = (a * 1.15).min(top);
        g += panel(a, b);
        a = b;
    }
    // tail from e^{−x}I₀(x) ≈ (2πx)^{−1/2}(1 + 1/(8x)), x = t/d
    let c = (df / (2.0 * std::f64::consts::PI)).powf(df / 2.0);
    let p = df / 2.0;
    let tail0 = c * top.powf(1.0 - p) / (p - 1.0);
    let tail1 = c * (df * df / 8.0) * top.powf(-p) / p;
    g += tail0 + tail1;
    1.0 - 1.0 / g
}

/// The second-moment generator applied to `f` on the full torus of side
/// 2R+1, row by row from the rate table. `f[x][i]` is indexed by site and
/// component 0, 1, 2.
pub fn full_g_apply(torus: &TorusSpec, rates: &Rates, f: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let d = torus.dim() as f64;
    let s = rates.sum();
    let o = torus.origin();
    let e1 = f[torus.unit(0).index()];
    torus
        .sites()
        .map(|x| {
            let sum = |i: usize| torus.neighbors(x).map(|y| f[y.index()][i]).sum::<f64>();
            let v = f[x.index()];
            if x == o {
                [
                    -v[0] + 2.0 * v[1] + v[2] / rates.gamma,
                    -s * v[1] + s * e1[0],
                    -s * v[2] + 2.0 * s * e1[1] + s * s / (2.0 * d * rates.lambda) * v[0],
                ]
            } else {
                [
                    -2.0 * v[0] + 2.0 * v[1],
                    -(2.0 + rates.delta + rates.gamma) * v[1] + v[2] + s / (2.0 * d) * sum(0),
                    -2.0 * s * v[2] + s / d * sum(1),
                ]
            }
        })
        .collect()
}

/// Signed offset of `x` from the origin with coordinates in (−L/2, L/2].
pub fn offset(torus: &TorusSpec, x: Site) -> Vec<i64> {
    let l = torus.side() as i64;
    torus
        .coords(x)
        .iter()
        .map(|&c| {
            let c = c as i64;
            if c > l / 2 {
                c - l
            } else {
                c
            }
        })
        .collect()
}
