//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Run with `--nocapture` to see the lines.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;

use twostage::bounds::{bracket_critical, f_constants, lower_bound_337, scaled_gap, upper_bound_kesten, BracketConfig};
use twostage::branching::{
    estimate_branching_survival, single_survival, survival_closed_form, truncated_survival_sweep, BranchingState, BranchingStop,
};
use twostage::graphical::{evolve_coupled, sample_timeline};
use twostage::hitting::{h_lambda, kesten, srw_table, theta_hit_prob, ThetaVariant};
use twostage::invariant::{
    alpha_tilde, b_tilde, dual_pi, estimate_pi, family_sets, mu, occupancy_lower_bound, product_gap, promotion_probability, sample_nu,
    six_bounds, GapReport, NuSampler, NuSamples, ProductPrediction,
};
use twostage::linear::{
    build_g, build_k, eigen_residual, first_moment_estimates, integrate_moments, second_moment_estimate, slot, torus_space, MomentVector,
};
use twostage::markov::{duality_sides, estimate_duality_sides, ProcessKind, Simulator, Stop};
use twostage::stats::ks_two_sample;
use twostage::{rng, Configuration, Rates, Site, TorusSpec};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn rates(lambda: f64) -> Rates {
    Rates {
        lambda,
        delta: 1.0,
        gamma: 2.0,
    }
}

fn branching() -> Verdict {
    let start = Instant::now();
    let r = rates(3.0);
    let expected = [((1, 0), 1.0 / 3.0), ((0, 1), 2.0 / 9.0), ((1, 1), 13.0 / 27.0)];
    let table = truncated_survival_sweep(&r, 64, 1e-9).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, ((z, g), want)) in expected.into_iter().enumerate() {
        let state = BranchingState::new(z, g);
        let closed = survival_closed_form(z, g, &r);
        let mc = estimate_branching_survival(state, &r, BranchingStop::cap(10_000), 100_000, 100 + k as u64).unwrap();
        let b = table.bracket(state).unwrap();
        let reach = oracles::branching_reach(&r, 60, z as usize, g as usize);
        let this = (closed - want).abs() < 1e-12
            && mc.within(want, 3.0)
            && want >= b.lower - 1e-3
            && want <= b.upper + 1e-3
            && (reach - want).abs() < 1e-3;
        ok &= this;
        notes.push(format!(
            "({z},{g}) mc {:.4}+-{:.4} trunc [{:.6},{:.6}]",
            mc.point, mc.std_error, b.lower, b.upper
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    verdict(ok, format!("{} in {:.1}s", notes.join(", "), elapsed.as_secs_f64()))
}

fn first_step_grid() -> Verdict {
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let delta = 0.1 + 0.3 * i as f64;
            let gamma = 0.2 + 0.5 * j as f64;
            let s = 1.0 + delta + gamma;
            let r = Rates {
                lambda: 2.0 * s / gamma,
                delta,
                gamma,
            };
            let (p10, p01) = single_survival(&r);
            let p11 = survival_closed_form(1, 1, &r);
            let out = 1.0 + delta + r.lambda;
            for v in [
                p10 - (r.lambda / out * p11 + delta / out * p01),
                p01 - gamma / (1.0 + gamma) * p10,
                p11 - (1.0 - (1.0 - p10) * (1.0 - p01)),
                p10 * (r.lambda * gamma * (1.0 - p10) - s),
            ] {
                worst = worst.max(v.abs());
            }
        }
    }
    verdict(worst <= 1e-12, format!("largest residual {worst:e} over 100 points"))
}

fn random_sets(torus: &TorusSpec, g: &mut rng::Rng) -> [Vec<Site>; 4] {
    let mut sets: [Vec<Site>; 4] = Default::default();
    for x in torus.sites() {
        let ab = g.random_range(0..3);
        if ab < 2 {
            sets[ab].push(x);
        }
        let cd = g.random_range(0..3);
        if cd < 2 {
            sets[2 + cd].push(x);
        }
    }
    sets
}

fn duality() -> Verdict {
    let start = Instant::now();
    let ring = TorusSpec::new(1, 3).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let mut g = rng::stream(31, i);
        let r = Rates {
            lambda: g.random_range(0.2..3.0),
            delta: g.random_range(0.0..2.0),
            gamma: g.random_range(0.2..3.0),
        };
        let s = random_sets(&ring, &mut g);
        let t = g.random_range(0.05..2.0);
        let (l, rr) = duality_sides(&ring, &r, &s[0], &s[1], &s[2], &s[3], t).unwrap();
        worst = worst.max((l - rr).abs());
    }
    // a few small-set instances on a torus too large for the exact oracle
    let torus = TorusSpec::new(2, 5).unwrap();
    let r = rates(0.6);
    let mut worst_z: f64 = 0.0;
    for i in 0..4 {
        let mut g = rng::stream(32, i);
        let mut pick = || Site(g.random_range(0..25));
        let (a, b, c, d) = (pick(), pick(), pick(), pick());
        let sets = [
            vec![a],
            if b == a { vec![] } else { vec![b] },
            vec![c],
            if d == c { vec![] } else { vec![d] },
        ];
        let (l, rr) = estimate_duality_sides(&torus, &r, &sets[0], &sets[1], &sets[2], &sets[3], 1.0, 40_000, 500 + i).unwrap();
        let se = l.combined_se(&rr);
        worst_z = worst_z.max(if se > 0.0 { (l.point - rr.point).abs() / se } else { 0.0 });
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-10 && worst_z <= 3.0 && elapsed < Duration::from_secs(300),
        format!("ring max {worst:e}, torus max {worst_z:.2} SE, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn graphical_vs_direct() -> Verdict {
    let torus = TorusSpec::new(2, 7).unwrap();
    let r = rates(0.5);
    let o = torus.origin();
    let n = 10_000u64;
    let graphical: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|s| {
            let tl = sample_timeline(&torus, r, 1.0, s).unwrap();
            let (f, semi) = evolve_coupled(&tl, &[(vec![o], vec![])]).unwrap().counts_at(0, &[1.0])[0];
            (f + semi) as f64
        })
        .collect();
    let start = Configuration::from_sets([o], []).unwrap();
    let direct: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || Simulator::new(ProcessKind::TwoStage, &torus, r),
            |sim, s| {
                sim.reset(&start);
                sim.advance_to(&mut rng::stream(77, s), 1.0, None);
                sim.num_infected() as f64
            },
        )
        .collect();
    let ks = ks_two_sample(&graphical, &direct);

    // four coupled pairs per sample, nested sets drawn from disjoint A, B
    let times = [0.25, 0.5, 1.0, 2.0];
    let violations: usize = (0..100_000u64)
        .into_par_iter()
        .map(|s| {
            let mut g = rng::stream(78, s);
            let (mut cp, mut cm, mut dp, mut dm) = (vec![], vec![], vec![], vec![]);
            for x in torus.sites().filter(|x| torus.distance(*x, o) <= 2) {
                let (into_p, into_m) = (g.random_bool(0.5), g.random_bool(0.5));
                let (p, m) = if g.random_bool(0.5) {
                    (&mut cp, &mut cm)
                } else {
                    (&mut dp, &mut dm)
                };
                if into_p {
                    p.push(x);
                }
                if into_m {
                    m.push(x);
                }
            }
            let union = |a: &[Site], b: &[Site]| {
                let mut u: Vec<Site> = a.iter().chain(b).copied().collect();
                u.sort();
                u.dedup();
                u
            };
            let inter = |a: &[Site], b: &[Site]| a.iter().filter(|x| b.contains(x)).copied().collect::<Vec<_>>();
            let pairs = [
                (cp.clone(), dp.clone()),
                (cm.clone(), dm.clone()),
                (union(&cp, &cm), union(&dp, &dm)),
                (inter(&cp, &cm), inter(&dp, &dm)),
            ];
            let tl = sample_timeline(&torus, r, 2.0, 1_000_000 + s).unwrap();
            let tr = evolve_coupled(&tl, &pairs).unwrap();
            times
                .iter()
                .filter(|&&t| {
                    let h = |i| tr.survival_indicator(i, t) as u32;
                    h(2) + h(3) > h(0) + h(1)
                })
                .count()
        })
        .sum();
    verdict(
        ks.p_value > 0.01 && violations == 0,
        format!(
            "KS D {:.4} p {:.3}, {violations} submodularity violations",
            ks.statistic, ks.p_value
        ),
    )
}

fn first_moments() -> Verdict {
    let torus = TorusSpec::new(2, 11).unwrap();
    let r = rates(2.0).scaled(2);
    let est = first_moment_estimates(&torus, &r, &[0.5, 1.0, 2.0], 100_000, 5).unwrap();
    let ok = est.iter().all(|(z, g)| z.within(1.0, 3.0) && g.within(1.0, 3.0));
    let worst = est
        .iter()
        .flat_map(|(z, g)| [z, g])
        .map(|e| (e.point - 1.0).abs() / e.std_error)
        .fold(0.0, f64::max);
    verdict(ok, format!("largest deviation {worst:.2} SE"))
}

fn second_moments() -> Verdict {
    let mut worst: f64 = 0.0;
    for (d, radius, lambda) in [(2, 5, 2.0), (3, 3, 1.0), (10, 2, 3.0)] {
        let r = rates(lambda).scaled(d);
        let space = torus_space(d, radius).unwrap();
        let out = build_g(&space, &r).unwrap().apply(&MomentVector::ones(&space).values);
        for (i, v) in out.iter().enumerate() {
            let want = if i == slot(0, 1) {
                1.0 + 1.0 / r.gamma
            } else if i == slot(0, 3) {
                r.sum() * (1.0 + r.sum() / (2.0 * d as f64 * r.lambda))
            } else {
                0.0
            };
            worst = worst.max((v - want).abs());
        }
    }
    let r = rates(2.0).scaled(2);
    let space = torus_space(2, 5).unwrap();
    let g = build_g(&space, &r).unwrap();
    let ode = integrate_moments(&g, &MomentVector::ones(&space), 1.0).unwrap().moments.get(0, 1);
    let mc = second_moment_estimate(&TorusSpec::new(2, 11).unwrap(), &r, 1.0, 100_000, 6).unwrap();
    verdict(
        worst <= 1e-12 && mc.within(ode, 3.0),
        format!(
            "G on ones off by {worst:e}; E zeta^2 at t=1 {ode:.5} vs {:.5}+-{:.5}",
            mc.point, mc.std_error
        ),
    )
}

fn eigen_identity() -> Verdict {
    let r = rates(3.0).scaled(10);
    let mut lines = Vec::new();
    let mut ok = false;
    for variant in [ThetaVariant::LambdaFree, ThetaVariant::WithLambda] {
        let table = theta_hit_prob(10, &r, 4, variant).unwrap();
        let h = h_lambda(table.get(0, 2), table.get(table.space.e1(), 2), &r, 10);
        let k = build_k(&table, h, &r).unwrap();
        let res = eigen_residual(&build_g(&table.space, &r).unwrap(), &k);
        let origin = res.origin.iter().copied().fold(0.0, f64::max);
        if variant == ThetaVariant::LambdaFree {
            ok = res.interior <= 1e-6 && origin <= 1e-10;
        }
        lines.push(format!("{variant:?}: interior {:.2e} origin {:.2e}", res.interior, origin));
    }
    verdict(ok, lines.join("; "))
}

fn hitting() -> Verdict {
    let v3 = srw_table(3, 40).unwrap().return_probability();
    let oracle = oracles::srw_return_probability(3);
    let mut scaled = Vec::new();
    for d in 5..=15 {
        let v = srw_table(d, 16).unwrap().return_probability();
        scaled.push((d as f64).powi(3) * (v - kesten(d)).abs());
    }
    let bound = scaled.iter().copied().fold(0.0, f64::max);
    let mut dominated = true;
    for (d, radius) in [(4, 10), (6, 8), (10, 4)] {
        let t = theta_hit_prob(d, &rates(3.0).scaled(d), radius, ThetaVariant::LambdaFree).unwrap();
        let s = srw_table(d, radius).unwrap();
        dominated &= (0..t.space.len()).all(|o| t.get(o, 1) <= s.value[o] + 1e-12);
    }
    verdict(
        (v3 - 0.3405).abs() <= 1e-3 && (oracle - 0.3405).abs() <= 1e-3 && bound <= 5.0 && dominated,
        format!("d=3 {v3:.6} (integral {oracle:.6}); max d^3 gap {bound:.3}; Gamma <= SRW: {dominated}"),
    )
}

fn bounds_pipeline() -> Verdict {
    let start = Instant::now();
    let r = rates(1.0);
    let lower10 = lower_bound_337(10, &r).unwrap();
    // direct plug-in
    let plug = 4.0 / 40.0 * 5.0 / (1.0 + (1.0 - 1.5 / 20.0) * 4.0);
    let upper10 = upper_bound_kesten(10, &r).unwrap();
    let mut ordered = true;
    for d in 3..=10_000 {
        if let (Ok(lo), Ok(hi)) = (lower_bound_337(d, &r), upper_bound_kesten(d, &r)) {
            ordered &= lo < hi;
        }
    }
    let (f1, f2) = f_constants(&r);
    let d = 10_000;
    let gl = scaled_gap(d, &r, lower_bound_337(d, &r).unwrap());
    let gu = scaled_gap(d, &r, upper_bound_kesten(d, &r).unwrap());
    let (g1, g2) = f_constants(&Rates {
        lambda: 1.0,
        delta: 1.0,
        gamma: 1000.0,
    });
    let elapsed = start.elapsed();
    let ok = (lower10 - plug).abs() < 1e-9
        && (lower10 - 0.106383).abs() < 5e-7
        && (upper10 - 0.11976).abs() < 5e-6
        && ordered
        && (f1 - 1.2).abs() < 1e-12
        && (gl - f1).abs() < 1e-3
        && (gu - f2).abs() < 1e-3
        && (g1 - 0.5).abs() <= 0.005
        && (g2 - 1.0).abs() <= 0.01
        && elapsed < Duration::from_secs(1);
    verdict(
        ok,
        format!(
            "lower(10) {lower10:.9}, upper(10) {upper10:.6}, gaps at 1e4 {gl:.5}/{gu:.5} vs {f1}/{f2}, gamma=1e3 ({g1:.4}, {g2:.4}), {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn critical_bracket() -> Verdict {
    let start = Instant::now();
    let r = rates(1.0);
    let torus = TorusSpec::new(10, 3).unwrap();
    let grid: Vec<f64> = (0..10).map(|k| 0.07 + 0.01 * k as f64).collect();
    let cfg = BracketConfig {
        replicas: 2000,
        seed: 10,
        ..Default::default()
    };
    let b = bracket_critical(&torus, &r, &grid, cfg).unwrap();
    let widen = 2.0 * b.step();
    let (lo, hi) = (b.lo - widen, b.hi + widen);
    let (lower, upper) = (lower_bound_337(10, &r).unwrap(), upper_bound_kesten(10, &r).unwrap());
    let ok = lo <= upper && hi >= lower && start.elapsed() < Duration::from_secs(7200);
    verdict(
        ok,
        format!(
            "survival crosses 0.02 in [{:.3}, {:.3}], widened [{lo:.3}, {hi:.3}] vs [{lower:.4}, {upper:.4}] in {:.1}s",
            b.lo,
            b.hi,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn sampler(seed: u64) -> NuSampler {
    NuSampler {
        burn_in: 20.0,
        samples: 20,
        thinning: 0.5,
        chains: 32,
        seed,
    }
}

const SIZES: [(usize, usize); 3] = [(1, 0), (0, 1), (1, 1)];

fn gaps(samples: &NuSamples) -> Vec<GapReport> {
    SIZES.iter().map(|&(m, n)| product_gap(samples, m, n).unwrap()).collect()
}

fn theorem_trend(small: &NuSamples, large: &NuSamples) -> Verdict {
    let r = rates(8.0);
    let law = ProductPrediction::new(&r).unwrap();
    let law_ok = (law.p0 - 0.25).abs() < 1e-12 && (law.p1 - 0.25).abs() < 1e-12 && (law.p2 - 0.5).abs() < 1e-12;
    let (g4, g8) = (gaps(small), gaps(large));
    let trend = g4.iter().zip(&g8).all(|(a, b)| b.max_gap < a.max_gap);
    let mut worst_z: f64 = 0.0;
    let mut sandwich = true;
    for (samples, reports) in [(small, &g4), (large, &g8)] {
        let torus = samples.torus();
        for (k, rep) in reports.iter().enumerate() {
            for (j, row) in rep.rows.iter().enumerate() {
                let q = family_sets(torus, row.family, rep.m, rep.n).unwrap();
                let dual = dual_pi(
                    &q,
                    torus,
                    &r,
                    Stop::capped(10.0, 40),
                    20_000,
                    rng::derive(40 + torus.dim() as u64, (k * 8 + j) as u64),
                )
                .unwrap();
                worst_z = worst_z.max((row.estimate.point - dual.point).abs() / row.estimate.combined_se(&dual));
                // 1 − π is at most the branching survival at the unscaled rate
                // and at least the composite bound
                let survive = 1.0 - row.estimate.point;
                let upper = survival_closed_form(rep.n as u64, rep.m as u64, &r);
                sandwich &= survive <= upper + 3.0 * row.estimate.std_error;
                for big_m in [3, 5, 7] {
                    if big_m > rep.n + rep.m && 2 * torus.dim() > big_m {
                        let size = mu(big_m, promotion_probability(&r));
                        let bt = b_tilde(samples, size).unwrap().estimate;
                        if let Some(c) = six_bounds(big_m, rep.n, rep.m, torus.dim(), &r, Some(bt)).unwrap().composite {
                            sandwich &= c <= survive + 3.0 * (row.estimate.std_error + bt.std_error);
                        }
                    }
                }
            }
        }
    }
    let fmt = |g: &[GapReport]| g.iter().map(|x| format!("{:.4}", x.max_gap)).collect::<Vec<_>>().join("/");
    verdict(
        law_ok && trend && worst_z <= 3.0 && sandwich,
        format!(
            "max gaps d=4 {} d=8 {}; dual vs direct {worst_z:.2} SE; sandwich {sandwich}; gates {}/{}",
            fmt(&g4),
            fmt(&g8),
            small.gate.passed,
            large.gate.passed
        ),
    )
}

fn six_pieces(large: &NuSamples) -> Verdict {
    let r = rates(8.0);
    let p = promotion_probability(&r);
    let direct = (-2.0f64).exp() * (1.0 - (-2.0f64).exp());
    let alphas: Vec<f64> = [100, 1000, 10_000].iter().map(|&m| alpha_tilde(m, p)).collect();
    let bound = occupancy_lower_bound(1, &r).unwrap();
    let occ = large.occupancy();
    // one site of a translation-invariant sample
    let single = estimate_pi(
        large,
        &twostage::invariant::PiQuery::new(vec![], vec![large.torus().origin()]).unwrap(),
    );
    let ok = (p - direct).abs() < 1e-15
        // the quoted six digits are a truncation
        && (p * 1e6).floor() == 117_019.0
        && mu(100, p) == 6
        && alphas.windows(2).all(|w| w[0] <= w[1])
        && alphas[2] > 1.0 - 1e-9
        && (bound - 0.25).abs() < 1e-12
        && bound <= occ.point + 3.0 * occ.std_error;
    verdict(
        ok,
        format!(
            "p {p:.7}, mu(100) {}, alpha {:.4}/{:.6}/{:.9}, bound {bound} vs occupancy {:.4}+-{:.4} (1 - pi(O) {:.4})",
            mu(100, p),
            alphas[0],
            alphas[1],
            alphas[2],
            occ.point,
            occ.std_error,
            1.0 - single.point
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (
            "survival-sweep",
            "lambda_grid = [2.0, 5.0]\nside = 5\nreplicas = 300\nhorizon = 5.0\n",
        ),
        ("duality-check", "d = 2\nside = 3\ninstances = 3\nreplicas = 2000\n"),
        ("branching-verify", "replicas = 5000\ncap = 500\n"),
        ("moments", "radius = 3\nreplicas = 500\ncheck_doubling = true\n"),
        ("hitting-tables", "radius = 8\n"),
        ("bounds-report", "lambda_grid = [1.0, 2.0, 3.0]\nreplicas = 100\n"),
        ("invariant-gap", "samples = 4\nchains = 4\nreplicas = 1000\n"),
        ("six-bounds", "side = 3\nsamples = 4\nchains = 4\n"),
    ];
    let mut mismatched = Vec::new();
    for (name, body) in configs {
        let path = dir.path().join(format!("{name}.toml"));
        fs::write(&path, format!("experiment = \"{name}\"\n{body}")).unwrap();
        let mut data = Vec::new();
        for (run, workers) in [("a", "1"), ("b", "2")] {
            let out = dir.path().join(format!("{name}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_twostage"))
                .args([
                    "--config",
                    path.to_str().unwrap(),
                    "--seed",
                    "13",
                    "--workers",
                    workers,
                    "--out",
                    out.to_str().unwrap(),
                    name,
                ])
                .output()
                .unwrap();
            if !status.status.success() {
                mismatched.push(format!("{name} exited {:?}", status.status.code()));
            }
            let mut files: Vec<_> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| !p.to_string_lossy().ends_with("manifest.json"))
                .collect();
            files.sort();
            data.push(files.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
        }
        if data[0] != data[1] || data[0].is_empty() {
            mismatched.push(name.to_string());
        }
    }
    verdict(mismatched.is_empty(), format!("8 experiments rerun; differing: {mismatched:?}"))
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        println!("{} [{n:>2}] {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    record(1, "branching closed form", branching());
    record(2, "first-step identities", first_step_grid());
    record(3, "duality", duality());
    record(4, "graphical vs direct", graphical_vs_direct());
    record(5, "first moments", first_moments());
    record(6, "second-moment operator", second_moments());
    record(7, "eigen identity", eigen_identity());
    record(8, "hitting probabilities", hitting());
    record(9, "bounds pipeline", bounds_pipeline());
    record(10, "critical-value bracket", critical_bracket());
    let small = sample_nu(&TorusSpec::new(4, 3).unwrap(), &rates(8.0), sampler(11)).unwrap();
    let large = sample_nu(&TorusSpec::new(8, 3).unwrap(), &rates(8.0), sampler(12)).unwrap();
    record(11, "product-measure trend", theorem_trend(&small, &large));
    record(12, "occupancy pieces", six_pieces(&large));
    record(13, "determinism", determinism());
    let failed: Vec<_> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
