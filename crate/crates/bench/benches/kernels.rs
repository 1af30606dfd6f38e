use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use twostage::branching::{estimate_branching_survival, BranchingState, BranchingStop};
use twostage::graphical::{evolve_coupled, sample_timeline};
use twostage::hitting::srw_table;
use twostage::linear::{build_g, torus_space, MomentVector};
use twostage::markov::{ProcessKind, Simulator};
use twostage::{rng, Configuration, Rates, TorusSpec};

fn rates(lambda: f64) -> Rates {
    Rates {
        lambda,
        delta: 1.0,
        gamma: 2.0,
    }
}

fn branching(c: &mut Criterion) {
    let r = rates(3.0);
    c.bench_function("branching 4096 replicas cap 1000", |b| {
        b.iter(|| estimate_branching_survival(BranchingState::new(1, 0), &r, BranchingStop::cap(1000), 4096, black_box(7)).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let torus = TorusSpec::new(2, 32).unwrap();
    let all = Configuration::all_fully(&torus);
    let mut sim = Simulator::new(ProcessKind::TwoStage, &torus, rates(8.0).scaled(2));
    let mut seed = 0;
    c.bench_function("two-stage 32x32 from all fully, t=1", |b| {
        b.iter(|| {
            seed += 1;
            sim.reset(&all);
            sim.advance_to(&mut rng::stream(1, seed), 1.0, None)
        })
    });
    c.bench_function("graphical 16x16 from origin, t=2", |b| {
        let small = TorusSpec::new(2, 16).unwrap();
        b.iter(|| {
            seed += 1;
            let tl = sample_timeline(&small, rates(2.0).scaled(2), 2.0, seed).unwrap();
            evolve_coupled(&tl, &[(vec![small.origin()], vec![])])
                .unwrap()
                .survival_indicator(0, 2.0)
        })
    });
}

fn solves(c: &mut Criterion) {
    c.bench_function("srw solve d=10 R=16", |b| b.iter(|| srw_table(black_box(10), 16).unwrap()));
    let space = torus_space(3, 10).unwrap();
    let g = build_g(&space, &rates(3.0).scaled(3)).unwrap();
    let v = MomentVector::ones(&space).values;
    c.bench_function("G apply d=3 R=10", |b| b.iter(|| g.apply(black_box(&v))));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(20);
    targets = branching, simulator, solves
}
criterion_main!(kernels);
