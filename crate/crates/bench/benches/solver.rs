use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use nmpc_core::closedloop::evaluate_ocp;
use nmpc_core::scenario::prune_catalog;
use nmpc_core::solver::{phase_one, solve};
use nmpc_core::terminal::solve_dare;
use nmpc_core::{examples, InitialState, Problem, Scenario};

fn ex2(horizon: usize) -> Problem {
    let file = examples::file("ex2").unwrap();
    let mut cfg = file.config().unwrap();
    cfg.horizon = horizon;
    Problem::build(file.to_spec().unwrap(), &cfg).unwrap()
}

fn riccati(c: &mut Criterion) {
    let p = ex2(15);
    c.bench_function("dare_ex2", |b| {
        b.iter(|| solve_dare(&p.lin.a_hat, &p.lin.b_hat, &p.costs.q, black_box(p.costs.rho)).unwrap())
    });
}

fn single_solve(c: &mut Criterion) {
    let p = ex2(15);
    let x0 = InitialState::Fixed(DVector::from_vec(vec![0.4, -0.3]));
    let prog = p.assemble(&Scenario::new(vec![1; 15], 3).unwrap(), &x0).unwrap();
    c.bench_function("solve_ex2_n15_all_ones", |b| b.iter(|| solve(black_box(&prog), &p.solver)));

    let free = p
        .assemble(&Scenario::new([vec![2; 4], vec![1; 11]].concat(), 3).unwrap(), &InitialState::Free)
        .unwrap();
    c.bench_function("phase_one_ex2_n15_free", |b| b.iter(|| phase_one(black_box(&free), &p.solver)));

    let q = Problem::from_file(&examples::file("ex1").unwrap()).unwrap();
    let prog = q.assemble(&Scenario::new(vec![1; 15], 1).unwrap(), &x0).unwrap();
    c.bench_function("solve_ex1_n15_qcqp", |b| b.iter(|| solve(black_box(&prog), &q.solver)));
}

fn pruning(c: &mut Criterion) {
    let p = ex2(5);
    let mut group = c.benchmark_group("prune");
    group.sample_size(10);
    group.bench_function("ex2_n5", |b| b.iter(|| prune_catalog(black_box(&p), 5).unwrap()));
    group.finish();
}

fn online_step(c: &mut Criterion) {
    let p = ex2(15);
    let cat = prune_catalog(&p, 15).unwrap();
    let x = DVector::from_vec(vec![-0.5, 1.2]);
    let mut group = c.benchmark_group("online");
    group.sample_size(20);
    group.bench_function("evaluate_ocp_ex2_n15", |b| b.iter(|| evaluate_ocp(&p, &cat, black_box(&x)).unwrap()));
    group.finish();
}

criterion_group!(benches, riccati, single_solve, pruning, online_step);
criterion_main!(benches);
