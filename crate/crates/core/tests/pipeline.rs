mod common;

use nalgebra::DVector;
use nmpc_core::closedloop::{evaluate_candidates, evaluate_ocp, sample_grid, simulate};
use nmpc_core::scenario::{decode, filter_for_state, prune_catalog, resume_catalog};
use nmpc_core::solver::solve;
use nmpc_core::stagesets::StageConstraint;
use nmpc_core::{examples, Error, InitialState, Problem, Scenario, Status};

fn ex2(horizon: usize) -> Problem {
    let file = examples::file("ex2").unwrap();
    let mut cfg = file.config().unwrap();
    cfg.horizon = horizon;
    Problem::build(file.to_spec().unwrap(), &cfg).unwrap()
}

fn x(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

#[test]
fn pruning_keeps_every_feasible_sequence() {
    let p = ex2(3);
    let cat = prune_catalog(&p, 3).unwrap();
    let mut brute = Vec::new();
    for j in 1..=27u64 {
        let sc = Scenario::from_index(j, 3, 3).unwrap();
        let sol = solve(&p.assemble(&sc, &InitialState::Free).unwrap(), &p.solver);
        assert_ne!(sol.status, Status::IterLimit, "j = {j}");
        if sol.status == Status::Optimal {
            brute.push(decode(j, 3, 3).unwrap());
        }
    }
    assert_eq!(cat.level(3), brute.as_slice());
}

#[test]
fn catalog_levels_are_suffix_closed_and_grow() {
    let p = ex2(6);
    let cat = prune_catalog(&p, 6).unwrap();
    assert!(cat.is_suffix_closed());
    let counts: Vec<usize> = (1..=6).map(|n| cat.count(n)).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    assert_eq!(counts, vec![3, 5, 7, 9, 11, 13]);
    // A run in one outer band followed by ones.
    for seq in cat.level(6) {
        let k = seq.iter().take_while(|&&e| e == seq[0]).count();
        assert!(seq[k..].iter().all(|&e| e == 1), "{seq:?}");
    }
}

#[test]
fn empty_stage_set_is_pruned_away() {
    let mut p = ex2(3);
    let n = p.spec.dim();
    p.zsets[1].constraints.push(StageConstraint {
        g_coef: 0.0,
        lin: DVector::zeros(n + 1),
        offset: 1.0,
    });
    let full = prune_catalog(&ex2(3), 3).unwrap();
    let cat = prune_catalog(&p, 3).unwrap();
    for level in 1..=3 {
        let expected: Vec<Vec<usize>> = full
            .level(level)
            .iter()
            .filter(|s| !s.contains(&2))
            .cloned()
            .collect();
        assert_eq!(cat.level(level), expected.as_slice());
    }
}

#[test]
fn single_feasible_region_leaves_all_ones() {
    let mut p = ex2(4);
    let n = p.spec.dim();
    for i in [1, 2] {
        p.zsets[i].constraints.push(StageConstraint {
            g_coef: 0.0,
            lin: DVector::zeros(n + 1),
            offset: 1.0,
        });
    }
    let cat = prune_catalog(&p, 4).unwrap();
    for level in 1..=4 {
        assert_eq!(cat.level(level), &[vec![1; level]]);
    }
}

#[test]
fn filtering_by_state() {
    let p = ex2(3);
    let cat = prune_catalog(&p, 3).unwrap();
    let tol = p.tol.membership;
    let firsts = |x: &DVector<f64>| -> Vec<usize> {
        let mut f: Vec<usize> = filter_for_state(&cat, &p.spec, x, tol).iter().map(Scenario::first).collect();
        f.dedup();
        f
    };
    assert_eq!(firsts(&x(0.0, 0.0)), vec![1]);
    assert!(filter_for_state(&cat, &p.spec, &x(2.5, 0.0), tol).is_empty());
    // x1 - x2 = 4/3 separates X_1 and X_3.
    let facet = x(0.5, 0.5 - 4.0 / 3.0);
    let mut f = firsts(&facet);
    f.sort_unstable();
    assert_eq!(f, vec![1, 3]);
    assert!(p.spec.g().value(&facet).abs() <= 1e-12);
}

#[test]
fn candidate_order_does_not_change_the_choice() {
    let p = ex2(4);
    let cat = prune_catalog(&p, 4).unwrap();
    let state = x(-0.5, -0.5 + 4.0 / 3.0);
    let mut cands = filter_for_state(&cat, &p.spec, &state, p.tol.membership);
    assert!(cands.len() > 1);
    let a = evaluate_candidates(&p, &cands, &state).unwrap();
    cands.reverse();
    let b = evaluate_candidates(&p, &cands, &state).unwrap();
    assert_eq!(a.j_star, b.j_star);
    assert_eq!(a.u.to_bits(), b.u.to_bits());
}

#[test]
fn short_closed_loop_run() {
    let p = ex2(15);
    let cat = prune_catalog(&p, 15).unwrap();
    let traj = simulate(&p, &cat, &x(0.6, -0.2), 15).unwrap();
    assert_eq!(traj.infeasible_at, None);
    assert_eq!(traj.steps.len(), 15);
    let (lo, hi) = p.spec.u_bounds();
    for pair in traj.steps.windows(2) {
        assert!(pair[1].value <= pair[0].value + 1e-6);
    }
    for s in &traj.steps {
        assert!(p.spec.in_state_set(&s.x, 1e-8));
        assert!((lo..=hi).contains(&s.u));
    }
    assert!(traj.final_state.norm() < 0.6);
}

#[test]
fn infeasible_initial_state_is_reported() {
    let p = ex2(2);
    let cat = prune_catalog(&p, 2).unwrap();
    assert!(matches!(
        evaluate_ocp(&p, &cat, &x(0.5, 0.5)),
        Err(Error::InfeasibleState { .. })
    ));
    assert!(matches!(
        simulate(&p, &cat, &x(3.0, 0.0), 5),
        Err(Error::InfeasibleState { step: Some(0) })
    ));
}

#[test]
fn coarsest_grid_is_the_box_corners() {
    let p = ex2(3);
    let cat = prune_catalog(&p, 3).unwrap();
    let grid = sample_grid(&p, &cat, 2).unwrap();
    let corners: Vec<(f64, f64)> = grid.points.iter().map(|g| (g.x[0], g.x[1])).collect();
    assert_eq!(corners, vec![(-2.0, -2.0), (2.0, -2.0), (-2.0, 2.0), (2.0, 2.0)]);
    assert!(sample_grid(&p, &cat, 1).is_err());
    let csv = grid.to_csv();
    assert!(csv.starts_with("x1,x2,feasible,u_star,V_star,j_star\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn catalog_is_tied_to_its_problem() {
    let p = ex2(3);
    let cat = prune_catalog(&p, 3).unwrap();
    let mut other = examples::file("ex2").unwrap().config().unwrap();
    other.horizon = 3;
    other.rho = Some(2.0);
    let q = Problem::build(examples::ex2(), &other).unwrap();
    assert!(matches!(cat.check(&q), Err(Error::CatalogMismatch { .. })));
    assert!(matches!(resume_catalog(&q, cat.clone(), 4), Err(Error::CatalogMismatch { .. })));
    assert!(matches!(resume_catalog(&p, cat.clone(), 2), Err(Error::HorizonMismatch { .. })));
}

#[test]
fn resuming_matches_a_full_prune() {
    let p = ex2(5);
    let shallow = prune_catalog(&p, 2).unwrap();
    let text = shallow.to_json().unwrap();
    let reloaded = nmpc_core::FeasibleCatalog::from_json(&text).unwrap();
    let resumed = resume_catalog(&p, reloaded, 5).unwrap();
    assert_eq!(resumed, prune_catalog(&p, 5).unwrap());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let p = ex2(6);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cat = prune_catalog(&p, 6).unwrap();
            let grid = sample_grid(&p, &cat, 5).unwrap();
            (cat.to_json().unwrap(), grid.to_csv())
        })
    };
    assert_eq!(run(1), run(4));
}
