use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nmpc_core::closedloop::{evaluate_ocp, sample_grid_with, simulate};
use nmpc_core::io::{fmt_f64, matrix_to_rows, to_canonical_json, SystemFile};
use nmpc_core::linearize::LinearizationFile;
use nmpc_core::model::validate_assumption1;
use nmpc_core::scenario::{prune_catalog, resume_catalog};
use nmpc_core::terminal::{dare_residual, verify_terminal_axioms};
use nmpc_core::{
    CoeffChoice, Error, FeasibleCatalog, InitialState, OutputChoice, Problem, ProblemConfig, Scenario, Solution,
    Status, TerminalSet,
};
use serde_json::{json, Value};

use crate::args::Overrides;
use crate::Failure;

pub fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("{what}: cannot parse {t:?} as a number")))
        })
        .collect()
}

fn apply_overrides(mut cfg: ProblemConfig, o: &Overrides, n: usize) -> Result<ProblemConfig, Failure> {
    if let Some(h) = o.horizon {
        cfg.horizon = h;
    }
    if let Some(b0) = o.b0 {
        cfg.b0 = b0;
    }
    if let Some(c) = &o.c {
        cfg.output = OutputChoice::Vector(parse_list(c, "--c")?);
    }
    if let Some(t) = o.beta_target {
        cfg.output = OutputChoice::BetaTarget(t);
    }
    if let Some(a) = &o.a {
        cfg.coeffs = if a.trim() == "charpoly" {
            CoeffChoice::Charpoly
        } else {
            CoeffChoice::Given(parse_list(a, "--a")?)
        };
    }
    if let Some(q) = &o.q {
        let vals = parse_list(q, "--q")?;
        if vals.len() != n * n {
            return Err(Failure::Usage(format!("--q needs {} entries, got {}", n * n, vals.len())));
        }
        cfg.q = Some(DMatrix::from_row_slice(n, n, &vals));
    }
    if o.rho.is_some() {
        cfg.rho = o.rho;
    }
    if let Some(t) = &o.terminal {
        cfg.terminal = t.parse()?;
    }
    if let Some(v) = o.eps_g {
        cfg.tol.eps_g = v;
    }
    if let Some(v) = o.feas_tol {
        cfg.tol.feas_tol = v;
    }
    if let Some(v) = o.kkt_tol {
        cfg.tol.kkt_tol = v;
    }
    Ok(cfg)
}

pub fn load_problem(system: &Path, o: &Overrides) -> Result<Problem, Failure> {
    let file = SystemFile::load(system)?;
    problem_from_file(&file, o)
}

pub fn problem_from_file(file: &SystemFile, o: &Overrides) -> Result<Problem, Failure> {
    let spec = file.to_spec()?;
    let cfg = apply_overrides(file.config()?, o, spec.dim())?;
    match &o.linearization {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            let lf: LinearizationFile = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
            let lin = lf.to_linearization(&spec)?;
            Ok(Problem::with_linearization(spec, lin, &cfg)?)
        }
        None => Ok(Problem::build(spec, &cfg)?),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Core(e.into())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(v: &Value) -> Result<(), Failure> {
    println!("{}", to_canonical_json(v)?);
    Ok(())
}

pub fn validate(system: &Path, samples: usize, seed: u64) -> Result<(), Failure> {
    let spec = SystemFile::load(system)?.to_spec()?;
    let report = validate_assumption1(&spec, samples, seed)?;
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| {
            json!({
                "kind": v.kind.as_str(),
                "region": v.region,
                "witness": v.witness,
                "magnitude": v.magnitude,
                "count": v.count,
                "detail": v.detail,
            })
        })
        .collect();
    let regions: Vec<Value> = report
        .regions
        .iter()
        .map(|r| json!({"index": r.index, "samples": r.samples, "g_min": r.g_min, "g_max": r.g_max}))
        .collect();
    emit_json(&json!({
        "passed": report.passed(),
        "controllability_rank": report.controllability_rank,
        "g_origin": report.g_origin,
        "regions": regions,
        "violations": violations,
    }))?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "{} assumption violation(s), first: {}",
            report.violations.len(),
            report.violations[0].detail
        )))
    }
}

pub fn linearize(system: &Path, o: &Overrides) -> Result<(), Failure> {
    let file = SystemFile::load(system)?;
    let spec = file.to_spec()?;
    let cfg = apply_overrides(file.config()?, o, spec.dim())?;
    let c = match &cfg.output {
        OutputChoice::Vector(c) => DVector::from_vec(c.clone()),
        OutputChoice::BetaTarget(t) => nmpc_core::linearize::compute_output_vector(spec.a(), spec.b(), *t)?,
    };
    let coeffs = match &cfg.coeffs {
        CoeffChoice::Charpoly => None,
        CoeffChoice::Given(a) => Some(DVector::from_vec(a.clone())),
    };
    let lin = nmpc_core::linearize::build_linearization(&spec, &c, cfg.b0, coeffs.as_ref())?;
    println!("{}", to_canonical_json(&lin.to_file())?);
    Ok(())
}

pub fn stagesets(system: &Path, resolution: usize, out: Option<&Path>, o: &Overrides) -> Result<(), Failure> {
    if resolution < 2 {
        return Err(Failure::Usage("--resolution must be at least 2".into()));
    }
    let problem = load_problem(system, o)?;
    let n = problem.spec.dim();
    let mut text = String::new();
    for z in &problem.zsets {
        text.push_str(&format!(
            "# Z_{} class={} sign={:+}\n",
            z.index,
            z.class.as_str(),
            z.sign_beta_g.as_i32()
        ));
    }
    text.push('i');
    for k in 1..=n {
        text.push_str(&format!(",x{k}"));
    }
    text.push_str(",u_i_lo,u_i_hi\n");
    let lin = &problem.lin;
    for z in &problem.zsets {
        let Some((lo, hi)) = z.region.bounding_box() else {
            continue;
        };
        let total = resolution.pow(n as u32);
        for flat in 0..total {
            let mut rest = flat;
            let x = DVector::from_iterator(
                n,
                (0..n).map(|k| {
                    let i = rest % resolution;
                    rest /= resolution;
                    lo[k] + (hi[k] - lo[k]) * i as f64 / (resolution - 1) as f64
                }),
            );
            if !z.region.contains(&x, problem.tol.membership) {
                continue;
            }
            // Interval for b0 v - alpha^T x, mapped to v.
            let (a, b) = z.input_interval(&x);
            let shift = lin.alpha.dot(&x);
            text.push_str(&z.index.to_string());
            for xi in x.iter() {
                text.push_str(&format!(",{}", fmt_f64(*xi)));
            }
            text.push_str(&format!(
                ",{},{}\n",
                fmt_f64((a + shift) / lin.b0),
                fmt_f64((b + shift) / lin.b0)
            ));
        }
    }
    emit(&text, out)
}

fn tset_json(t: &TerminalSet) -> Value {
    match t {
        TerminalSet::Polytope(p) => json!({"kind": "polytope", "C": matrix_to_rows(p.c()), "d": p.d().as_slice()}),
        TerminalSet::Ellipsoid(e) => json!({"kind": "ellipsoid", "shape": matrix_to_rows(&e.shape), "level": e.level}),
    }
}

pub fn terminal(system: &Path, check: bool, samples: usize, seed: u64, o: &Overrides) -> Result<(), Failure> {
    let problem = load_problem(system, o)?;
    let ti = &problem.terminal;
    let mut doc = json!({
        "P": matrix_to_rows(&ti.p),
        "kappa": ti.kappa.as_slice(),
        "set": tset_json(&ti.tset),
        "k_star": ti.k_star,
        "dare_residual": dare_residual(&problem.lin.a_hat, &problem.lin.b_hat, &problem.costs.q, problem.costs.rho, &ti.p),
    });
    let mut failed = false;
    if check {
        let r = verify_terminal_axioms(ti, &problem.zsets, &problem.costs.q, problem.costs.rho, samples, seed);
        failed = !r.passed();
        let witnesses: Vec<Value> = r
            .violations
            .iter()
            .take(20)
            .map(|v| json!({"axiom": v.axiom, "x": v.x, "slack": v.slack}))
            .collect();
        doc["axioms"] = json!({
            "passed": r.passed(),
            "samples": r.samples,
            "stage": r.stage,
            "invariance": r.invariance,
            "decrease": r.decrease,
            "violations": r.violations.len(),
            "witnesses": witnesses,
        });
    }
    emit_json(&doc)?;
    if failed {
        Err(Failure::Validation("terminal axioms violated on sampled points".into()))
    } else {
        Ok(())
    }
}

/// Loads the catalog at `path` (extending it if shallower than the horizon),
/// or prunes a fresh one and stores it there.
pub fn obtain_catalog(problem: &Problem, path: Option<&Path>) -> Result<FeasibleCatalog, Failure> {
    match path {
        Some(p) if p.exists() => {
            let cat = FeasibleCatalog::load(p)?;
            cat.check(problem)?;
            if cat.horizon == problem.horizon {
                Ok(cat)
            } else if cat.horizon < problem.horizon {
                let cat = resume_catalog(problem, cat, problem.horizon)?;
                cat.save(p)?;
                Ok(cat)
            } else {
                Err(Error::HorizonMismatch {
                    expected: problem.horizon,
                    got: cat.horizon,
                }
                .into())
            }
        }
        Some(p) => {
            let cat = prune_catalog(problem, problem.horizon)?;
            cat.save(p)?;
            Ok(cat)
        }
        None => Ok(prune_catalog(problem, problem.horizon)?),
    }
}

pub fn prune(system: &Path, out: &Path, resume: bool, o: &Overrides) -> Result<(), Failure> {
    let problem = load_problem(system, o)?;
    let cat = if resume && out.exists() {
        resume_catalog(&problem, FeasibleCatalog::load(out)?, problem.horizon)?
    } else {
        prune_catalog(&problem, problem.horizon)?
    };
    cat.save(out)?;
    let counts: Vec<Value> = cat
        .levels
        .iter()
        .map(|(n, seqs)| json!({"N": n, "feasible": seqs.len()}))
        .collect();
    emit_json(&json!({"catalog": out.display().to_string(), "hash": cat.hash, "levels": counts}))
}

fn solution_json(problem: &Problem, j: u64, sol: &Solution, class: &str) -> Value {
    let u_seq: Vec<f64> = sol
        .v_seq
        .iter()
        .zip(&sol.x_traj)
        .map(|(v, x)| problem.lin.u_of_v_eps(&problem.spec, x, *v, problem.tol.eps_g))
        .collect();
    json!({
        "j": j,
        "status": sol.status.as_str(),
        "V": sol.value,
        "v_seq": sol.v_seq,
        "u_seq": u_seq,
        "class": class,
        "kkt_residual": sol.kkt_residual,
        "newton_steps": sol.newton_steps,
        "nonconvex": sol.nonconvex,
    })
}

pub fn solve(
    system: &Path,
    x0: &str,
    scenario: Option<u64>,
    catalog: Option<&Path>,
    o: &Overrides,
) -> Result<(), Failure> {
    let problem = load_problem(system, o)?;
    let x = DVector::from_vec(parse_list(x0, "--x0")?);
    if x.len() != problem.spec.dim() {
        return Err(Failure::Usage(format!("--x0 needs {} entries", problem.spec.dim())));
    }
    if let Some(j) = scenario {
        let sc = Scenario::from_index(j, problem.s(), problem.horizon)?;
        let prog = problem.assemble(&sc, &InitialState::Fixed(x))?;
        let sol = nmpc_core::solver::solve(&prog, &problem.solver);
        emit_json(&solution_json(&problem, j, &sol, prog.class.as_str()))?;
        return match sol.status {
            Status::Optimal => Ok(()),
            s => Err(Failure::Solver(format!("scenario {j} finished with status {}", s.as_str()))),
        };
    }
    let cat = obtain_catalog(&problem, catalog)?;
    let step = evaluate_ocp(&problem, &cat, &x)?;
    let sc = Scenario::from_index(step.j_star, problem.s(), problem.horizon)?;
    let prog = problem.assemble(&sc, &InitialState::Fixed(x))?;
    let sol = nmpc_core::solver::solve(&prog, &problem.solver);
    let mut doc = solution_json(&problem, step.j_star, &sol, prog.class.as_str());
    doc["u"] = json!(step.u);
    doc["n_scenarios_solved"] = json!(step.n_scenarios_solved);
    doc["scenarios"] = step
        .per_scenario
        .iter()
        .map(|s| json!({"j": s.j, "status": s.status.as_str(), "V": s.value}))
        .collect();
    emit_json(&doc)
}

pub fn simulate_cmd(
    system: &Path,
    x0: &str,
    steps: usize,
    catalog: Option<&Path>,
    out: Option<&Path>,
    o: &Overrides,
) -> Result<(), Failure> {
    let problem = load_problem(system, o)?;
    let x = DVector::from_vec(parse_list(x0, "--x0")?);
    if x.len() != problem.spec.dim() {
        return Err(Failure::Usage(format!("--x0 needs {} entries", problem.spec.dim())));
    }
    let cat = obtain_catalog(&problem, catalog)?;
    let traj = simulate(&problem, &cat, &x, steps)?;
    emit(&traj.to_csv(), out)?;
    match traj.infeasible_at {
        Some(k) => Err(Failure::Core(Error::InfeasibleState { step: Some(k) })),
        None => Ok(()),
    }
}

pub fn grid(
    system: &Path,
    resolution: usize,
    per_scenario: bool,
    catalog: Option<&Path>,
    out: Option<&Path>,
    o: &Overrides,
) -> Result<(), Failure> {
    let problem = load_problem(system, o)?;
    let cat = obtain_catalog(&problem, catalog)?;
    let table = sample_grid_with(&problem, &cat, resolution, per_scenario)?;
    emit(&table.to_csv(), out)
}
