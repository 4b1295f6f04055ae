//! End-to-end run of a shipped example with a comparison table.

use nalgebra::DVector;
use nmpc_core::scenario::prune_catalog;
use nmpc_core::{examples, InitialState, Problem, Scenario};

use crate::args::Overrides;
use crate::commands::problem_from_file;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Pass,
    Fail,
    Info,
    NotApplicable,
}

impl Mark {
    fn as_str(self) -> &'static str {
        match self {
            Mark::Pass => "PASS",
            Mark::Fail => "FAIL",
            Mark::Info => "INFO",
            Mark::NotApplicable => "N-A",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub quantity: String,
    pub published: String,
    pub computed: String,
    pub mark: Mark,
}

fn row(quantity: &str, published: impl Into<String>, computed: impl Into<String>, mark: Mark) -> Row {
    Row {
        quantity: quantity.into(),
        published: published.into(),
        computed: computed.into(),
        mark,
    }
}

fn check(ok: bool) -> Mark {
    if ok {
        Mark::Pass
    } else {
        Mark::Fail
    }
}

/// Published values for the shared linearization and each example's count.
pub fn rows(example: &str, horizon: Option<usize>) -> Result<Vec<Row>, Failure> {
    let file = examples::file(example)
        .ok_or_else(|| Failure::Usage(format!("unknown example {example:?}; expected ex1, ex2 or ex3")))?;
    let overrides = Overrides {
        horizon,
        ..Overrides::default()
    };
    let problem: Problem = problem_from_file(&file, &overrides)?;
    let lin = &problem.lin;
    let mut out = vec![
        row("beta", "0.024", format!("{:.12}", lin.beta), check((lin.beta - 0.024).abs() <= 1e-12)),
        row(
            "b_hat",
            "(0.0417, 0.2083)",
            format!("({:.7}, {:.7})", lin.b_hat[0], lin.b_hat[1]),
            check((lin.b_hat[0] - 0.0417).abs() <= 5e-5 && (lin.b_hat[1] - 0.2083).abs() <= 5e-5),
        ),
        row(
            "rho",
            "1.736",
            format!("{:.6}", problem.costs.rho),
            check((problem.costs.rho - 1.736).abs() <= 1e-3),
        ),
        row(
            "A_hat = A",
            "equal",
            format!("max |A_hat - A| = {:.1e}", (&lin.a_hat - problem.spec.a()).amax()),
            check((&lin.a_hat - problem.spec.a()).amax() <= 1e-10),
        ),
        row(
            "alpha",
            "0",
            format!("{:.1e}", lin.alpha.amax()),
            check(lin.alpha.amax() <= 1e-10),
        ),
    ];

    let n = problem.horizon;
    let cat = prune_catalog(&problem, n)?;
    let count = cat.count(n);
    let (published, mark) = match example {
        "ex1" => ("1".to_string(), check(count == 1)),
        "ex2" if n == 15 && count == 31 => ("31".to_string(), Mark::Pass),
        "ex2" if n == 15 && (25..=40).contains(&count) => ("31".to_string(), Mark::Info),
        "ex2" if n == 15 => ("31".to_string(), Mark::Fail),
        "ex3" => ("217 (PWA data not published)".to_string(), Mark::NotApplicable),
        _ => ("-".to_string(), Mark::NotApplicable),
    };
    out.push(row(
        &format!("feasible scenarios (N={n})"),
        published,
        format!("{count} of {}^{n}", problem.s()),
        mark,
    ));

    let class = problem
        .assemble(
            &Scenario::new(vec![1; n], problem.s())?,
            &InitialState::Fixed(DVector::zeros(problem.spec.dim())),
        )?
        .class;
    let expected = match example {
        "ex1" => "QCQP",
        "ex2" => "NLP",
        _ => "QP",
    };
    out.push(row("subproblem class", expected, class.as_str(), check(class.as_str() == expected)));
    Ok(out)
}

pub fn render(rows: &[Row]) -> String {
    let w0 = rows.iter().map(|r| r.quantity.len()).max().unwrap_or(0).max(8);
    let w1 = rows.iter().map(|r| r.published.len()).max().unwrap_or(0).max(9);
    let w2 = rows.iter().map(|r| r.computed.len()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<w0$}  {:<w1$}  {:<w2$}  status\n", "quantity", "published", "computed");
    for r in rows {
        s.push_str(&format!(
            "{:<w0$}  {:<w1$}  {:<w2$}  {}\n",
            r.quantity,
            r.published,
            r.computed,
            r.mark.as_str()
        ));
    }
    s
}

pub fn run(example: &str, horizon: Option<usize>) -> Result<(), Failure> {
    let rows = rows(example, horizon)?;
    print!("{}", render(&rows));
    if rows.iter().any(|r| r.mark == Mark::Fail) {
        Err(Failure::Validation("some reproduced values disagree with the published ones".into()))
    } else {
        Ok(())
    }
}
