//! The three shipped example systems, embedded at compile time.

use nalgebra::DVector;

use crate::io::SystemFile;
use crate::linearize::{build_linearization, LinearizationData};
use crate::model::SystemSpec;

pub const EX1_JSON: &str = include_str!("../../../systems/ex1.json");
pub const EX2_JSON: &str = include_str!("../../../systems/ex2.json");
pub const EX3_JSON: &str = include_str!("../../../systems/ex3.json");

/// Embedded system file by name (`ex1`, `ex2`, `ex3`).
pub fn file(name: &str) -> Option<SystemFile> {
    let text = match name {
        "ex1" => EX1_JSON,
        "ex2" => EX2_JSON,
        "ex3" => EX3_JSON,
        _ => return None,
    };
    Some(SystemFile::from_json(text).expect("embedded example parses"))
}

fn spec(name: &str) -> SystemSpec {
    file(name)
        .and_then(|f| f.to_spec().ok())
        .expect("embedded example is a valid system")
}

/// Quadratic input gain, one region.
pub fn ex1() -> SystemSpec {
    spec("ex1")
}

/// Sinusoidal input gain, three regions.
pub fn ex2() -> SystemSpec {
    spec("ex2")
}

/// Piecewise-affine stand-in, nine regions.
pub fn ex3() -> SystemSpec {
    spec("ex3")
}

/// `c = (5, -1)`, `b0 = 0.1`, `a = (0.99, -2)`.
pub fn reference_linearization(spec: &SystemSpec) -> LinearizationData {
    build_linearization(
        spec,
        &DVector::from_vec(vec![5.0, -1.0]),
        0.1,
        Some(&DVector::from_vec(vec![0.99, -2.0])),
    )
    .expect("reference linearization is valid")
}
