//! JSON system files and CSV/float formatting shared by the command line.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{CoeffChoice, OutputChoice, ProblemConfig};
use crate::error::{Error, Result};
use crate::model::{Polytope, PwaPiece, Region, ScalarField, Sign, SystemSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolytopeFile {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegionFile {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    pub sign: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PieceFile {
    pub region: PolytopeFile,
    pub w: Vec<f64>,
    pub d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldFile {
    Affine {
        w: Vec<f64>,
        d: f64,
    },
    Quadratic {
        #[serde(rename = "H")]
        h: Vec<Vec<f64>>,
        w: Vec<f64>,
        d: f64,
    },
    Sinusoid {
        amp: f64,
        freq: f64,
        dir: Vec<f64>,
        phase: f64,
    },
    Pwa {
        pieces: Vec<PieceFile>,
    },
}

/// Optional pipeline settings stored alongside a system.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SettingsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_target: Option<f64>,
    /// Either a coefficient list or the string "charpoly".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<serde_json::Value>,
    #[serde(default, rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub g: FieldFile,
    pub regions: Vec<RegionFile>,
    pub u: [f64; 2],
    /// Explicit state set; defaults to the union of the regions.
    #[serde(default, rename = "X", skip_serializing_if = "Option::is_none")]
    pub x: Option<PolytopeFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<SettingsFile>,
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Schema(format!("{what}: ragged matrix")));
    }
    Ok(DMatrix::from_row_iterator(m, n, rows.iter().flatten().copied()))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl PolytopeFile {
    pub fn to_polytope(&self, what: &str) -> Result<Polytope> {
        let c = matrix_from_rows(&self.c, what)?;
        Polytope::new(c, DVector::from_vec(self.d.clone()))
    }
}

impl FieldFile {
    pub fn to_field(&self) -> Result<ScalarField> {
        Ok(match self {
            FieldFile::Affine { w, d } => ScalarField::Affine {
                w: DVector::from_vec(w.clone()),
                d: *d,
            },
            FieldFile::Quadratic { h, w, d } => {
                ScalarField::quadratic(matrix_from_rows(h, "g.H")?, DVector::from_vec(w.clone()), *d)?
            }
            FieldFile::Sinusoid {
                amp,
                freq,
                dir,
                phase,
            } => ScalarField::Sinusoid {
                amp: *amp,
                freq: *freq,
                dir: DVector::from_vec(dir.clone()),
                phase: *phase,
            },
            FieldFile::Pwa { pieces } => ScalarField::pwa(
                pieces
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        Ok(PwaPiece {
                            domain: p.region.to_polytope(&format!("g.pieces[{k}]"))?,
                            w: DVector::from_vec(p.w.clone()),
                            d: p.d,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )?,
        })
    }
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_spec(&self) -> Result<SystemSpec> {
        let a = matrix_from_rows(&self.a, "A")?;
        let b = DVector::from_vec(self.b.clone());
        let g = self.g.to_field()?;
        let regions = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let set = PolytopeFile {
                    c: r.c.clone(),
                    d: r.d.clone(),
                }
                .to_polytope(&format!("regions[{i}]"))?;
                Ok(Region {
                    set,
                    sign: Sign::from_i32(r.sign)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = SystemSpec::new(a, b, g, regions, self.u[0], self.u[1])?;
        match &self.x {
            Some(x) => spec.with_domain(x.to_polytope("X")?),
            None => Ok(spec),
        }
    }

    /// Pipeline configuration: library defaults overridden by the file's
    /// `settings` block.
    pub fn config(&self) -> Result<ProblemConfig> {
        let mut cfg = ProblemConfig::default();
        let Some(s) = &self.settings else {
            return Ok(cfg);
        };
        if let Some(b0) = s.b0 {
            cfg.b0 = b0;
        }
        if let Some(c) = &s.c {
            cfg.output = OutputChoice::Vector(c.clone());
        } else if let Some(t) = s.beta_target {
            cfg.output = OutputChoice::BetaTarget(t);
        }
        if let Some(a) = &s.a {
            cfg.coeffs = parse_coeff_value(a)?;
        }
        if let Some(q) = &s.q {
            cfg.q = Some(matrix_from_rows(q, "settings.Q")?);
        }
        if s.rho.is_some() {
            cfg.rho = s.rho;
        }
        if let Some(n) = s.horizon {
            cfg.horizon = n;
        }
        if let Some(t) = &s.terminal {
            cfg.terminal = t.parse()?;
        }
        Ok(cfg)
    }
}

impl PolytopeFile {
    pub fn from_polytope(p: &Polytope) -> Self {
        Self {
            c: matrix_to_rows(p.c()),
            d: p.d().as_slice().to_vec(),
        }
    }
}

impl FieldFile {
    pub fn from_field(g: &ScalarField) -> Self {
        match g {
            ScalarField::Affine { w, d } => FieldFile::Affine {
                w: w.as_slice().to_vec(),
                d: *d,
            },
            ScalarField::Quadratic { h, w, d } => FieldFile::Quadratic {
                h: matrix_to_rows(h),
                w: w.as_slice().to_vec(),
                d: *d,
            },
            ScalarField::Sinusoid {
                amp,
                freq,
                dir,
                phase,
            } => FieldFile::Sinusoid {
                amp: *amp,
                freq: *freq,
                dir: dir.as_slice().to_vec(),
                phase: *phase,
            },
            ScalarField::Pwa { pieces } => FieldFile::Pwa {
                pieces: pieces
                    .iter()
                    .map(|p| PieceFile {
                        region: PolytopeFile::from_polytope(&p.domain),
                        w: p.w.as_slice().to_vec(),
                        d: p.d,
                    })
                    .collect(),
            },
        }
    }
}

impl SystemFile {
    /// File form of a spec, with normalized region rows and no settings.
    pub fn from_spec(spec: &SystemSpec) -> Self {
        let (u_lo, u_hi) = spec.u_bounds();
        Self {
            name: None,
            note: None,
            a: matrix_to_rows(spec.a()),
            b: spec.b().as_slice().to_vec(),
            g: FieldFile::from_field(spec.g()),
            regions: spec
                .regions()
                .iter()
                .map(|r| RegionFile {
                    c: matrix_to_rows(r.set.c()),
                    d: r.set.d().as_slice().to_vec(),
                    sign: r.sign.as_i32(),
                })
                .collect(),
            u: [u_lo, u_hi],
            x: spec.domain().map(PolytopeFile::from_polytope),
            settings: None,
        }
    }
}

fn parse_coeff_value(v: &serde_json::Value) -> Result<CoeffChoice> {
    match v {
        serde_json::Value::String(s) if s == "charpoly" => Ok(CoeffChoice::Charpoly),
        serde_json::Value::Array(items) => items
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| Error::Schema("settings.a entries must be numbers".into()))
            })
            .collect::<Result<Vec<_>>>()
            .map(CoeffChoice::Given),
        _ => Err(Error::Schema("settings.a must be \"charpoly\" or a number list".into())),
    }
}

/// Fixed 17-significant-digit formatting used for every CSV number.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

/// Serializes with sorted keys and a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is a BTreeMap, so going through Value sorts keys.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}
