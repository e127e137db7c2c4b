//! Plain-text instance files and the bundled example problems.
//!
//! Format: sections introduced by a keyword line, values whitespace-separated,
//! `#` starts a comment. `CONES` lists the block dimensions, `A` holds one
//! constraint row per line, `b`, `c`, `cbar` hold one vector each, and an
//! optional `DOMAIN lo hi` line bounds the parameter (with `-inf`/`inf`
//! allowed). Data entries must be finite.
//!
//! ```txt
//! CONES
//! 3 2
//! A
//! 1 0 0 0 0
//! 0 0 1 -1 0
//! 0 1 0 0 -1
//! b
//! 1 0 1
//! c
//! 0 0 -1 0 0
//! cbar
//! 0 -1 1 0 0
//! ```

use nalgebra::{DMatrix, DVector};

use crate::cones::ConeStructure;
use crate::instance::{InstanceError, ParametricInstance};

/// Parser failures carry the 1-based line (and token column where a token is
/// at fault).
#[derive(Debug, Clone, PartialEq)]
pub enum ParseError {
    Syntax { line: usize, col: usize, message: String },
    DimensionMismatch { line: usize, message: String },
    MissingSection(&'static str),
    Invalid(InstanceError),
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseError::Syntax { line, col, message } => {
                write!(f, "line {line}, token {col}: {message}")
            }
            ParseError::DimensionMismatch { line, message } => {
                write!(f, "line {line}: {message}")
            }
            ParseError::MissingSection(name) => write!(f, "missing section {name}"),
            ParseError::Invalid(err) => write!(f, "invalid instance: {err}"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Cones,
    MatA,
    VecB,
    VecC,
    VecCbar,
    Domain,
}

fn parse_number(tok: &str, line: usize, col: usize, allow_inf: bool) -> Result<f64, ParseError> {
    let lowered = tok.to_ascii_lowercase();
    let value = match lowered.as_str() {
        "inf" | "+inf" => f64::INFINITY,
        "-inf" => f64::NEG_INFINITY,
        _ => tok.parse::<f64>().map_err(|_| ParseError::Syntax {
            line,
            col,
            message: format!("expected a number, found {tok:?}"),
        })?,
    };
    if !allow_inf && !value.is_finite() {
        return Err(ParseError::Syntax {
            line,
            col,
            message: format!("non-finite value {tok:?} not allowed here"),
        });
    }
    if value.is_nan() {
        return Err(ParseError::Syntax { line, col, message: "NaN not allowed".into() });
    }
    Ok(value)
}

/// Parse an instance document.
pub fn parse_instance(text: &str) -> Result<ParametricInstance, ParseError> {
    let mut section: Option<Section> = None;
    let mut dims: Vec<usize> = Vec::new();
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut c: Vec<f64> = Vec::new();
    let mut cbar: Vec<f64> = Vec::new();
    let mut domain: Option<(f64, f64)> = None;
    let mut seen_cones_line = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap();
        let new_section = match first {
            "CONES" => Some(Section::Cones),
            "A" => Some(Section::MatA),
            "b" => Some(Section::VecB),
            "c" => Some(Section::VecC),
            "cbar" => Some(Section::VecCbar),
            "DOMAIN" => Some(Section::Domain),
            _ => None,
        };
        if let Some(sec) = new_section {
            section = Some(sec);
            let rest: Vec<&str> = trimmed.split_whitespace().skip(1).collect();
            if !rest.is_empty() {
                consume_tokens(
                    sec, &rest, line_no, &mut dims, &mut a_rows, &mut b, &mut c, &mut cbar,
                    &mut domain,
                )?;
            }
            if sec == Section::Cones {
                seen_cones_line = line_no;
            }
            continue;
        }
        let sec = section.ok_or(ParseError::Syntax {
            line: line_no,
            col: 1,
            message: format!("data before any section keyword: {trimmed:?}"),
        })?;
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        consume_tokens(
            sec, &toks, line_no, &mut dims, &mut a_rows, &mut b, &mut c, &mut cbar, &mut domain,
        )?;
    }

    if dims.is_empty() {
        return Err(if seen_cones_line > 0 {
            ParseError::DimensionMismatch {
                line: seen_cones_line,
                message: "CONES section is empty".into(),
            }
        } else {
            ParseError::MissingSection("CONES")
        });
    }
    if a_rows.is_empty() {
        return Err(ParseError::MissingSection("A"));
    }
    if b.is_empty() {
        return Err(ParseError::MissingSection("b"));
    }
    if c.is_empty() {
        return Err(ParseError::MissingSection("c"));
    }
    if cbar.is_empty() {
        return Err(ParseError::MissingSection("cbar"));
    }

    let n: usize = dims.iter().sum();
    let m = a_rows.len();
    for (i, row) in a_rows.iter().enumerate() {
        if row.len() != n {
            return Err(ParseError::DimensionMismatch {
                line: 0,
                message: format!("A row {} has {} entries, expected {}", i + 1, row.len(), n),
            });
        }
    }
    if b.len() != m || c.len() != n || cbar.len() != n {
        return Err(ParseError::DimensionMismatch {
            line: 0,
            message: format!(
                "got |b| = {}, |c| = {}, |cbar| = {}; expected {m} / {n} / {n}",
                b.len(),
                c.len(),
                cbar.len()
            ),
        });
    }

    let structure = ConeStructure::new(dims);
    let a = DMatrix::from_fn(m, n, |i, j| a_rows[i][j]);
    ParametricInstance::new(
        structure,
        a,
        DVector::from_vec(b),
        DVector::from_vec(c),
        DVector::from_vec(cbar),
        domain,
    )
    .map_err(ParseError::Invalid)
}

#[allow(clippy::too_many_arguments)]
fn consume_tokens(
    sec: Section,
    toks: &[&str],
    line_no: usize,
    dims: &mut Vec<usize>,
    a_rows: &mut Vec<Vec<f64>>,
    b: &mut Vec<f64>,
    c: &mut Vec<f64>,
    cbar: &mut Vec<f64>,
    domain: &mut Option<(f64, f64)>,
) -> Result<(), ParseError> {
    match sec {
        Section::Cones => {
            for (col, tok) in toks.iter().enumerate() {
                let v: usize = tok.parse().map_err(|_| ParseError::Syntax {
                    line: line_no,
                    col: col + 1,
                    message: format!("expected a positive block size, found {tok:?}"),
                })?;
                if v == 0 {
                    return Err(ParseError::Syntax {
                        line: line_no,
                        col: col + 1,
                        message: "block size must be >= 1".into(),
                    });
                }
                dims.push(v);
            }
        }
        Section::MatA => {
            let mut row = Vec::with_capacity(toks.len());
            for (col, tok) in toks.iter().enumerate() {
                row.push(parse_number(tok, line_no, col + 1, false)?);
            }
            a_rows.push(row);
        }
        Section::VecB | Section::VecC | Section::VecCbar => {
            let target = match sec {
                Section::VecB => b,
                Section::VecC => c,
                _ => cbar,
            };
            for (col, tok) in toks.iter().enumerate() {
                target.push(parse_number(tok, line_no, col + 1, false)?);
            }
        }
        Section::Domain => {
            if toks.len() != 2 {
                return Err(ParseError::Syntax {
                    line: line_no,
                    col: 1,
                    message: "DOMAIN needs exactly two bounds".into(),
                });
            }
            let lo = parse_number(toks[0], line_no, 1, true)?;
            let hi = parse_number(toks[1], line_no, 2, true)?;
            // Fully unbounded domain is the same as no DOMAIN section.
            if lo.is_finite() || hi.is_finite() {
                *domain = Some((lo, hi));
            }
        }
    }
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:.17e}")
    }
}

/// Serialize an instance in the section format. Values round-trip exactly
/// through `parse_instance`.
pub fn write_instance(inst: &ParametricInstance) -> String {
    let mut out = String::new();
    out.push_str("CONES\n");
    let dims: Vec<String> = inst.structure().dims().iter().map(|d| d.to_string()).collect();
    out.push_str(&dims.join(" "));
    out.push_str("\nA\n");
    for i in 0..inst.num_constraints() {
        let row: Vec<String> = (0..inst.structure().total_dim())
            .map(|j| fmt_f64(inst.a()[(i, j)]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.push_str("b\n");
    let b: Vec<String> = inst.b().iter().map(|v| fmt_f64(*v)).collect();
    out.push_str(&b.join(" "));
    out.push_str("\nc\n");
    let c: Vec<String> = inst.c().iter().map(|v| fmt_f64(*v)).collect();
    out.push_str(&c.join(" "));
    out.push_str("\ncbar\n");
    let cb: Vec<String> = inst.cbar().iter().map(|v| fmt_f64(*v)).collect();
    out.push_str(&cb.join(" "));
    out.push('\n');
    if let Some((lo, hi)) = inst.domain_bounds() {
        let f = |v: f64| {
            if v == f64::NEG_INFINITY {
                "-inf".to_string()
            } else if v == f64::INFINITY {
                "inf".to_string()
            } else {
                fmt_f64(v)
            }
        };
        out.push_str(&format!("DOMAIN\n{} {}\n", f(lo), f(hi)));
    }
    out
}

/// Names of the bundled example instances.
pub const BUNDLED_NAMES: [&str; 6] = ["p5", "p6", "p8", "p14", "p14mod", "p15"];

/// Raw text of a bundled instance.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    match name {
        "p5" => Some(include_str!("../instances/p5.soco")),
        "p6" => Some(include_str!("../instances/p6.soco")),
        "p8" => Some(include_str!("../instances/p8.soco")),
        "p14" => Some(include_str!("../instances/p14.soco")),
        "p14mod" => Some(include_str!("../instances/p14mod.soco")),
        "p15" => Some(include_str!("../instances/p15.soco")),
        _ => None,
    }
}

/// Parse a bundled instance by name.
pub fn bundled(name: &str) -> Option<ParametricInstance> {
    bundled_text(name).map(|t| parse_instance(t).expect("bundled instance must parse"))
}

/// FNV-1a digest of the canonical serialization, used to identify instances
/// in run reports.
pub fn instance_digest(inst: &ParametricInstance) -> String {
    let text = write_instance(inst);
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    format!("{hash:016x}")
}
