//! Sectioned text format for programs, with hexadecimal floats.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::{AffineEncoding, Commutation, ConicTemplate, ParametricProgram, ProgramData};
use crate::conic::{ConeFactor, ConeKind, ConeSpec};
use crate::geometry::Polytope;
use crate::textio::{parse_f64, parse_usize, write_floats, write_mat, write_vec, FormatError, LineReader};

const MAGIC: &str = "commutree-program";
const VERSION: &str = "1";

/// A program together with its parameter polytope and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramFile {
    pub program: ParametricProgram,
    pub theta: Option<Polytope>,
    pub meta: Vec<(String, String)>,
}

fn write_cones(out: &mut String, cone: &ConeSpec) {
    out.push_str("cones");
    for f in &cone.factors {
        write!(out, " {} {}", f.kind.tag(), f.size).unwrap();
    }
    out.push('\n');
}

pub fn write_program_file(file: &ProgramFile) -> String {
    let prog = &file.program;
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "name {}", if prog.name.is_empty() { "-" } else { &prog.name }).unwrap();
    writeln!(out, "dims {} {} {}", prog.p, prog.n, prog.m).unwrap();
    for g in &prog.one_hot {
        write!(out, "onehot {}", g.len()).unwrap();
        for i in g {
            write!(out, " {i}").unwrap();
        }
        out.push('\n');
    }
    for (k, v) in &file.meta {
        writeln!(out, "meta {k} {v}").unwrap();
    }
    if let Some(theta) = &file.theta {
        writeln!(out, "theta {}", theta.vertices().len()).unwrap();
        for v in theta.vertices() {
            out.push('v');
            write_floats(&mut out, v.iter().copied());
            out.push('\n');
        }
    }
    match &prog.data {
        ProgramData::Affine(enc) => {
            out.push_str("data affine\n");
            write_cones(&mut out, &enc.cone);
            write_vec(&mut out, "c", &enc.c);
            write_mat(&mut out, "a", &enc.a);
            write_vec(&mut out, "c0", &enc.c0);
            write_mat(&mut out, "c_theta", &enc.c_theta);
            write_mat(&mut out, "b", &enc.b);
            for (k, bt) in enc.b_theta.iter().enumerate() {
                if bt.iter().any(|&v| v != 0.0) {
                    writeln!(out, "b_theta {k}").unwrap();
                    write_mat(&mut out, "m", bt);
                }
            }
        }
        ProgramData::Table(rows) => {
            writeln!(out, "data table {}", rows.len()).unwrap();
            for (d, t) in rows {
                writeln!(out, "entry {d}").unwrap();
                write_cones(&mut out, &t.cone);
                write_vec(&mut out, "c", &t.c);
                write_vec(&mut out, "c_theta", &t.c_theta);
                out.push_str("c0");
                write_floats(&mut out, [t.c0]);
                out.push('\n');
                write_mat(&mut out, "a", &t.a);
                write_vec(&mut out, "b", &t.b);
                write_mat(&mut out, "b_theta", &t.b_theta);
            }
        }
    }
    out.push_str("end\n");
    out
}

fn read_cones(r: &mut LineReader) -> Result<ConeSpec, FormatError> {
    let (n, toks) = r.expect("cones")?;
    if toks.len() % 2 != 0 {
        return LineReader::err_at(n, "cone list must be kind/size pairs");
    }
    let mut factors = Vec::new();
    for pair in toks.chunks(2) {
        let kind = ConeKind::from_tag(pair[0])
            .ok_or_else(|| FormatError { line: n, message: format!("unknown cone kind '{}'", pair[0]) })?;
        let size = parse_usize(n, Some(pair[1]))?;
        factors.push(ConeFactor { kind, size });
    }
    Ok(ConeSpec::new(factors))
}

pub fn read_program_file(text: &str) -> Result<ProgramFile, FormatError> {
    let mut r = LineReader::new(text);
    let (n, toks) = r.next()?;
    if toks != [MAGIC, VERSION] {
        return LineReader::err_at(n, format!("expected header '{MAGIC} {VERSION}'"));
    }
    let (_, name) = r.expect("name")?;
    let name = match name.join(" ").as_str() {
        "-" => String::new(),
        s => s.to_string(),
    };
    let (n, dims) = r.expect("dims")?;
    if dims.len() != 3 {
        return LineReader::err_at(n, "dims needs p n m");
    }
    let p = parse_usize(n, Some(dims[0]))?;
    let nx = parse_usize(n, Some(dims[1]))?;
    let m = parse_usize(n, Some(dims[2]))?;

    let mut one_hot = Vec::new();
    let mut meta = Vec::new();
    let mut theta = None;
    loop {
        let Some(toks) = r.peek() else { return r.err("missing data section") };
        match toks[0] {
            "onehot" => {
                let (n, t) = r.expect("onehot")?;
                let k = parse_usize(n, t.first().copied())?;
                if t.len() != k + 1 {
                    return LineReader::err_at(n, "one-hot group size does not match its members");
                }
                let g = t[1..].iter().map(|s| parse_usize(n, Some(s))).collect::<Result<Vec<_>, _>>()?;
                one_hot.push(g);
            }
            "meta" => {
                let (n, t) = r.expect("meta")?;
                let Some(key) = t.first() else { return LineReader::err_at(n, "meta needs a key") };
                meta.push((key.to_string(), t[1..].join(" ")));
            }
            "theta" => {
                let (n, t) = r.expect("theta")?;
                let count = parse_usize(n, t.first().copied())?;
                let mut verts = Vec::with_capacity(count);
                for _ in 0..count {
                    let (vn, vt) = r.expect("v")?;
                    if vt.len() != p {
                        return LineReader::err_at(vn, format!("vertex needs {p} coordinates"));
                    }
                    let vals = vt.iter().map(|s| parse_f64(vn, s)).collect::<Result<Vec<_>, _>>()?;
                    verts.push(DVector::from_vec(vals));
                }
                theta = Some(Polytope::new(verts).map_err(|e| FormatError { line: n, message: e.to_string() })?);
            }
            "data" => break,
            other => return r.err(format!("unexpected '{other}'")),
        }
    }
    let (n, kind) = r.expect("data")?;
    let data = match kind.first().copied() {
        Some("affine") => {
            let cone = read_cones(&mut r)?;
            let c = r.read_vec("c")?;
            let a = r.read_mat("a")?;
            let c0 = r.read_vec("c0")?;
            let c_theta = r.read_mat("c_theta")?;
            let b = r.read_mat("b")?;
            let mut b_theta = vec![nalgebra::DMatrix::zeros(a.nrows(), p); m + 1];
            while r.peek().is_some_and(|t| t[0] == "b_theta") {
                let (bn, t) = r.expect("b_theta")?;
                let k = parse_usize(bn, t.first().copied())?;
                if k > m {
                    return LineReader::err_at(bn, format!("bit index {k} out of range"));
                }
                b_theta[k] = r.read_mat("m")?;
            }
            ProgramData::Affine(AffineEncoding { c, a, cone, c0, c_theta, b, b_theta })
        }
        Some("table") => {
            let count = parse_usize(n, kind.get(1).copied())?;
            let mut rows = Vec::with_capacity(count);
            for _ in 0..count {
                let (en, t) = r.expect("entry")?;
                let d: Commutation = t
                    .first()
                    .ok_or_else(|| FormatError { line: en, message: "entry needs a commutation".into() })?
                    .parse()
                    .map_err(|e: super::ProblemError| FormatError { line: en, message: e.to_string() })?;
                let cone = read_cones(&mut r)?;
                let c = r.read_vec("c")?;
                let c_theta = r.read_vec("c_theta")?;
                let (cn, ct) = r.expect("c0")?;
                if ct.len() != 1 {
                    return LineReader::err_at(cn, "c0 needs one value");
                }
                let c0 = parse_f64(cn, ct[0])?;
                let a = r.read_mat("a")?;
                let b = r.read_vec("b")?;
                let b_theta = r.read_mat("b_theta")?;
                rows.push((d, ConicTemplate { c, c_theta, c0, a, b, b_theta, cone }));
            }
            ProgramData::Table(rows)
        }
        _ => return LineReader::err_at(n, "data must be 'affine' or 'table <count>'"),
    };
    r.expect("end")?;
    if !r.at_end() {
        return r.err("trailing content after 'end'");
    }
    let program = ParametricProgram { name, p, n: nx, m, one_hot, data };
    let diags = program.validate();
    if let Some(first) = diags.first() {
        return LineReader::err_at(1, format!("invalid program: {first}"));
    }
    Ok(ProgramFile { program, theta, meta })
}
