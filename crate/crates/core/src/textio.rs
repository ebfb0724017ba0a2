//! Line-oriented text helpers shared by the program and tree file formats.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hexfloat;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

pub(crate) fn write_floats(out: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.push(' ');
        out.push_str(&hexfloat::format(v));
    }
}

pub(crate) fn write_vec(out: &mut String, key: &str, v: &DVector<f64>) {
    write!(out, "{key} {}", v.len()).unwrap();
    write_floats(out, v.iter().copied());
    out.push('\n');
}

pub(crate) fn write_mat(out: &mut String, key: &str, m: &DMatrix<f64>) {
    writeln!(out, "{key} {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        write_floats(out, m.row(r).iter().copied());
        out.push('\n');
    }
}

/// Tokenizing reader that skips blank lines and `#` comments.
pub(crate) struct LineReader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { lines, pos: 0 }
    }

    pub fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .map(|(n, _)| *n)
            .unwrap_or_else(|| self.lines.last().map_or(1, |(n, _)| n + 1))
    }

    pub fn err<T>(&self, message: impl Into<String>) -> Result<T, FormatError> {
        Err(FormatError { line: self.line_no(), message: message.into() })
    }

    pub fn err_at<T>(line: usize, message: impl Into<String>) -> Result<T, FormatError> {
        Err(FormatError { line, message: message.into() })
    }

    pub fn peek(&self) -> Option<Vec<&'a str>> {
        self.lines.get(self.pos).map(|(_, l)| l.split_whitespace().collect())
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }

    /// Next line split into tokens, with its line number.
    pub fn next(&mut self) -> Result<(usize, Vec<&'a str>), FormatError> {
        match self.lines.get(self.pos) {
            Some((n, l)) => {
                self.pos += 1;
                Ok((*n, l.split_whitespace().collect()))
            }
            None => self.err("unexpected end of file"),
        }
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    pub fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), FormatError> {
        let (n, toks) = self.next()?;
        if toks.first() != Some(&key) {
            return Self::err_at(n, format!("expected '{key}', found '{}'", toks.join(" ")));
        }
        Ok((n, toks[1..].to_vec()))
    }

    pub fn read_vec(&mut self, key: &str) -> Result<DVector<f64>, FormatError> {
        let (n, toks) = self.expect(key)?;
        let len = parse_usize(n, toks.first().copied())?;
        if toks.len() != len + 1 {
            return Self::err_at(n, format!("'{key}' declares {len} values, found {}", toks.len() - 1));
        }
        let vals = toks[1..].iter().map(|t| parse_f64(n, t)).collect::<Result<Vec<_>, _>>()?;
        Ok(DVector::from_vec(vals))
    }

    pub fn read_mat(&mut self, key: &str) -> Result<DMatrix<f64>, FormatError> {
        let (n, toks) = self.expect(key)?;
        if toks.len() != 2 {
            return Self::err_at(n, format!("'{key}' needs rows and cols"));
        }
        let rows = parse_usize(n, Some(toks[0]))?;
        let cols = parse_usize(n, Some(toks[1]))?;
        self.read_mat_body(rows, cols)
    }

    pub fn read_mat_body(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, FormatError> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let (n, toks) = self.next()?;
            if toks.len() != cols {
                return Self::err_at(n, format!("expected {cols} values, found {}", toks.len()));
            }
            for (c, t) in toks.iter().enumerate() {
                m[(r, c)] = parse_f64(n, t)?;
            }
        }
        Ok(m)
    }
}

pub(crate) fn parse_usize(line: usize, tok: Option<&str>) -> Result<usize, FormatError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| FormatError { line, message: format!("expected an integer, found {tok:?}") })
}

pub(crate) fn parse_f64(line: usize, tok: &str) -> Result<f64, FormatError> {
    hexfloat::parse(tok).ok_or_else(|| FormatError { line, message: format!("invalid number '{tok}'") })
}
