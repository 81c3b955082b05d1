//! Closed-form operation counts for ISTA and its periodically sketched variant.
//!
//! One dense iteration costs `4mn + 3n − m` additions and multiplications; a
//! sketched one costs the same with `l` in place of `m`. Precomputing `SA` and
//! `Sy` is not counted.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::is_ogu;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub n: u64,
    pub m: u64,
    pub l: u64,
    pub period: u64,
    pub t: u64,
    pub o_ista: u64,
    pub o_sketch: u64,
    pub n_ista: u64,
    pub n_sketch: u64,
    pub c_psista: u64,
    pub c_ista: u64,
    /// Rounded half-up to one decimal.
    pub percent_of_ista: f64,
}

impl ComplexityReport {
    /// Percentage in tenths of a percent, the exact integer behind `percent_of_ista`.
    pub fn percent_tenths(&self) -> u64 {
        percent_tenths(self.c_psista, self.c_ista)
    }

    pub fn cell(&self) -> String {
        let tenths = self.percent_tenths();
        format!("{} ({}.{}%)", self.c_psista, tenths / 10, tenths % 10)
    }
}

fn positive(name: &str, v: u64) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be positive")));
    }
    Ok(())
}

fn ops(rows: u64, n: u64) -> Result<u64> {
    4u64.checked_mul(rows)
        .and_then(|v| v.checked_mul(n))
        .and_then(|v| v.checked_add(3 * n))
        .map(|v| v - rows)
        .ok_or_else(|| Error::InvalidArgument("operation count overflows u64".into()))
}

/// Per-iteration count with `l = None` for the dense update and `Some(l)` for the sketched one.
pub fn per_iter_ops(m: u64, n: u64, l: Option<u64>) -> Result<u64> {
    positive("m", m)?;
    positive("n", n)?;
    match l {
        None => ops(m, n),
        Some(l) => {
            positive("l", l)?;
            ops(l, n)
        }
    }
}

pub fn n_ista(t: u64, period: u64) -> Result<u64> {
    positive("T", t)?;
    positive("P", period)?;
    let tail = if (t - 1) % period == period - 1 { 0 } else { 1 };
    Ok(t / period + tail)
}

pub fn n_sketch(t: u64, period: u64) -> Result<u64> {
    Ok(t - n_ista(t, period)?)
}

/// Counts dense iterations by walking the schedule one step at a time.
pub fn schedule_count_crosscheck(t: u64, period: u64) -> Result<u64> {
    positive("T", t)?;
    positive("P", period)?;
    Ok((1..=t).filter(|&k| is_ogu(k as usize, period as usize)).count() as u64)
}

fn percent_tenths(part: u64, whole: u64) -> u64 {
    let (part, whole) = (part as u128, whole as u128);
    ((2000 * part + whole) / (2 * whole)) as u64
}

pub fn total_complexity(n: u64, m: u64, l: u64, period: u64, t: u64) -> Result<ComplexityReport> {
    if l > m {
        return Err(Error::InvalidArgument(format!("sketch size l={l} exceeds m={m}")));
    }
    let o_ista = per_iter_ops(m, n, None)?;
    let o_sketch = per_iter_ops(m, n, Some(l))?;
    let n_ogu = n_ista(t, period)?;
    let n_sgu = t - n_ogu;
    let overflow = || Error::InvalidArgument("total count overflows u64".into());
    let c_ista = o_ista.checked_mul(t).ok_or_else(overflow)?;
    let c_psista = n_ogu
        .checked_mul(o_ista)
        .and_then(|a| n_sgu.checked_mul(o_sketch).and_then(|b| a.checked_add(b)))
        .ok_or_else(overflow)?;
    Ok(ComplexityReport {
        n,
        m,
        l,
        period,
        t,
        o_ista,
        o_sketch,
        n_ista: n_ogu,
        n_sketch: n_sgu,
        c_psista,
        c_ista,
        percent_of_ista: percent_tenths(c_psista, c_ista) as f64 / 10.0,
    })
}

/// One report per (P, l) pair, rows in `periods` order and columns in `ls` order.
pub fn complexity_table(n: u64, m: u64, t: u64, ls: &[u64], periods: &[u64]) -> Result<Vec<Vec<ComplexityReport>>> {
    if ls.is_empty() || periods.is_empty() {
        return Err(Error::InvalidArgument("empty l or P list".into()));
    }
    periods
        .iter()
        .map(|&p| ls.iter().map(|&l| total_complexity(n, m, l, p, t)).collect())
        .collect()
}

/// Writes the table with one row per period and one column per sketch size.
pub fn write_table_csv(out: &mut impl Write, table: &[Vec<ComplexityReport>]) -> Result<()> {
    let first = table
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty complexity table".into()))?;
    write!(out, "P")?;
    for r in first {
        write!(out, ",l={}", r.l)?;
    }
    writeln!(out)?;
    for row in table {
        write!(out, "{}", row[0].period)?;
        for r in row {
            write!(out, ",{}", r.cell())?;
        }
        writeln!(out)?;
    }
    Ok(())
}
