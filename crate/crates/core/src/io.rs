//! Plain-text artifact formats: CSV with 9-significant-digit numbers and LF
//! line endings.

use crate::error::{Error, Result};

/// `printf("%.9g")` formatting.
pub fn fmt_g9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Round to 9 significant digits first; the exponent after rounding picks
    // the notation, as in C.
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Render a CSV document: header, one row per entry, LF endings.
pub fn csv_document<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: AsRef<str>,
{
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(r.as_ref());
        out.push('\n');
    }
    out
}

pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_g9(v)).collect::<Vec<_>>().join(",")
}

/// Sample dump `x1,...,xd,class`; a missing class is written as `-1`.
pub fn samples_csv(points: &[f64], dim: usize, classes: &[Option<usize>]) -> String {
    let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).chain(["class".to_string()]).collect();
    let rows = points.chunks_exact(dim).zip(classes).map(|(row, c)| {
        let mut s = csv_row(row);
        s.push(',');
        match c {
            Some(c) => s.push_str(&c.to_string()),
            None => s.push_str("-1"),
        }
        s
    });
    csv_document(&header.join(","), rows)
}

/// Samples parsed from a `x1,...,xd[,class]` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub dim: usize,
    pub points: Vec<f64>,
    pub classes: Vec<Option<usize>>,
}

pub fn parse_samples_csv(text: &str) -> Result<SampleTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty sample file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_class = cols.last() == Some(&"class");
    let dim = cols.len() - usize::from(has_class);
    if dim == 0 || cols[..dim].iter().enumerate().any(|(i, c)| *c != format!("x{}", i + 1)) {
        return Err(Error::Parse(format!("unexpected sample header `{header}`")));
    }
    let mut points = Vec::new();
    let mut classes = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!("row {}: expected {} fields, got {}", n + 1, cols.len(), fields.len())));
        }
        for f in &fields[..dim] {
            let v: f64 = f.parse().map_err(|_| Error::Parse(format!("row {}: bad number `{f}`", n + 1)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("row {}: non-finite value", n + 1)));
            }
            points.push(v);
        }
        classes.push(if has_class {
            let c: i64 = fields[dim]
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad class `{}`", n + 1, fields[dim])))?;
            usize::try_from(c).ok()
        } else {
            None
        });
    }
    Ok(SampleTable { dim, points, classes })
}
