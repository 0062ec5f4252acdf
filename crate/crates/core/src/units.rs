//! Quantities written with unit suffixes, e.g. `"1.25 kHz"` or `"55 µm"`.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Frequency,
    Length,
    Time,
    Temperature,
    Energy,
}

impl Dimension {
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dimension::Frequency => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6)],
            Dimension::Length => &[("m", 1.0), ("mm", 1e-3), ("µm", 1e-6), ("um", 1e-6), ("nm", 1e-9)],
            Dimension::Time => &[("s", 1.0), ("ms", 1e-3), ("µs", 1e-6), ("us", 1e-6), ("ns", 1e-9)],
            Dimension::Temperature => &[("K", 1.0), ("mK", 1e-3), ("µK", 1e-6), ("uK", 1e-6), ("nK", 1e-9)],
            Dimension::Energy => &[("J", 1.0)],
        }
    }

    pub fn si_unit(self) -> &'static str {
        self.units()[0].0
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Dimension::Frequency => "frequency",
            Dimension::Length => "length",
            Dimension::Time => "time",
            Dimension::Temperature => "temperature",
            Dimension::Energy => "energy",
        };
        f.write_str(name)
    }
}

/// Parse `"<number> <unit>"` into SI. The space is optional; a bare number
/// is taken as already in SI.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let s = text.trim();
    let split = s
        .char_indices()
        .find(|&(i, c)| c.is_alphabetic() && !(c == 'e' || c == 'E') || (c == 'e' || c == 'E') && !exponent_follows(s, i))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("cannot read a number from {text:?}"))?;
    let unit = unit.trim();
    let scale = if unit.is_empty() {
        1.0
    } else {
        dim.units()
            .iter()
            .find(|(u, _)| *u == unit || (unit.starts_with('μ') && u.starts_with('µ') && unit[2..] == u[2..]))
            .map(|&(_, k)| k)
            .ok_or_else(|| {
                let known: Vec<&str> = dim.units().iter().map(|(u, _)| *u).collect();
                format!("unit {unit:?} is not a {dim} unit (expected one of {})", known.join(", "))
            })?
    };
    let v = value * scale;
    if !v.is_finite() {
        return Err(format!("{text:?} is not finite"));
    }
    Ok(v)
}

// true when the `e` at byte `i` starts a float exponent such as `e-6`
fn exponent_follows(s: &str, i: usize) -> bool {
    let rest = &s[i + 1..];
    let rest = rest.strip_prefix(['+', '-']).unwrap_or(rest);
    rest.starts_with(|c: char| c.is_ascii_digit()) && i > 0
}
