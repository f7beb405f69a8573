//! Human-readable quantities: `1Mb`, `500MB`, `24GiB`, `4s`, `250ms`.
//!
//! `b` is bits and `B` is bytes; prefixes `k M G T` are decimal and
//! `Ki Mi Gi Ti` binary. A trailing `/s` or `ps` is accepted and ignored so
//! rates can be written either way.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("cannot parse `{input}`: {reason}")]
pub struct UnitError {
    pub input: String,
    pub reason: String,
}

fn err(input: &str, reason: impl Into<String>) -> UnitError {
    UnitError {
        input: input.to_string(),
        reason: reason.into(),
    }
}

/// Splits `"1.5e9MB"` into `("1.5e9", "MB")`. An `e` belongs to the number
/// only when a digit or sign follows it.
fn split_number(s: &str) -> (&str, &str) {
    let bytes = s.as_bytes();
    let mut end = 0;
    while end < bytes.len() {
        let c = bytes[end];
        let next = bytes.get(end + 1).copied();
        let in_number = c.is_ascii_digit()
            || c == b'.'
            || c == b'_'
            || ((c == b'-' || c == b'+') && (end == 0 || matches!(bytes[end - 1], b'e' | b'E')))
            || (matches!(c, b'e' | b'E')
                && end > 0
                && matches!(next, Some(d) if d.is_ascii_digit() || d == b'-' || d == b'+'));
        if !in_number {
            break;
        }
        end += 1;
    }
    (&s[..end], s[end..].trim())
}

fn parse_number(input: &str, text: &str) -> Result<f64, UnitError> {
    let value: f64 = text
        .replace('_', "")
        .parse()
        .map_err(|_| err(input, "missing or malformed number"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(err(input, "value must be finite and non-negative"));
    }
    Ok(value)
}

fn prefix_factor(prefix: &str) -> Option<f64> {
    Some(match prefix {
        "" => 1.0,
        "k" | "K" => 1e3,
        "M" => 1e6,
        "G" => 1e9,
        "T" => 1e12,
        "Ki" => 1024.0,
        "Mi" => 1024f64.powi(2),
        "Gi" => 1024f64.powi(3),
        "Ti" => 1024f64.powi(4),
        _ => return None,
    })
}

fn strip_rate(unit: &str) -> &str {
    unit.strip_suffix("/s")
        .or_else(|| unit.strip_suffix("ps"))
        .unwrap_or(unit)
}

/// Parses an amount of data and returns it in bits. A bare number is taken
/// in `default_unit_bits` (1 for bits, 8 for bytes).
fn parse_data_bits(input: &str, default_unit_bits: f64) -> Result<f64, UnitError> {
    let s = input.trim();
    let (number, unit) = split_number(s);
    let value = parse_number(input, number)?;
    let unit = strip_rate(unit);
    if unit.is_empty() {
        return Ok(value * default_unit_bits);
    }
    let (prefix, base) = if let Some(p) = unit.strip_suffix('b') {
        (p, 1.0)
    } else if let Some(p) = unit.strip_suffix('B') {
        (p, 8.0)
    } else {
        return Err(err(input, format!("unknown unit `{unit}` (use b for bits, B for bytes)")));
    };
    let factor = prefix_factor(prefix).ok_or_else(|| err(input, format!("unknown prefix `{prefix}`")))?;
    Ok(value * factor * base)
}

/// Bits (or bits/sec); bare numbers are bits.
pub fn parse_bits(input: &str) -> Result<f64, UnitError> {
    parse_data_bits(input, 1.0)
}

/// Bytes (or bytes/sec); bare numbers are bytes.
pub fn parse_bytes(input: &str) -> Result<f64, UnitError> {
    parse_data_bits(input, 8.0).map(|bits| bits / 8.0)
}

/// Seconds; accepts `s`, `ms`, `us`, `min`, `h` suffixes. Bare numbers are
/// seconds.
pub fn parse_seconds(input: &str) -> Result<f64, UnitError> {
    let s = input.trim();
    let (number, unit) = split_number(s);
    let value = parse_number(input, number)?;
    let factor = match unit {
        "" | "s" | "sec" => 1.0,
        "ms" => 1e-3,
        "us" => 1e-6,
        "min" => 60.0,
        "h" => 3600.0,
        other => return Err(err(input, format!("unknown time unit `{other}`"))),
    };
    Ok(value * factor)
}
