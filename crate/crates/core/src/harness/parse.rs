//! Text parsers for SNR grids, comma lists and key-value config files.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ParseError {
    pub message: String,
}

impl ParseError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// Upper bound on grid points, so a tiny step cannot exhaust memory.
pub const MAX_GRID_POINTS: usize = 10_000;

fn parse_finite(token: &str) -> Result<f64, ParseError> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| ParseError::new(format!("not a number: {:?}", token.trim())))?;
    if !v.is_finite() {
        return Err(ParseError::new(format!("not finite: {:?}", token.trim())));
    }
    Ok(v)
}

/// Parses `lo:step:hi` (inclusive), a single value, or a comma list. The
/// result is strictly increasing.
pub fn parse_snr_grid(text: &str) -> Result<Vec<f64>, ParseError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ParseError::new("empty SNR grid"));
    }
    let grid = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [lo, step, hi] = parts[..] else {
            return Err(ParseError::new(format!("expected lo:step:hi, found {text:?}")));
        };
        let (lo, step, hi) = (parse_finite(lo)?, parse_finite(step)?, parse_finite(hi)?);
        if step <= 0.0 {
            return Err(ParseError::new(format!("step must be positive, found {step}")));
        }
        if hi < lo {
            return Err(ParseError::new(format!("hi {hi} below lo {lo}")));
        }
        let span = (hi - lo) / step;
        if span >= MAX_GRID_POINTS as f64 {
            return Err(ParseError::new(format!("grid exceeds {MAX_GRID_POINTS} points")));
        }
        // Tolerate round-off so 0:0.1:1 includes 1.
        let n = (span + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect::<Vec<_>>()
    } else {
        parse_f64_list(text)?
    };
    if grid.len() > MAX_GRID_POINTS {
        return Err(ParseError::new(format!("grid exceeds {MAX_GRID_POINTS} points")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ParseError::new("SNR grid must be strictly increasing"));
    }
    Ok(grid)
}

/// Splits a comma list, trimming whitespace. Empty items are rejected.
pub fn parse_list(text: &str) -> Result<Vec<String>, ParseError> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            if item.is_empty() {
                Err(ParseError::new(format!("empty item in list {text:?}")))
            } else {
                Ok(item.to_string())
            }
        })
        .collect()
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>, ParseError> {
    parse_list(text)?.iter().map(|s| parse_finite(s)).collect()
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
/// Returns the pairs in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ParseError::new(format!("line {}: expected key = value", idx + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ParseError::new(format!("line {}: empty key or value", idx + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// `on`/`off` style switch.
pub fn parse_switch(text: &str) -> Result<bool, ParseError> {
    match text.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(ParseError::new(format!("expected on or off, found {other:?}"))),
    }
}

/// `printf("%.9g")`: 9 significant digits, trailing zeros dropped.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 9;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let decimals = (P - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
