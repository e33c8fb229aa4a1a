//! Dollar-amount extraction.
//!
//! Three surface forms are recognized: `$<number>`, `$<number> <scale>` and
//! `<number> <scale> dollars`, with `scale` one of thousand, million, billion
//! or trillion (any case). Numbers may carry comma grouping and a decimal
//! point. Values are exact decimals.

use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open range of character (Unicode scalar) offsets into a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TextSpan {
    pub start: usize,
    pub end: usize,
}

impl TextSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// The substring of `text` this span covers.
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start).unwrap_or(text.len());
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1).unwrap_or(text.len())
        };
        &text[start..end]
    }
}

/// A dollar amount found in text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: Decimal,
    pub raw: String,
    pub span: TextSpan,
    /// `floor(log10(value))`, absent for a zero amount.
    pub magnitude: Option<i32>,
}

const NUMBER: &str = r"\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?";
const SCALE: &str = r"thousand|million|billion|trillion";

fn pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let src = format!(
            r"(?i)\$(?P<a_num>{NUMBER})(?:\s+(?P<a_scale>{SCALE})\b)?|\b(?P<b_num>{NUMBER})\s+(?P<b_scale>{SCALE})\s+dollars\b"
        );
        Regex::new(&src).expect("measurement pattern compiles")
    })
}

fn scale_factor(scale: &str) -> Decimal {
    match scale.to_ascii_lowercase().as_str() {
        "thousand" => Decimal::from(1_000u64),
        "million" => Decimal::from(1_000_000u64),
        "billion" => Decimal::from(1_000_000_000u64),
        "trillion" => Decimal::from(1_000_000_000_000u64),
        _ => Decimal::ONE,
    }
}

fn parse_number(num: &str, scale: Option<&str>) -> Option<Decimal> {
    let digits: String = num.chars().filter(|c| *c != ',').collect();
    let base = Decimal::from_str(&digits).ok()?;
    let value = match scale {
        Some(s) => base.checked_mul(scale_factor(s))?,
        None => base,
    };
    Some(value.normalize())
}

/// A number directly followed by more numeric material (`$1,0000`, `$5.5.5`)
/// is a partial match of something we do not understand.
fn runs_on(text: &str, end: usize) -> bool {
    let mut rest = text[end..].chars();
    match rest.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some(',') | Some('.') => rest.next().is_some_and(|c| c.is_ascii_digit()),
        _ => false,
    }
}

fn negated(text: &str, start: usize) -> bool {
    matches!(text[..start].chars().next_back(), Some('-' | '\u{2212}'))
}

/// Finds every non-overlapping dollar amount in `text`, left to right.
pub fn extract_measurements(text: &str) -> Vec<Measurement> {
    let mut out = Vec::new();
    // Running byte -> char offset conversion; matches arrive in order.
    let mut char_pos = 0usize;
    let mut byte_pos = 0usize;
    let mut to_chars = |byte: usize| {
        char_pos += text[byte_pos..byte].chars().count();
        byte_pos = byte;
        char_pos
    };

    for caps in pattern().captures_iter(text) {
        let whole = caps.get(0).expect("group 0 always present");
        let (num, scale) = match caps.name("a_num") {
            Some(n) => (n, caps.name("a_scale")),
            None => (
                caps.name("b_num").expect("alternation guarantees b_num"),
                caps.name("b_scale"),
            ),
        };
        if runs_on(text, num.end()) || negated(text, whole.start()) {
            continue;
        }
        let Some(value) = parse_number(num.as_str(), scale.map(|s| s.as_str())) else {
            continue;
        };
        let start = to_chars(whole.start());
        let end = to_chars(whole.end());
        out.push(Measurement {
            magnitude: magnitude_of(value).ok(),
            value,
            raw: whole.as_str().to_string(),
            span: TextSpan { start, end },
        });
    }
    out
}

/// Parses a string that is exactly one measurement.
pub fn parse_amount(raw: &str) -> Option<Decimal> {
    let found = extract_measurements(raw);
    match found.as_slice() {
        [m] if m.raw.len() == raw.len() => Some(m.value),
        _ => None,
    }
}

/// `floor(log10(value))`, exact for decimals.
pub fn magnitude_of(value: Decimal) -> Result<i32> {
    if value <= Decimal::ZERO {
        return Err(Error::NonPositive(value.to_string()));
    }
    let v = value.normalize();
    let digits = v.mantissa().unsigned_abs().to_string().len() as i32;
    Ok(digits - 1 - v.scale() as i32)
}
