//! Number recognition: digit numerals (with thousands separators and a
//! decimal part), English cardinal words up to the billions, and percent
//! markers attached to either. Ordinals are not numbers.

use std::ops::Range;
use std::sync::OnceLock;

use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};
use regex::Regex;
use thiserror::Error;

use super::ElementSpan;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumberError {
    #[error("not a number: {0:?}")]
    NotANumber(String),
}

fn digit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9]{1,3}(?:,[0-9]{3})+(?:\.[0-9]+)?|[0-9]+(?:\.[0-9]+)?").unwrap())
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z]+(?:-[A-Za-z]+)*").unwrap())
}

fn percent_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:[ \t]?%|\s+(?i:percent|per\s+cent)\b)").unwrap())
}

fn digit_scale_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s+(?i:(thousand|million|billion))\b").unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lex {
    Zero,
    Unit(u64),
    Teen(u64),
    Tens(u64),
    TensUnit(u64),
    Hundred,
    Scale(u64),
    And,
}

fn lex_simple(word: &str) -> Option<Lex> {
    let lex = match word {
        "zero" => Lex::Zero,
        "one" => Lex::Unit(1),
        "two" => Lex::Unit(2),
        "three" => Lex::Unit(3),
        "four" => Lex::Unit(4),
        "five" => Lex::Unit(5),
        "six" => Lex::Unit(6),
        "seven" => Lex::Unit(7),
        "eight" => Lex::Unit(8),
        "nine" => Lex::Unit(9),
        "ten" => Lex::Teen(10),
        "eleven" => Lex::Teen(11),
        "twelve" => Lex::Teen(12),
        "thirteen" => Lex::Teen(13),
        "fourteen" => Lex::Teen(14),
        "fifteen" => Lex::Teen(15),
        "sixteen" => Lex::Teen(16),
        "seventeen" => Lex::Teen(17),
        "eighteen" => Lex::Teen(18),
        "nineteen" => Lex::Teen(19),
        "twenty" => Lex::Tens(20),
        "thirty" => Lex::Tens(30),
        "forty" => Lex::Tens(40),
        "fifty" => Lex::Tens(50),
        "sixty" => Lex::Tens(60),
        "seventy" => Lex::Tens(70),
        "eighty" => Lex::Tens(80),
        "ninety" => Lex::Tens(90),
        "hundred" => Lex::Hundred,
        "thousand" => Lex::Scale(1_000),
        "million" => Lex::Scale(1_000_000),
        "billion" => Lex::Scale(1_000_000_000),
        "and" => Lex::And,
        _ => return None,
    };
    Some(lex)
}

fn lex_word(word: &str) -> Option<Lex> {
    let lower = word.to_ascii_lowercase();
    match lower.split_once('-') {
        None => lex_simple(&lower),
        Some((tens, unit)) => match (lex_simple(tens), lex_simple(unit)) {
            (Some(Lex::Tens(t)), Some(Lex::Unit(u))) => Some(Lex::TensUnit(t + u)),
            _ => None,
        },
    }
}

struct WordTok {
    bytes: Range<usize>,
    lex: Lex,
}

/// Parses a below-thousand group starting at token `i`. Returns the value and
/// the index one past the last consumed token.
fn parse_group(toks: &[WordTok], joined: &[bool], i: usize) -> Option<(u64, usize)> {
    let adjacent = |k: usize| k + 1 < toks.len() && joined[k];
    match toks.get(i)?.lex {
        Lex::Zero => Some((0, i + 1)),
        Lex::Unit(u) => {
            if adjacent(i) && toks[i + 1].lex == Lex::Hundred {
                let base = u * 100;
                let mut k = i + 2;
                if adjacent(i + 1) {
                    let mut j = k;
                    if toks[j].lex == Lex::And && adjacent(j) {
                        j += 1;
                    }
                    if let Some((sub, next)) = parse_below_hundred(toks, joined, j) {
                        return Some((base + sub, next));
                    }
                    k = i + 2;
                }
                Some((base, k))
            } else {
                Some((u, i + 1))
            }
        }
        Lex::Teen(_) | Lex::Tens(_) | Lex::TensUnit(_) => parse_below_hundred(toks, joined, i),
        Lex::Hundred | Lex::Scale(_) | Lex::And => None,
    }
}

fn parse_below_hundred(toks: &[WordTok], joined: &[bool], i: usize) -> Option<(u64, usize)> {
    match toks.get(i)?.lex {
        Lex::Unit(u) => Some((u, i + 1)),
        Lex::Teen(t) | Lex::TensUnit(t) => Some((t, i + 1)),
        Lex::Tens(t) => {
            if i + 1 < toks.len() && joined[i] {
                if let Lex::Unit(u) = toks[i + 1].lex {
                    return Some((t + u, i + 2));
                }
            }
            Some((t, i + 1))
        }
        _ => None,
    }
}

/// Parses a full cardinal phrase: groups joined by strictly decreasing scales.
fn parse_cardinal(toks: &[WordTok], joined: &[bool], i: usize) -> Option<(u64, usize)> {
    let (mut group, mut next) = parse_group(toks, joined, i)?;
    let mut total = 0u64;
    let mut last_scale = u64::MAX;
    loop {
        let scale = match toks.get(next) {
            Some(WordTok { lex: Lex::Scale(s), .. }) if joined[next - 1] && *s < last_scale => *s,
            _ => return Some((total + group, next)),
        };
        total += group * scale;
        last_scale = scale;
        let after = next + 1;
        if after < toks.len() && joined[next] {
            let mut j = after;
            if toks[j].lex == Lex::And && j + 1 < toks.len() && joined[j] {
                j += 1;
            }
            if let Some((g, n)) = parse_group(toks, joined, j) {
                group = g;
                next = n;
                continue;
            }
        }
        return Some((total, after));
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn char_before(text: &str, at: usize) -> Option<char> {
    text[..at].chars().next_back()
}

fn char_after(text: &str, at: usize) -> Option<char> {
    text[at..].chars().next()
}

fn rational_from_digits(surface: &str) -> BigRational {
    let cleaned: String = surface.chars().filter(|c| *c != ',').collect();
    let (int_part, frac_part) = cleaned.split_once('.').unwrap_or((&cleaned, ""));
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().expect("digit regex guarantees digits");
    let denom = num::pow(BigInt::from(10u32), frac_part.len());
    BigRational::new(numer, denom)
}

/// Extends `end` over an attached percent marker, if any.
fn percent_suffix(text: &str, end: usize) -> Option<usize> {
    percent_re().find(&text[end..]).map(|m| end + m.end())
}

fn digit_spans(text: &str, out: &mut Vec<ElementSpan>) {
    for m in digit_re().find_iter(text) {
        let (start, mut end) = (m.start(), m.end());
        match char_before(text, start) {
            Some(c) if is_word_char(c) => continue,
            Some('-') => {
                if char_before(text, start - 1).is_some_and(char::is_alphabetic) {
                    continue;
                }
            }
            Some('.' | ',')
                if char_before(text, start - 1).is_some_and(|c| c.is_ascii_digit()) => {
                    continue;
                }
            _ => {}
        }
        match char_after(text, end) {
            Some(c) if is_word_char(c) => continue,
            Some('.' | ',')
                if char_after(text, end + 1).is_some_and(|c| c.is_ascii_digit()) => {
                    continue;
                }
            _ => {}
        }
        let mut value = rational_from_digits(m.as_str());
        if let Some(scale) = digit_scale_re().captures(&text[end..]) {
            let multiplier: u64 = match scale[1].to_ascii_lowercase().as_str() {
                "thousand" => 1_000,
                "million" => 1_000_000,
                _ => 1_000_000_000,
            };
            value *= BigRational::from_integer(BigInt::from(multiplier));
            end += scale.get(0).unwrap().end();
        }
        let (end, is_percent) = match percent_suffix(text, end) {
            Some(e) => (e, true),
            None => (end, false),
        };
        out.push(ElementSpan::number(text, start..end, value, is_percent));
    }
}

fn word_spans(text: &str, out: &mut Vec<ElementSpan>) {
    let toks: Vec<WordTok> = word_re()
        .find_iter(text)
        .filter_map(|m| {
            let bounded_left = char_before(text, m.start()).is_none_or(|c| !is_word_char(c));
            let bounded_right = char_after(text, m.end())
                .is_none_or(|c| !is_word_char(c) && c != '\'' && c != '\u{2019}');
            if !(bounded_left && bounded_right) {
                return None;
            }
            lex_word(m.as_str()).map(|lex| WordTok { bytes: m.range(), lex })
        })
        .collect();
    // joined[k]: only whitespace separates tokens k and k+1.
    let joined: Vec<bool> = (0..toks.len())
        .map(|k| {
            k + 1 < toks.len() && {
                let gap = &text[toks[k].bytes.end..toks[k + 1].bytes.start];
                !gap.is_empty() && gap.chars().all(char::is_whitespace)
            }
        })
        .collect();

    let mut i = 0;
    while i < toks.len() {
        match parse_cardinal(&toks, &joined, i) {
            Some((value, next)) => {
                let start = toks[i].bytes.start;
                let end = toks[next - 1].bytes.end;
                let (end, is_percent) = match percent_suffix(text, end) {
                    Some(e) => (e, true),
                    None => (end, false),
                };
                let value = BigRational::from_integer(BigInt::from(value));
                out.push(ElementSpan::number(text, start..end, value, is_percent));
                i = next;
            }
            None => i += 1,
        }
    }
}

/// Finds every number in `text`, sorted by position and non-overlapping.
pub fn extract_numbers(text: &str) -> Vec<ElementSpan> {
    let mut spans = Vec::new();
    digit_spans(text, &mut spans);
    word_spans(text, &mut spans);
    spans.sort_by_key(|s| s.byte_range().start);
    // Digit and word matches never share characters, but a percent suffix
    // could in principle run into a following match; keep the earlier one.
    let mut out: Vec<ElementSpan> = Vec::with_capacity(spans.len());
    for span in spans {
        if out.last().is_none_or(|prev| prev.byte_range().end <= span.byte_range().start) {
            out.push(span);
        }
    }
    out
}

/// Parses a single number surface into its value and percent flag.
pub fn normalize_number(surface: &str) -> Result<(BigRational, bool), NumberError> {
    let spans = extract_numbers(surface);
    match spans.as_slice() {
        [only] if only.byte_range() == (0..surface.len()) => {
            Ok((only.numeric_value().cloned().expect("number span has a value"), only.is_percent()))
        }
        _ => Err(NumberError::NotANumber(surface.to_string())),
    }
}

/// Renders a rational as a plain decimal string: no separators, no trailing
/// zeros. Non-terminating expansions are cut at 20 fractional digits.
pub fn canonical_decimal(value: &BigRational) -> String {
    let negative = value.is_negative();
    let value = value.abs();
    let int_part = value.to_integer();
    let mut frac = value - BigRational::from_integer(int_part.clone());
    let mut digits = String::new();
    let ten = BigRational::from_integer(BigInt::from(10));
    while !frac.is_zero() && digits.len() < 20 {
        frac *= &ten;
        let d = frac.to_integer();
        digits.push(char::from(b'0' + d.to_u8().unwrap_or(0)));
        frac -= BigRational::from_integer(d);
    }
    let digits = digits.trim_end_matches('0');
    let sign = if negative { "-" } else { "" };
    if digits.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{digits}")
    }
}
