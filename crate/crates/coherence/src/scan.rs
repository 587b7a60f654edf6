//! Low-level scanning of numeric literals as they appear in traces:
//! optional `$`, thousands separators, decimals, trailing `%`.

use num_bigint::BigInt;
use num_rational::BigRational;

/// A numeric literal found in text. `value` is the unsigned magnitude before
/// any percent scaling; signs are the caller's business because `-` is
/// ambiguous between unary minus and binary subtraction.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ScannedNumber {
    pub value: BigRational,
    /// Decimal places as written ("0.330" has 3, "15" has 0).
    pub decimals: u32,
    pub percent: bool,
    pub currency: bool,
    /// Byte range of the literal, including any `$` prefix and `%` suffix.
    pub start: usize,
    pub end: usize,
}

fn pow10(exp: u32) -> BigInt {
    BigInt::from(10u32).pow(exp)
}

/// Scan one literal starting at `start`, which must point at a digit or a `$`
/// directly preceding one. Returns `None` if no digit is found there.
pub(crate) fn scan_number_at(text: &str, start: usize) -> Option<ScannedNumber> {
    let bytes = text.as_bytes();
    let mut pos = start;
    let mut currency = false;

    if bytes.get(pos) == Some(&b'$') {
        currency = true;
        pos += 1;
        // allow a single space between the currency sign and the digits
        if bytes.get(pos) == Some(&b' ') && bytes.get(pos + 1).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_digit) {
        return None;
    }

    let int_start = pos;
    while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
        pos += 1;
    }

    // Thousands separators: a comma counts only when followed by exactly
    // three digits and no fourth, so "16, 4" and "1,0800" stay two numbers.
    let mut int_digits: String = text[int_start..pos].to_string();
    if pos - int_start <= 3 {
        loop {
            if bytes.get(pos) != Some(&b',') {
                break;
            }
            let group = &bytes[pos + 1..];
            if group.len() >= 3
                && group[..3].iter().all(u8::is_ascii_digit)
                && !group.get(3).is_some_and(u8::is_ascii_digit)
            {
                int_digits.push_str(&text[pos + 1..pos + 4]);
                pos += 4;
            } else {
                break;
            }
        }
    }

    // Decimal part: a dot counts only when followed by a digit, so sentence
    // periods ("= 30.") end the literal.
    let mut decimals = 0u32;
    let mut frac_digits = String::new();
    if bytes.get(pos) == Some(&b'.') && bytes.get(pos + 1).is_some_and(u8::is_ascii_digit) {
        pos += 1;
        let frac_start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        frac_digits = text[frac_start..pos].to_string();
        decimals = frac_digits.len() as u32;
    }

    let percent = bytes.get(pos) == Some(&b'%');
    if percent {
        pos += 1;
    }

    let int_part: BigInt = int_digits.parse().expect("digits parse as BigInt");
    let value = if decimals == 0 {
        BigRational::from_integer(int_part)
    } else {
        let frac: BigInt = frac_digits.parse().expect("digits parse as BigInt");
        let scale = pow10(decimals);
        BigRational::new(int_part * &scale + frac, scale)
    };

    Some(ScannedNumber {
        value,
        decimals,
        percent,
        currency,
        start,
        end: pos,
    })
}

/// All literals in the text, left to right, non-overlapping.
pub(crate) fn scan_all_numbers(text: &str) -> Vec<ScannedNumber> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut pos = 0;
    while pos < bytes.len() {
        let at_candidate = bytes[pos].is_ascii_digit()
            || (bytes[pos] == b'$' && bytes.get(pos + 1).is_some_and(u8::is_ascii_digit))
            || (bytes[pos] == b'$'
                && bytes.get(pos + 1) == Some(&b' ')
                && bytes.get(pos + 2).is_some_and(u8::is_ascii_digit));
        if at_candidate {
            if let Some(n) = scan_number_at(text, pos) {
                pos = n.end;
                found.push(n);
                continue;
            }
        }
        pos += if bytes[pos] < 0x80 {
            1
        } else {
            text[pos..].chars().next().map_or(1, char::len_utf8)
        };
    }
    found
}

/// True when the byte directly before `pos` (skipping nothing) makes a `-`
/// at `pos` look binary rather than unary: a digit, `)`, or `%`.
pub(crate) fn minus_reads_binary(text: &str, pos: usize) -> bool {
    text[..pos]
        .bytes()
        .next_back()
        .is_some_and(|b| b.is_ascii_digit() || b == b')' || b == b'%')
}
