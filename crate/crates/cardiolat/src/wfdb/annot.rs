//! MIT annotation (`.atr`) stream parsing.
//!
//! Entries are 16-bit little-endian words: the high 6 bits carry the
//! annotation type code, the low 10 bits a time increment relative to the
//! previous annotation. Codes 59-63 are pseudo-codes (SKIP, NUM, SUB, CHN,
//! AUX) that modify state without emitting an annotation; a zero word
//! terminates the stream.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    /// Absolute sample index in the record.
    pub sample_index: u64,
    pub symbol: char,
}

const SKIP: u16 = 59;
const NUM: u16 = 60;
const SUB: u16 = 61;
const CHN: u16 = 62;
const AUX: u16 = 63;

/// Annotation code to display symbol, per the standard WFDB code table.
fn code_symbol(code: u16) -> Option<char> {
    Some(match code {
        1 => 'N',
        2 => 'L',
        3 => 'R',
        4 => 'a',
        5 => 'V',
        6 => 'F',
        7 => 'J',
        8 => 'A',
        9 => 'S',
        10 => 'E',
        11 => 'j',
        12 => '/',
        13 => 'Q',
        14 => '~',
        16 => '|',
        18 => 's',
        19 => 'T',
        20 => '*',
        21 => 'D',
        22 => '"',
        23 => '=',
        24 => 'p',
        25 => 'B',
        26 => '^',
        27 => 't',
        28 => '+',
        29 => 'u',
        30 => '?',
        31 => '!',
        32 => '[',
        33 => ']',
        34 => 'e',
        35 => 'n',
        36 => '@',
        37 => 'x',
        38 => 'f',
        39 => '(',
        40 => ')',
        41 => 'r',
        _ => return None,
    })
}

pub fn parse_annotations(bytes: &[u8]) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    let mut time: u64 = 0;
    let mut pos = 0usize;
    let mut ordinal = 0usize;

    let read_word = |pos: &mut usize, ordinal: usize| -> Result<u16> {
        if *pos + 2 > bytes.len() {
            return Err(Error::parse("atr", format!("entry {ordinal}"), "truncated entry"));
        }
        let w = u16::from_le_bytes([bytes[*pos], bytes[*pos + 1]]);
        *pos += 2;
        Ok(w)
    };

    loop {
        if pos + 2 > bytes.len() {
            return Err(Error::parse(
                "atr",
                format!("entry {ordinal}"),
                "stream ended without terminator",
            ));
        }
        let word = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        pos += 2;
        if word == 0 {
            break; // zero sentinel
        }
        let code = word >> 10;
        let interval = (word & 0x03FF) as u64;
        match code {
            SKIP => {
                // Long interval: two further words, high-order first.
                let hi = read_word(&mut pos, ordinal)?;
                let lo = read_word(&mut pos, ordinal)?;
                time += ((hi as u64) << 16) | lo as u64;
            }
            NUM | SUB | CHN => {
                // Field modifiers; no time advance, no emitted annotation.
            }
            AUX => {
                // Interval counts aux bytes, padded to an even length.
                let skip = interval + (interval & 1);
                if pos + skip as usize > bytes.len() {
                    return Err(Error::parse(
                        "atr",
                        format!("entry {ordinal}"),
                        "truncated aux field",
                    ));
                }
                pos += skip as usize;
            }
            _ => {
                let symbol = code_symbol(code).ok_or_else(|| {
                    Error::parse(
                        "atr",
                        format!("entry {ordinal}"),
                        format!("unknown annotation code {code}"),
                    )
                })?;
                time += interval;
                out.push(Annotation {
                    sample_index: time,
                    symbol,
                });
            }
        }
        ordinal += 1;
    }
    Ok(out)
}
