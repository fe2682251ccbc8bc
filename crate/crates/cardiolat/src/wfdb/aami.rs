//! AAMI EC57 beat-class mapping.
//!
//! The golden table: MIT-BIH beat symbols grouped into the five AAMI
//! superclasses. Everything else (rhythm changes, artifacts, fiducial
//! marks) is not a beat.
//!
//! | class | MIT-BIH symbols |
//! |-------|-----------------|
//! | N     | N L R e j       |
//! | S     | A a J S         |
//! | V     | V E             |
//! | F     | F               |
//! | Q     | / f Q           |

use crate::beat::BeatClass;

/// Maps a single annotation symbol to its AAMI class, or `None` when the
/// symbol does not denote a beat. Total over all characters.
pub fn map_aami(symbol: char) -> Option<BeatClass> {
    match symbol {
        'N' | 'L' | 'R' | 'e' | 'j' => Some(BeatClass::N),
        'A' | 'a' | 'J' | 'S' => Some(BeatClass::S),
        'V' | 'E' => Some(BeatClass::V),
        'F' => Some(BeatClass::F),
        '/' | 'f' | 'Q' => Some(BeatClass::Q),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_symbols() {
        assert_eq!(map_aami('N'), Some(BeatClass::N));
        assert_eq!(map_aami('V'), Some(BeatClass::V));
        assert_eq!(map_aami('F'), Some(BeatClass::F));
    }

    #[test]
    fn full_golden_table() {
        let groups: [(&str, BeatClass); 5] = [
            ("NLRej", BeatClass::N),
            ("AaJS", BeatClass::S),
            ("VE", BeatClass::V),
            ("F", BeatClass::F),
            ("/fQ", BeatClass::Q),
        ];
        for (symbols, class) in groups {
            for s in symbols.chars() {
                assert_eq!(map_aami(s), Some(class), "symbol {s}");
            }
        }
    }

    #[test]
    fn non_beat_symbols_are_rejected() {
        for s in ['+', '~', '|', '"', '[', ']', '!', 'x', '(', ')', 'p', 't', 'u', '?', '*', '='] {
            assert_eq!(map_aami(s), None, "symbol {s}");
        }
    }

    #[test]
    fn total_over_all_chars() {
        // Never panics, never yields anything outside the closed set.
        for c in (0u8..=255).map(|b| b as char) {
            let _ = map_aami(c);
        }
    }
}
