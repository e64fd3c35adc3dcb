//! Byte-level tokenizer: ids 0..3 are specials, byte `b` is id `b + 3`.

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const BYTE_OFFSET: u32 = 3;
pub const VOCAB_SIZE: usize = 256 + BYTE_OFFSET as usize;

pub fn encode(text: &str) -> Vec<u32> {
    text.bytes().map(|b| u32::from(b) + BYTE_OFFSET).collect()
}

/// Specials are dropped; invalid UTF-8 is replaced.
pub fn decode(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter(|&&t| t >= BYTE_OFFSET && (t as usize) < VOCAB_SIZE)
        .map(|&t| (t - BYTE_OFFSET) as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Exact single-token resolution of an option letter.
pub fn letter_token(letter: &str) -> Result<u32> {
    match encode(letter).as_slice() {
        [t] => Ok(*t),
        _ => Err(Error::UnresolvableLetter(letter.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_round_trip() {
        assert!(encode("").is_empty());
        assert_eq!(decode(&[]), "");
    }

    #[test]
    fn letters_are_single_tokens() {
        assert_eq!(encode("A"), vec![u32::from(b'A') + BYTE_OFFSET]);
        assert_eq!(letter_token("B").unwrap(), u32::from(b'B') + BYTE_OFFSET);
        assert!(letter_token("AB").is_err());
        assert!(letter_token("").is_err());
    }

    #[test]
    fn long_mixed_script_round_trip() {
        let s: String = "Grüße, 世界! Ελλάδα Привет 🙂 "
            .chars()
            .cycle()
            .take(1000)
            .collect();
        assert_eq!(decode(&encode(&s)), s);
    }

    proptest! {
        #[test]
        fn round_trip_any_string(s in any::<String>()) {
            prop_assert_eq!(decode(&encode(&s)), s);
        }
    }
}
