use std::path::Path;

use super::hamming::{hamming_encode, CodingRate};
use crate::{Error, Result};

/// Shipped default table: 4096 bits of an 8-bit LFSR (x^8 + x^6 + x^5 + x^4 + 1,
/// seeded with all ones). It is not the table used by commercial transceivers.
const DEFAULT_TABLE: &str = include_str!("../../data/whitening_default.txt");

/// Pseudo-random sequence XORed onto the data bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WhiteningSequence {
    bits: Vec<bool>,
}

impl WhiteningSequence {
    pub fn new(bits: Vec<bool>) -> Self {
        WhiteningSequence { bits }
    }

    /// Parses a single line of `0`/`1` characters, first bit first.
    pub fn parse(text: &str) -> Result<Self> {
        let line = text.trim();
        if line.is_empty() {
            return Err(Error::config("whitening table is empty"));
        }
        line.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::config(format!(
                    "invalid character {other:?} in whitening table"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(WhiteningSequence::new)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Row `index` of the codeword-domain whitening matrix for `cr`.
    ///
    /// Whitening nibble `index` and then encoding equals encoding and XORing
    /// with this mask. The 4/8 rows form the base matrix; 4/7 and 4/6 drop
    /// one and two of its rightmost columns, while 4/5 gets its own parity
    /// column.
    pub fn codeword_mask(&self, index: usize, cr: CodingRate) -> Result<u8> {
        let start = 4 * index;
        let Some(chunk) = self.bits.get(start..start + 4) else {
            return Err(Error::config(format!(
                "whitening table too short for nibble {index}"
            )));
        };
        let nibble = chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8);
        let base = hamming_encode(nibble, CodingRate::Cr48);
        Ok(match cr {
            CodingRate::Cr48 => base,
            CodingRate::Cr47 => base & 0x7f,
            CodingRate::Cr46 => base & 0x3f,
            CodingRate::Cr45 => hamming_encode(nibble, CodingRate::Cr45),
        })
    }
}

impl Default for WhiteningSequence {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped whitening table is valid")
    }
}

/// `out[i] = data[i] XOR seq[i]`.
pub fn whiten(data: &[bool], seq: &WhiteningSequence) -> Result<Vec<bool>> {
    if seq.len() < data.len() {
        return Err(Error::config(format!(
            "whitening sequence has {} bits, data needs {}",
            seq.len(),
            data.len()
        )));
    }
    Ok(data.iter().zip(seq.bits()).map(|(&d, &w)| d ^ w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{bits_to_nibbles, nibbles_to_bits};
    use proptest::prelude::*;

    #[test]
    fn default_table_covers_max_payload() {
        let seq = WhiteningSequence::default();
        // 255 payload bytes plus a 16-bit CRC.
        assert!(seq.len() >= 257 * 8);
    }

    #[test]
    fn zeros_give_prefix_and_prefix_gives_zeros() {
        let seq = WhiteningSequence::default();
        let zeros = vec![false; 100];
        assert_eq!(whiten(&zeros, &seq).unwrap(), seq.bits()[..100]);
        assert_eq!(whiten(&seq.bits()[..100], &seq).unwrap(), zeros);
    }

    #[test]
    fn too_short_is_config_error() {
        let seq = WhiteningSequence::new(vec![true; 8]);
        assert!(matches!(whiten(&[false; 9], &seq), Err(Error::Config(_))));
        assert!(seq.codeword_mask(2, CodingRate::Cr48).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(WhiteningSequence::parse("0101x").is_err());
        assert!(WhiteningSequence::parse("   \n").is_err());
        let seq = WhiteningSequence::parse("0110\n").unwrap();
        assert_eq!(seq.bits(), [false, true, true, false]);
    }

    #[test]
    fn codeword_masks_follow_column_removal() {
        let seq = WhiteningSequence::default();
        let data: Vec<u8> = (0..64).map(|i| (i * 7 % 16) as u8).collect();
        let whitened = bits_to_nibbles(&whiten(&nibbles_to_bits(&data), &seq).unwrap());
        for cr in CodingRate::ALL {
            for (i, (&d, &w)) in data.iter().zip(&whitened).enumerate() {
                let mask = seq.codeword_mask(i, cr).unwrap();
                assert_eq!(hamming_encode(w, cr), hamming_encode(d, cr) ^ mask, "{cr:?} row {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn involution(bits in proptest::collection::vec(any::<bool>(), 0..2056)) {
            let seq = WhiteningSequence::default();
            let once = whiten(&bits, &seq).unwrap();
            prop_assert_eq!(whiten(&once, &seq).unwrap(), bits);
        }
    }
}
