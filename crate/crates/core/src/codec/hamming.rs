//! Hamming-family codes for the four LoRa coding rates.
//!
//! Codewords are `u8` values with bit `j` holding codeword position `j`:
//! positions 0..4 are the data bits `d1..d4` (`d1` is the nibble MSB),
//! followed by the parity bits. With `p1 = d1^d2^d4`, `p2 = d1^d3^d4` and
//! `p3 = d2^d3^d4`:
//!
//! | rate | codeword                           | d_min |
//! |------|------------------------------------|-------|
//! | 4/5  | d1..d4, d1^d2^d3^d4                | 2     |
//! | 4/6  | d1..d4, p1, p2                     | 2     |
//! | 4/7  | d1..d4, p1, p2, p3                 | 3     |
//! | 4/8  | d1..d4, p1, p2, p3, overall parity | 4     |

use std::fmt;
use std::str::FromStr;

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodingRate {
    Cr45,
    Cr46,
    Cr47,
    Cr48,
}

impl CodingRate {
    pub const ALL: [CodingRate; 4] = [
        CodingRate::Cr45,
        CodingRate::Cr46,
        CodingRate::Cr47,
        CodingRate::Cr48,
    ];

    /// Data bits per codeword.
    pub const DATA_LEN: usize = 4;

    /// The `1..=4` index in `4/(4 + index)`.
    pub fn index(self) -> usize {
        match self {
            CodingRate::Cr45 => 1,
            CodingRate::Cr46 => 2,
            CodingRate::Cr47 => 3,
            CodingRate::Cr48 => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        CodingRate::ALL.get(index.wrapping_sub(1)).copied()
    }

    pub fn codeword_len(self) -> usize {
        Self::DATA_LEN + self.index()
    }
}

impl fmt::Display for CodingRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "4/{}", self.codeword_len())
    }
}

impl FromStr for CodingRate {
    type Err = Error;

    /// Accepts `4/5`..`4/8`, `cr45`..`cr48` or `1`..`4`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let t = s.trim().to_ascii_lowercase();
        let idx = match t.as_str() {
            "4/5" | "cr45" | "1" => 1,
            "4/6" | "cr46" | "2" => 2,
            "4/7" | "cr47" | "3" => 3,
            "4/8" | "cr48" | "4" => 4,
            _ => return Err(Error::config(format!("unknown coding rate {s:?}"))),
        };
        Ok(CodingRate::from_index(idx).unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeStatus {
    Clean,
    Corrected,
    DetectedUncorrectable,
}

fn bit(v: u8, j: u32) -> u8 {
    (v >> j) & 1
}

fn hamming74_parity(d: [u8; 4]) -> [u8; 3] {
    [d[0] ^ d[1] ^ d[3], d[0] ^ d[2] ^ d[3], d[1] ^ d[2] ^ d[3]]
}

fn data_bits(nibble: u8) -> [u8; 4] {
    [bit(nibble, 3), bit(nibble, 2), bit(nibble, 1), bit(nibble, 0)]
}

fn codeword_data(cw: u8) -> u8 {
    (bit(cw, 0) << 3) | (bit(cw, 1) << 2) | (bit(cw, 2) << 1) | bit(cw, 3)
}

pub fn hamming_encode(nibble: u8, cr: CodingRate) -> u8 {
    debug_assert!(nibble < 16);
    let d = data_bits(nibble & 0xf);
    let mut cw = d[0] | (d[1] << 1) | (d[2] << 2) | (d[3] << 3);
    let p = hamming74_parity(d);
    match cr {
        CodingRate::Cr45 => cw |= (d[0] ^ d[1] ^ d[2] ^ d[3]) << 4,
        CodingRate::Cr46 => cw |= (p[0] << 4) | (p[1] << 5),
        CodingRate::Cr47 => cw |= (p[0] << 4) | (p[1] << 5) | (p[2] << 6),
        CodingRate::Cr48 => {
            cw |= (p[0] << 4) | (p[1] << 5) | (p[2] << 6);
            cw |= ((cw.count_ones() & 1) as u8) << 7;
        }
    }
    cw
}

/// Positions flagged by each 3-bit (4,7) syndrome `s1 | s2 << 1 | s3 << 2`.
const SYNDROME_POSITION: [Option<u32>; 8] = [
    None,
    Some(4), // p1
    Some(5), // p2
    Some(0), // d1
    Some(6), // p3
    Some(1), // d2
    Some(2), // d3
    Some(3), // d4
];

fn syndrome74(cw: u8) -> usize {
    let d = [bit(cw, 0), bit(cw, 1), bit(cw, 2), bit(cw, 3)];
    let p = hamming74_parity(d);
    let s1 = p[0] ^ bit(cw, 4);
    let s2 = p[1] ^ bit(cw, 5);
    let s3 = p[2] ^ bit(cw, 6);
    usize::from(s1 | (s2 << 1) | (s3 << 2))
}

/// Decodes one codeword. 4/7 and 4/8 correct single errors and 4/8 flags
/// double errors; 4/5 and 4/6 only detect, passing the data bits through.
pub fn hamming_decode(codeword: u8, cr: CodingRate) -> (u8, DecodeStatus) {
    let n = cr.codeword_len() as u32;
    let cw = if n == 8 { codeword } else { codeword & ((1 << n) - 1) };
    match cr {
        CodingRate::Cr45 => {
            let status = if cw.count_ones() % 2 == 0 {
                DecodeStatus::Clean
            } else {
                DecodeStatus::DetectedUncorrectable
            };
            (codeword_data(cw), status)
        }
        CodingRate::Cr46 => {
            let d = [bit(cw, 0), bit(cw, 1), bit(cw, 2), bit(cw, 3)];
            let p = hamming74_parity(d);
            let status = if p[0] == bit(cw, 4) && p[1] == bit(cw, 5) {
                DecodeStatus::Clean
            } else {
                DecodeStatus::DetectedUncorrectable
            };
            (codeword_data(cw), status)
        }
        CodingRate::Cr47 => match SYNDROME_POSITION[syndrome74(cw)] {
            None => (codeword_data(cw), DecodeStatus::Clean),
            Some(pos) => (codeword_data(cw ^ (1 << pos)), DecodeStatus::Corrected),
        },
        CodingRate::Cr48 => {
            let syndrome = syndrome74(cw);
            let odd = cw.count_ones() % 2 == 1;
            match (SYNDROME_POSITION[syndrome], odd) {
                (None, false) => (codeword_data(cw), DecodeStatus::Clean),
                // Only the overall parity bit flipped.
                (None, true) => (codeword_data(cw), DecodeStatus::Corrected),
                (Some(pos), true) => (codeword_data(cw ^ (1 << pos)), DecodeStatus::Corrected),
                (Some(_), false) => (codeword_data(cw), DecodeStatus::DetectedUncorrectable),
            }
        }
    }
}
