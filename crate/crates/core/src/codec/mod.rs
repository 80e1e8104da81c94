//! Bit-level transmit/receive processing.
//!
//! Transmit order is whitening, Hamming encoding, diagonal interleaving and
//! Gray mapping; the receiver runs the inverse chain. Whitening comes first
//! for every rate, so the single parity bit of 4/5 is computed over whitened
//! data.

mod gray;
mod hamming;
mod interleaver;
mod whitening;

pub use gray::{gray_demap, gray_map};
pub use hamming::{hamming_decode, hamming_encode, CodingRate, DecodeStatus};
pub use interleaver::{deinterleave, interleave};
pub use whitening::{whiten, WhiteningSequence};

/// Serializes bytes MSB-first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
        .collect()
}

/// Inverse of [`bytes_to_bits`]; a trailing partial byte is dropped.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks_exact(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
        .collect()
}

/// Groups bits into MSB-first nibbles. The length must be a multiple of 4.
pub fn bits_to_nibbles(bits: &[bool]) -> Vec<u8> {
    debug_assert_eq!(bits.len() % 4, 0);
    bits.chunks_exact(4)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
        .collect()
}

pub fn nibbles_to_bits(nibbles: &[u8]) -> Vec<bool> {
    nibbles
        .iter()
        .flat_map(|&v| (0..4).rev().map(move |i| (v >> i) & 1 == 1))
        .collect()
}
