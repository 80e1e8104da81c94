//! Diagonal interleaver.
//!
//! A block of `SF` codewords of `n` bits becomes `n` symbols of `SF` bits,
//! with bit `j` of symbol `i` taken from bit `i` of codeword `(i + j) mod SF`.
//! Every symbol therefore carries at most one bit of each codeword.

use super::CodingRate;
use crate::{Error, Result};

pub fn interleave(codewords: &[u8], sf: u8, cr: CodingRate) -> Result<Vec<u16>> {
    let sf = usize::from(sf);
    let n = cr.codeword_len();
    if codewords.len() != sf {
        return Err(Error::config(format!(
            "interleaver block needs {sf} codewords, got {}",
            codewords.len()
        )));
    }
    if n < 8 && codewords.iter().any(|&c| c >> n != 0) {
        return Err(Error::config(format!("codeword wider than {n} bits")));
    }
    Ok((0..n)
        .map(|i| {
            (0..sf).fold(0u16, |acc, j| {
                let b = (codewords[(i + j) % sf] >> i) & 1;
                acc | (u16::from(b) << j)
            })
        })
        .collect())
}

pub fn deinterleave(symbols: &[u16], sf: u8, cr: CodingRate) -> Result<Vec<u8>> {
    let sf = usize::from(sf);
    let n = cr.codeword_len();
    if symbols.len() != n {
        return Err(Error::config(format!(
            "deinterleaver block needs {n} symbols, got {}",
            symbols.len()
        )));
    }
    if symbols.iter().any(|&s| s >> sf != 0) {
        return Err(Error::config(format!("symbol label wider than {sf} bits")));
    }
    let mut codewords = vec![0u8; sf];
    for (i, &label) in symbols.iter().enumerate() {
        for j in 0..sf {
            let b = ((label >> j) & 1) as u8;
            codewords[(i + j) % sf] |= b << i;
        }
    }
    Ok(codewords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_stay_zero() {
        for cr in CodingRate::ALL {
            assert!(interleave(&[0; 7], 7, cr).unwrap().iter().all(|&s| s == 0));
            assert!(deinterleave(&vec![0; cr.codeword_len()], 7, cr)
                .unwrap()
                .iter()
                .all(|&c| c == 0));
        }
    }

    #[test]
    fn shape_errors() {
        assert!(interleave(&[0; 6], 7, CodingRate::Cr48).is_err());
        assert!(interleave(&[0x20; 7], 7, CodingRate::Cr45).is_err());
        assert!(deinterleave(&[0; 7], 7, CodingRate::Cr48).is_err());
        assert!(deinterleave(&[0x80; 8], 7, CodingRate::Cr48).is_err());
    }

    #[test]
    fn bijection_exhaustive_sf7_cr48() {
        // Every single-bit input maps to a distinct single-bit output.
        let (sf, cr) = (7u8, CodingRate::Cr48);
        let mut seen = std::collections::HashSet::new();
        for cw in 0..7 {
            for bit in 0..8 {
                let mut block = [0u8; 7];
                block[cw] = 1 << bit;
                let out = interleave(&block, sf, cr).unwrap();
                assert_eq!(out.iter().map(|s| s.count_ones()).sum::<u32>(), 1);
                let pos = out.iter().position(|&s| s != 0).unwrap();
                assert!(seen.insert((pos, out[pos])));
                assert_eq!(deinterleave(&out, sf, cr).unwrap(), block);
            }
        }
        assert_eq!(seen.len(), 56);
    }

    #[test]
    fn symbol_burst_hits_each_codeword_once() {
        for sf in 7u8..=12 {
            for cr in CodingRate::ALL {
                let n = cr.codeword_len();
                for i in 0..n {
                    let mut symbols = vec![0u16; n];
                    symbols[i] = (1 << sf) - 1;
                    let cws = deinterleave(&symbols, sf, cr).unwrap();
                    assert!(cws.iter().all(|c| c.count_ones() == 1), "sf={sf} {cr} i={i}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(sf in 7u8..=12, cr_idx in 1usize..=4, seed in any::<u64>()) {
            let cr = CodingRate::from_index(cr_idx).unwrap();
            let n = cr.codeword_len();
            let mask = if n == 8 { 0xff } else { (1u8 << n) - 1 };
            let block: Vec<u8> = (0..sf as u64)
                .map(|i| (seed.rotate_left(i as u32 * 7) as u8) & mask)
                .collect();
            let symbols = interleave(&block, sf, cr).unwrap();
            prop_assert_eq!(deinterleave(&symbols, sf, cr).unwrap(), block);
        }
    }
}
