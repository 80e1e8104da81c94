//! Reverse Gray mapping between symbols and `SF`-bit labels.

/// Receive side: label of symbol `s`, `s ^ (s >> 1)`.
pub fn gray_demap(s: u16) -> u16 {
    s ^ (s >> 1)
}

/// Transmit side: symbol carrying `label`, the exact inverse of [`gray_demap`].
pub fn gray_map(label: u16) -> u16 {
    let mut s = label;
    let mut shift = 1;
    while shift < 16 {
        s ^= s >> shift;
        shift <<= 1;
    }
    s
}
