//! Packet assembly and payload recovery.
//!
//! A frame is `N_pr` upchirps, two network-identifier symbols, two
//! downchirps plus a quarter downchirp, then the payload symbols. Only the
//! implicit-header layout is supported: the receiver is told the payload
//! length, coding and CRC flag out of band.

use crate::codec::{
    bits_to_bytes, bits_to_nibbles, bytes_to_bits, deinterleave, gray_demap, gray_map,
    hamming_decode, hamming_encode, interleave, nibbles_to_bits, whiten, CodingRate, DecodeStatus,
    WhiteningSequence,
};
use crate::signal::{modulate_symbol, reference_downchirp, reference_upchirp, ChirpParams, IqBuffer, Symbol};
use crate::{Error, Result};

pub const MIN_PREAMBLE_LEN: usize = 6;
pub const MAX_PREAMBLE_LEN: usize = 65535;
pub const MAX_PAYLOAD_LEN: usize = 255;

/// How the sync word is carried by the two network-identifier symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NetIdMode {
    /// `(x, x)`.
    #[default]
    Repeated,
    /// `(x, N - x)`.
    Paired,
}

/// Payload channel coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coding {
    /// Whitened bits packed `SF` per symbol and Gray mapped, no FEC.
    Uncoded,
    /// Hamming code plus diagonal interleaver.
    Hamming(CodingRate),
}

/// CRC16 parameters. The default is polynomial 0x1021, init 0, no
/// reflection and no final XOR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrcParams {
    pub poly: u16,
    pub init: u16,
    pub reflect_in: bool,
    pub reflect_out: bool,
    pub xor_out: u16,
}

impl Default for CrcParams {
    fn default() -> Self {
        CrcParams {
            poly: 0x1021,
            init: 0x0000,
            reflect_in: false,
            reflect_out: false,
            xor_out: 0x0000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub preamble_len: usize,
    pub sync_word: u16,
    pub netid_mode: NetIdMode,
    pub coding: Coding,
    pub has_crc: bool,
    pub crc: CrcParams,
    /// Payload length in bytes, needed by the receiver.
    pub payload_len: usize,
    pub whitening: WhiteningSequence,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            preamble_len: 8,
            sync_word: 24,
            netid_mode: NetIdMode::Repeated,
            coding: Coding::Hamming(CodingRate::Cr48),
            has_crc: true,
            crc: CrcParams::default(),
            payload_len: 0,
            whitening: WhiteningSequence::default(),
        }
    }
}

impl FrameConfig {
    pub fn validate(&self, p: &ChirpParams) -> Result<()> {
        if !(MIN_PREAMBLE_LEN..=MAX_PREAMBLE_LEN).contains(&self.preamble_len) {
            return Err(Error::config(format!(
                "preamble length {} outside {MIN_PREAMBLE_LEN}..={MAX_PREAMBLE_LEN}",
                self.preamble_len
            )));
        }
        if usize::from(self.sync_word) >= p.n() {
            return Err(Error::config(format!(
                "sync word {} does not fit SF{}",
                self.sync_word,
                p.sf()
            )));
        }
        if self.payload_len > MAX_PAYLOAD_LEN {
            return Err(Error::frame(format!(
                "payload of {} bytes exceeds {MAX_PAYLOAD_LEN}",
                self.payload_len
            )));
        }
        let needed = 8 * self.protected_len();
        if self.whitening.len() < needed {
            return Err(Error::config(format!(
                "whitening table has {} bits, frame needs {needed}",
                self.whitening.len()
            )));
        }
        p.require_critical_rate()
    }

    /// Payload plus CRC bytes.
    fn protected_len(&self) -> usize {
        self.payload_len + if self.has_crc { 2 } else { 0 }
    }

    /// The two network-identifier symbol values.
    pub fn netid_symbols(&self, p: &ChirpParams) -> [u16; 2] {
        let x = self.sync_word;
        match self.netid_mode {
            NetIdMode::Repeated => [x, x],
            NetIdMode::Paired => [x, ((p.n() - usize::from(x)) % p.n()) as u16],
        }
    }

    pub fn payload_symbol_count(&self, p: &ChirpParams) -> usize {
        let sf = usize::from(p.sf());
        let bits = 8 * self.protected_len();
        match self.coding {
            Coding::Uncoded => bits.div_ceil(sf),
            Coding::Hamming(cr) => (bits / 4).div_ceil(sf) * cr.codeword_len(),
        }
    }

    /// Information bits carried per frame (payload only, CRC excluded).
    pub fn payload_bits(&self) -> usize {
        8 * self.payload_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolRole {
    Preamble,
    NetId,
    Downchirp,
    QuarterDownchirp,
    Payload,
}

/// Layout of a frame, symbol by symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePlan {
    pub symbols: Vec<(SymbolRole, Option<Symbol>)>,
    pub total_samples: usize,
}

impl FramePlan {
    pub fn new(cfg: &FrameConfig, payload_symbols: &[Symbol], p: &ChirpParams) -> Self {
        let n = p.n();
        let mut symbols = Vec::with_capacity(cfg.preamble_len + 5 + payload_symbols.len());
        let zero = Symbol::wrapping(0, p);
        symbols.extend(std::iter::repeat_n((SymbolRole::Preamble, Some(zero)), cfg.preamble_len));
        for v in cfg.netid_symbols(p) {
            symbols.push((SymbolRole::NetId, Some(Symbol::wrapping(i64::from(v), p))));
        }
        symbols.push((SymbolRole::Downchirp, None));
        symbols.push((SymbolRole::Downchirp, None));
        symbols.push((SymbolRole::QuarterDownchirp, None));
        symbols.extend(payload_symbols.iter().map(|&s| (SymbolRole::Payload, Some(s))));
        FramePlan {
            symbols,
            total_samples: Self::sync_samples(cfg.preamble_len, n) + payload_symbols.len() * n,
        }
    }

    /// Samples from the first preamble chip to the first payload chip:
    /// `(N_pr + 2 + 2.25) N`.
    pub fn sync_samples(preamble_len: usize, n: usize) -> usize {
        (preamble_len + 4) * n + n / 4
    }
}

/// CRC16 over `data`.
pub fn crc16(data: &[u8], params: &CrcParams) -> u16 {
    let table: Vec<u16> = (0..256u16)
        .map(|b| {
            (0..8).fold(b << 8, |crc, _| {
                if crc & 0x8000 != 0 {
                    (crc << 1) ^ params.poly
                } else {
                    crc << 1
                }
            })
        })
        .collect();
    let mut crc = params.init;
    for &byte in data {
        let byte = if params.reflect_in { byte.reverse_bits() } else { byte };
        crc = (crc << 8) ^ table[usize::from((crc >> 8) as u8 ^ byte)];
    }
    if params.reflect_out {
        crc = crc.reverse_bits();
    }
    crc ^ params.xor_out
}

/// Payload symbols: CRC append, whitening, coding, interleaving, Gray mapping.
pub fn encode_payload(payload: &[u8], cfg: &FrameConfig, p: &ChirpParams) -> Result<Vec<Symbol>> {
    if payload.len() != cfg.payload_len {
        return Err(Error::frame(format!(
            "payload has {} bytes, config says {}",
            payload.len(),
            cfg.payload_len
        )));
    }
    cfg.validate(p)?;
    let mut bytes = payload.to_vec();
    if cfg.has_crc {
        bytes.extend_from_slice(&crc16(payload, &cfg.crc).to_be_bytes());
    }
    let bits = whiten(&bytes_to_bits(&bytes), &cfg.whitening)?;
    let sf = usize::from(p.sf());
    let labels: Vec<u16> = match cfg.coding {
        Coding::Uncoded => {
            let mut bits = bits;
            bits.resize(bits.len().div_ceil(sf) * sf, false);
            bits.chunks_exact(sf)
                .map(|c| c.iter().fold(0u16, |acc, &b| (acc << 1) | u16::from(b)))
                .collect()
        }
        Coding::Hamming(cr) => {
            let mut nibbles = bits_to_nibbles(&bits);
            nibbles.resize(nibbles.len().div_ceil(sf) * sf, 0);
            let mut labels = Vec::with_capacity(nibbles.len() / sf * cr.codeword_len());
            for block in nibbles.chunks_exact(sf) {
                let codewords: Vec<u8> = block.iter().map(|&v| hamming_encode(v, cr)).collect();
                labels.extend(interleave(&codewords, p.sf(), cr)?);
            }
            labels
        }
    };
    labels
        .into_iter()
        .map(|l| Symbol::new(gray_map(l), p))
        .collect()
}

/// Full baseband frame.
pub fn build_frame(cfg: &FrameConfig, payload: &[u8], p: &ChirpParams) -> Result<IqBuffer> {
    if payload.len() > MAX_PAYLOAD_LEN {
        return Err(Error::frame(format!(
            "payload of {} bytes exceeds {MAX_PAYLOAD_LEN}",
            payload.len()
        )));
    }
    let payload_symbols = encode_payload(payload, cfg, p)?;
    let plan = FramePlan::new(cfg, &payload_symbols, p);
    let n = p.n();
    let up = reference_upchirp(p);
    let down = reference_downchirp(p);
    let mut samples = Vec::with_capacity(plan.total_samples);
    for (role, sym) in &plan.symbols {
        match role {
            SymbolRole::Preamble => samples.extend_from_slice(&up.samples),
            SymbolRole::NetId | SymbolRole::Payload => {
                samples.extend(modulate_symbol(sym.expect("modulated role"), p).samples)
            }
            SymbolRole::Downchirp => samples.extend_from_slice(&down.samples),
            SymbolRole::QuarterDownchirp => samples.extend_from_slice(&down.samples[..n / 4]),
        }
    }
    debug_assert_eq!(samples.len(), plan.total_samples);
    Ok(IqBuffer::new(samples))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPayload {
    pub payload: Vec<u8>,
    /// CRC matched; always `true` when the frame carries no CRC.
    pub crc_ok: bool,
    pub corrected_codewords: usize,
    pub uncorrectable_codewords: usize,
}

/// Receive chain: Gray demapping, deinterleaving, Hamming decoding,
/// dewhitening and CRC check.
pub fn decode_payload_symbols(symbols: &[Symbol], cfg: &FrameConfig, p: &ChirpParams) -> Result<DecodedPayload> {
    cfg.validate(p)?;
    let expected = cfg.payload_symbol_count(p);
    if symbols.len() != expected {
        return Err(Error::frame(format!(
            "expected {expected} payload symbols, got {}",
            symbols.len()
        )));
    }
    let sf = usize::from(p.sf());
    let labels: Vec<u16> = symbols.iter().map(|s| gray_demap(s.value())).collect();
    let mut corrected = 0;
    let mut uncorrectable = 0;
    let mut bits: Vec<bool> = match cfg.coding {
        Coding::Uncoded => labels
            .iter()
            .flat_map(|&l| (0..sf).rev().map(move |i| (l >> i) & 1 == 1))
            .collect(),
        Coding::Hamming(cr) => {
            let mut nibbles = Vec::with_capacity(labels.len() / cr.codeword_len() * sf);
            for block in labels.chunks_exact(cr.codeword_len()) {
                for cw in deinterleave(block, p.sf(), cr)? {
                    let (v, status) = hamming_decode(cw, cr);
                    match status {
                        DecodeStatus::Clean => {}
                        DecodeStatus::Corrected => corrected += 1,
                        DecodeStatus::DetectedUncorrectable => uncorrectable += 1,
                    }
                    nibbles.push(v);
                }
            }
            nibbles_to_bits(&nibbles)
        }
    };
    bits.truncate(8 * cfg.protected_len());
    let bytes = bits_to_bytes(&whiten(&bits, &cfg.whitening)?);
    let (payload, crc_bytes) = bytes.split_at(cfg.payload_len);
    let crc_ok = if cfg.has_crc {
        crc16(payload, &cfg.crc).to_be_bytes() == crc_bytes
    } else {
        true
    };
    Ok(DecodedPayload {
        payload: payload.to_vec(),
        crc_ok,
        corrected_codewords: corrected,
        uncorrectable_codewords: uncorrectable,
    })
}

/// Ring distance between two symbol values.
pub fn symbol_distance(a: u16, b: u16, n: usize) -> usize {
    let d = (usize::from(a) + n - usize::from(b)) % n;
    d.min(n - d)
}

/// Warnings for sync words closer than three symbols, which +/-1
/// demodulation errors could confuse.
pub fn netid_lint(sync_words: &[u16], p: &ChirpParams) -> Vec<String> {
    let mut warnings = Vec::new();
    for (i, &a) in sync_words.iter().enumerate() {
        for &b in &sync_words[i + 1..] {
            let d = symbol_distance(a, b, p.n());
            if d < 3 {
                warnings.push(format!("sync words {a} and {b} are only {d} symbols apart"));
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::demodulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(sf: u8) -> ChirpParams {
        ChirpParams::new(sf, 125e3).unwrap()
    }

    fn cfg(coding: Coding, has_crc: bool, payload_len: usize) -> FrameConfig {
        FrameConfig {
            coding,
            has_crc,
            payload_len,
            ..FrameConfig::default()
        }
    }

    /// Bit-serial shift register, one input bit at a time.
    fn crc16_bitwise(data: &[u8], poly: u16, init: u16) -> u16 {
        let mut reg = init;
        for &byte in data {
            for i in (0..8).rev() {
                let input = (byte >> i) & 1 == 1;
                let top = reg & 0x8000 != 0;
                reg <<= 1;
                if top ^ input {
                    reg ^= poly;
                }
            }
        }
        reg
    }

    fn genie_demod(frame: &IqBuffer, cfg: &FrameConfig, p: &ChirpParams) -> Vec<Symbol> {
        let n = p.n();
        let up = reference_upchirp(p);
        let start = FramePlan::sync_samples(cfg.preamble_len, n);
        frame.samples[start..]
            .chunks_exact(n)
            .map(|w| demodulate(w, &up.samples, p).unwrap())
            .collect()
    }

    #[test]
    fn header_sample_count() {
        let p = params(7);
        let c = cfg(Coding::Uncoded, false, 0);
        let frame = build_frame(&c, &[], &p).unwrap();
        assert_eq!(frame.len(), 1568);
        assert_eq!(FramePlan::new(&c, &[], &p).total_samples, 1568);
    }

    #[test]
    fn netid_modes() {
        let p = params(7);
        let mut c = FrameConfig::default();
        assert_eq!(c.netid_symbols(&p), [24, 24]);
        c.netid_mode = NetIdMode::Paired;
        assert_eq!(c.netid_symbols(&p), [24, 128 - 24]);
        c.sync_word = 0;
        assert_eq!(c.netid_symbols(&p), [0, 0]);
    }

    #[test]
    fn netid_symbols_are_in_frame() {
        let p = params(7);
        let c = cfg(Coding::Hamming(CodingRate::Cr45), true, 3);
        let frame = build_frame(&c, b"abc", &p).unwrap();
        let up = reference_upchirp(&p);
        let n = p.n();
        for (k, expected) in [(8, 24), (9, 24)] {
            let w = &frame.samples[k * n..(k + 1) * n];
            assert_eq!(demodulate(w, &up.samples, &p).unwrap().value(), expected);
        }
    }

    #[test]
    fn oversize_payload() {
        let p = params(7);
        let c = cfg(Coding::Uncoded, false, 256);
        assert!(matches!(build_frame(&c, &[0; 256], &p), Err(Error::Frame(_))));
        let c = cfg(Coding::Uncoded, false, 3);
        assert!(build_frame(&c, &[0; 4], &p).is_err());
    }

    #[test]
    fn invalid_preamble_len() {
        let p = params(7);
        let c = FrameConfig {
            preamble_len: 5,
            ..FrameConfig::default()
        };
        assert!(build_frame(&c, &[], &p).is_err());
    }

    #[test]
    fn crc_empty_is_init() {
        let mut params = CrcParams::default();
        assert_eq!(crc16(&[], &params), 0);
        params.init = 0xffff;
        assert_eq!(crc16(&[], &params), 0xffff);
    }

    #[test]
    fn crc_check_string_matches_bitwise_reference() {
        let data = b"123456789";
        let expected = crc16_bitwise(data, 0x1021, 0x0000);
        assert_eq!(crc16(data, &CrcParams::default()), expected);
        let alt = CrcParams {
            init: 0xffff,
            ..CrcParams::default()
        };
        assert_eq!(crc16(data, &alt), crc16_bitwise(data, 0x1021, 0xffff));
    }

    #[test]
    fn crc_reflected_variant() {
        // CRC-16/KERMIT: poly 0x1021, init 0, reflected in and out.
        let kermit = CrcParams {
            reflect_in: true,
            reflect_out: true,
            ..CrcParams::default()
        };
        assert_eq!(crc16(b"123456789", &kermit), 0x2189);
    }

    #[test]
    fn sample_count_formula_matches_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sf in 7..=12 {
            let p = params(sf);
            for coding in [Coding::Uncoded, Coding::Hamming(CodingRate::Cr46)] {
                let len = rng.random_range(0..40);
                let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                let c = cfg(coding, true, len);
                let syms = encode_payload(&payload, &c, &p).unwrap();
                assert_eq!(syms.len(), c.payload_symbol_count(&p));
                let frame = build_frame(&c, &payload, &p).unwrap();
                assert_eq!(frame.len(), FramePlan::new(&c, &syms, &p).total_samples);
                assert_eq!(frame.len(), (c.preamble_len + 4) * p.n() + p.n() / 4 + syms.len() * p.n());
            }
        }
    }

    #[test]
    fn loopback_all_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sf in [7u8, 9, 12] {
            let p = params(sf);
            for coding in [
                Coding::Uncoded,
                Coding::Hamming(CodingRate::Cr45),
                Coding::Hamming(CodingRate::Cr46),
                Coding::Hamming(CodingRate::Cr47),
                Coding::Hamming(CodingRate::Cr48),
            ] {
                for has_crc in [false, true] {
                    let len = rng.random_range(0..=32);
                    let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                    let c = cfg(coding, has_crc, len);
                    let frame = build_frame(&c, &payload, &p).unwrap();
                    let decoded = decode_payload_symbols(&genie_demod(&frame, &c, &p), &c, &p).unwrap();
                    assert_eq!(decoded.payload, payload);
                    assert!(decoded.crc_ok);
                    assert_eq!(decoded.corrected_codewords + decoded.uncorrectable_codewords, 0);
                }
            }
        }
    }

    #[test]
    fn wrong_symbol_count() {
        let p = params(7);
        let c = cfg(Coding::Hamming(CodingRate::Cr48), true, 4);
        let syms = encode_payload(&[1, 2, 3, 4], &c, &p).unwrap();
        assert!(matches!(
            decode_payload_symbols(&syms[1..], &c, &p),
            Err(Error::Frame(_))
        ));
    }

    #[test]
    fn plus_minus_one_error_corrected_cr47_cr48() {
        let p = params(7);
        let payload: Vec<u8> = (0..20).collect();
        for cr in [CodingRate::Cr47, CodingRate::Cr48] {
            let c = cfg(Coding::Hamming(cr), true, payload.len());
            let syms = encode_payload(&payload, &c, &p).unwrap();
            for pos in 0..syms.len() {
                for delta in [-1i64, 1] {
                    let mut rx = syms.clone();
                    rx[pos] = Symbol::wrapping(i64::from(rx[pos].value()) + delta, &p);
                    let d = decode_payload_symbols(&rx, &c, &p).unwrap();
                    assert_eq!(d.payload, payload, "{cr} pos={pos} delta={delta}");
                    assert!(d.crc_ok);
                    assert_eq!(d.corrected_codewords, 1);
                }
            }
        }
    }

    #[test]
    fn plus_minus_one_error_cr45_is_detected() {
        let p = params(7);
        let payload: Vec<u8> = (100..120).collect();
        let c = cfg(Coding::Hamming(CodingRate::Cr45), true, payload.len());
        let syms = encode_payload(&payload, &c, &p).unwrap();
        let n_cw = CodingRate::Cr45.codeword_len();
        let data_bits = 8 * (payload.len() + 2);
        for pos in 0..syms.len() {
            for delta in [-1i64, 1] {
                let mut rx = syms.clone();
                rx[pos] = Symbol::wrapping(i64::from(rx[pos].value()) + delta, &p);
                let d = decode_payload_symbols(&rx, &c, &p).unwrap();
                // Which codeword and bit did the single label flip land on?
                let flipped = gray_demap(rx[pos].value()) ^ gray_demap(syms[pos].value());
                let j = flipped.trailing_zeros() as usize;
                let row = pos % n_cw;
                let block = pos / n_cw;
                let nibble = block * 7 + (row + j) % 7;
                let hits_real_data = row < 4 && 4 * nibble + row < data_bits;
                assert_eq!(d.uncorrectable_codewords, 1, "pos={pos}");
                assert_eq!(d.crc_ok, !hits_real_data, "pos={pos} delta={delta}");
            }
        }
    }

    #[test]
    fn lint_close_sync_words() {
        let p = params(7);
        assert!(netid_lint(&[24, 32], &p).is_empty());
        assert_eq!(netid_lint(&[24, 26, 127, 0], &p).len(), 2);
        assert_eq!(symbol_distance(127, 0, 128), 1);
    }
}
