//! Chirp symbols, dechirping and DFT demodulation.
//!
//! Everything here runs at the canonical rate `fs = B`, where a symbol of
//! spreading factor `SF` spans exactly `N = 2^SF` samples. Symbols use the
//! phase-continuous form
//!
//! ```text
//! x_s[n] = exp(j 2 pi (n^2 / 2N + (s/N - 1/2) n)),  n = 0..N-1
//! ```
//!
//! so that the dechirped symbol `x_s * conj(x_0)` is the pure tone
//! `exp(j 2 pi s n / N)` and lands in DFT bin `s`.

use std::cell::RefCell;
use std::rc::Rc;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

pub const MIN_SF: u8 = 7;
pub const MAX_SF: u8 = 12;
pub const STANDARD_BANDWIDTHS_HZ: [f64; 3] = [125e3, 250e3, 500e3];

/// Spreading factor, bandwidth and sample rate of a LoRa link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpParams {
    sf: u8,
    bandwidth_hz: f64,
    sample_rate_hz: f64,
}

impl ChirpParams {
    /// Parameters with `sample_rate_hz = bandwidth_hz`.
    pub fn new(sf: u8, bandwidth_hz: f64) -> Result<Self> {
        Self::with_sample_rate(sf, bandwidth_hz, bandwidth_hz)
    }

    /// The sample rate must be an integer multiple of the bandwidth.
    pub fn with_sample_rate(sf: u8, bandwidth_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(MIN_SF..=MAX_SF).contains(&sf) {
            return Err(Error::config(format!(
                "spreading factor {sf} outside {MIN_SF}..={MAX_SF}"
            )));
        }
        if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
            return Err(Error::config(format!("invalid bandwidth {bandwidth_hz}")));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::config(format!("invalid sample rate {sample_rate_hz}")));
        }
        let ratio = sample_rate_hz / bandwidth_hz;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "sample rate {sample_rate_hz} is not an integer multiple of bandwidth {bandwidth_hz}"
            )));
        }
        Ok(ChirpParams {
            sf,
            bandwidth_hz,
            sample_rate_hz,
        })
    }

    /// Like [`ChirpParams::new`], additionally requiring a standard LoRa bandwidth.
    pub fn standard(sf: u8, bandwidth_hz: f64) -> Result<Self> {
        if !STANDARD_BANDWIDTHS_HZ.contains(&bandwidth_hz) {
            return Err(Error::config(format!(
                "bandwidth {bandwidth_hz} Hz is not one of 125/250/500 kHz"
            )));
        }
        Self::new(sf, bandwidth_hz)
    }

    pub fn sf(&self) -> u8 {
        self.sf
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Chips (and samples at `fs = B`) per symbol.
    pub fn n(&self) -> usize {
        1 << self.sf
    }

    pub fn oversampling(&self) -> usize {
        (self.sample_rate_hz / self.bandwidth_hz).round() as usize
    }

    /// Errors unless the modem can run directly on these parameters.
    pub(crate) fn require_critical_rate(&self) -> Result<()> {
        if self.oversampling() != 1 {
            return Err(Error::config(
                "modem processing requires sample_rate_hz == bandwidth_hz",
            ));
        }
        Ok(())
    }
}

/// A chirp symbol value in `0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(u16);

impl Symbol {
    pub fn new(value: u16, p: &ChirpParams) -> Result<Self> {
        if usize::from(value) >= p.n() {
            return Err(Error::config(format!(
                "symbol {value} out of range for SF{}",
                p.sf()
            )));
        }
        Ok(Symbol(value))
    }

    /// Reduces `value` modulo `N`.
    pub fn wrapping(value: i64, p: &ChirpParams) -> Self {
        Symbol(value.rem_euclid(p.n() as i64) as u16)
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

/// Complex baseband samples with the global index of the first sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IqBuffer {
    pub samples: Vec<Complex64>,
    pub origin_index: u64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>) -> Self {
        IqBuffer {
            samples,
            origin_index: 0,
        }
    }

    pub fn with_origin(samples: Vec<Complex64>, origin_index: u64) -> Self {
        IqBuffer {
            samples,
            origin_index,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Power spectrum of a dechirped window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub magnitudes_sq: Vec<f64>,
    pub k_max: usize,
    pub complex_bins: Option<Vec<Complex64>>,
}

impl SpectrumResult {
    pub fn from_power(magnitudes_sq: Vec<f64>) -> Self {
        let k_max = argmax(&magnitudes_sq);
        SpectrumResult {
            magnitudes_sq,
            k_max,
            complex_bins: None,
        }
    }

    pub fn len(&self) -> usize {
        self.magnitudes_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes_sq.is_empty()
    }

    pub fn peak_power(&self) -> f64 {
        self.magnitudes_sq.get(self.k_max).copied().unwrap_or(0.0)
    }

    /// Adds another spectrum of the same length bin by bin (noncoherent combining).
    pub fn accumulate(&mut self, other: &SpectrumResult) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.magnitudes_sq.iter_mut().zip(&other.magnitudes_sq) {
            *a += b;
        }
        self.k_max = argmax(&self.magnitudes_sq);
        self.complex_bins = None;
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `exp(j 2 pi m / 2N)` for `m < 2N`; every chirp phase is one of these.
fn phase_table(big_n: usize) -> Rc<Vec<Complex64>> {
    thread_local! {
        static TABLE: RefCell<Option<(usize, Rc<Vec<Complex64>>)>> = const { RefCell::new(None) };
    }
    TABLE.with(|t| {
        let mut t = t.borrow_mut();
        match t.as_ref() {
            Some((n, table)) if *n == big_n => Rc::clone(table),
            _ => {
                let two_n = 2 * big_n;
                let table: Rc<Vec<Complex64>> = Rc::new(
                    (0..two_n)
                        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / two_n as f64))
                        .collect(),
                );
                *t = Some((big_n, Rc::clone(&table)));
                table
            }
        }
    })
}

/// One chirp symbol of length `N`. The phase index
/// `(n^2 + (2s - N) n) mod 2N` is exact integer arithmetic.
pub fn modulate_symbol(s: Symbol, p: &ChirpParams) -> IqBuffer {
    let n = p.n();
    let table = phase_table(n);
    let two_n = 2 * n as i64;
    let step = 2 * i64::from(s.value()) - n as i64;
    IqBuffer::new(
        (0..n as i64)
            .map(|k| table[(k * k + step * k).rem_euclid(two_n) as usize])
            .collect(),
    )
}

/// The unmodulated upchirp `x_0`.
pub fn reference_upchirp(p: &ChirpParams) -> IqBuffer {
    modulate_symbol(Symbol(0), p)
}

/// The downchirp `conj(x_0)`.
pub fn reference_downchirp(p: &ChirpParams) -> IqBuffer {
    let mut up = reference_upchirp(p);
    for z in up.samples.iter_mut() {
        *z = z.conj();
    }
    up
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn dechirped_bins(window: &[Complex64], reference: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
    if reference.is_empty() || reference.len() > window.len() || window.len() > k {
        return Err(Error::config(format!(
            "dechirp needs reference <= window <= DFT length, got {} / {} / {k}",
            reference.len(),
            window.len()
        )));
    }
    if !window.len().is_multiple_of(reference.len()) {
        return Err(Error::config(format!(
            "window length {} is not a multiple of the reference length {}",
            window.len(),
            reference.len()
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    for (i, (dst, y)) in buf.iter_mut().zip(window).enumerate() {
        *dst = y * reference[i % reference.len()].conj();
    }
    forward_fft(k).process(&mut buf);
    Ok(buf)
}

/// Multiplies `window` by the conjugate of `reference` (tiled when the window
/// holds several symbols), zero-pads to `k` and takes a length-`k` DFT.
pub fn dechirp_dft(window: &[Complex64], reference: &[Complex64], k: usize) -> Result<SpectrumResult> {
    let bins = dechirped_bins(window, reference, k)?;
    let magnitudes_sq: Vec<f64> = bins.iter().map(|z| z.norm_sqr()).collect();
    let k_max = argmax(&magnitudes_sq);
    Ok(SpectrumResult {
        magnitudes_sq,
        k_max,
        complex_bins: Some(bins),
    })
}

/// Power-only variant of [`dechirp_dft`].
pub fn dechirp_power(window: &[Complex64], reference: &[Complex64], k: usize) -> Result<SpectrumResult> {
    let bins = dechirped_bins(window, reference, k)?;
    Ok(SpectrumResult::from_power(
        bins.iter().map(|z| z.norm_sqr()).collect(),
    ))
}

/// Non-coherent hard decision `argmax_k |Y[k]|` over `N` bins.
pub fn demodulate(window: &[Complex64], reference: &[Complex64], p: &ChirpParams) -> Result<Symbol> {
    let n = p.n();
    if window.len() != n || reference.len() != n {
        return Err(Error::config(format!(
            "demodulate needs {n}-sample window and reference, got {} / {}",
            window.len(),
            reference.len()
        )));
    }
    let spectrum = dechirp_power(window, reference, n)?;
    Ok(Symbol(spectrum.k_max as u16))
}

/// Concatenated chirps for a list of symbol values.
pub fn modulate_symbols(symbols: &[Symbol], p: &ChirpParams) -> IqBuffer {
    let mut out = Vec::with_capacity(symbols.len() * p.n());
    for &s in symbols {
        out.extend(modulate_symbol(s, p).samples);
    }
    IqBuffer::new(out)
}
