//! Receiver frame synchronization.
//!
//! The stages run strictly in this order:
//!
//! 1. **Preamble detection.** Consecutive `N`-sample windows are demodulated
//!    against the upchirp; a preamble is declared once `N_pr - 1` decisions
//!    fall inside a ring window `{s-1, s, s+1}`. The majority value `s_pr` is
//!    used for coarse alignment by skipping `N - s_pr` samples.
//! 2. **Integer offsets.** The upchirp bin measures `tau_CFO - STO` and the
//!    downchirp bin measures `tau_CFO + STO` (both mod `N`). Solving the pair
//!    separates the integer STO from the integer CFO; the CFO is removed by a
//!    frequency shift and the window grid is moved by the STO.
//! 3. **Fractional CFO.** The remaining `N_pr - 2` preamble upchirps are
//!    dechirped as one block, zero padded to twice the length and the peak is
//!    refined with the three-spectral-line (RCTSL) interpolator.
//! 4. **Fractional STO.** After CFO compensation, per-symbol `2N`-point
//!    spectra are summed noncoherently and refined the same way. The time
//!    offset is removed with the windowed-sinc interpolator of the channel.
//!
//! A final pass repeats the integer separation on the compensated
//! downchirps, which removes the +/-1 ambiguity left by coarse alignment.
//! Payload windows are cut `2.25 N` after the first downchirp.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;

use crate::channel::{fractional_delay, rotate};
use crate::frame::{symbol_distance, FrameConfig};
use crate::signal::{dechirp_power, reference_downchirp, reference_upchirp, ChirpParams, IqBuffer, SpectrumResult};
use crate::{Error, Result};

/// Receiver procedure phases, entered in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SyncPhase {
    Searching,
    PreambleLocked,
    IntegerCorrected,
    FractionCorrected,
    Demodulating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncConfig {
    pub preamble_len: usize,
    /// Consecutive matching decisions needed to declare a preamble.
    pub detect_threshold: usize,
    pub payload_symbols: usize,
    /// Expected network identifier symbols; checked with +/-1 slack when set.
    pub expected_netid: Option<[u16; 2]>,
    /// Largest accepted |CFO| in bins.
    pub max_cfo_bins: f64,
}

impl SyncConfig {
    pub fn for_frame(cfg: &FrameConfig, p: &ChirpParams) -> Self {
        SyncConfig {
            preamble_len: cfg.preamble_len,
            detect_threshold: cfg.preamble_len - 1,
            payload_symbols: cfg.payload_symbol_count(p),
            expected_netid: None,
            max_cfo_bins: p.n() as f64 / 4.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.preamble_len < 4 {
            return Err(Error::config("synchronizer needs at least 4 preamble upchirps"));
        }
        if self.detect_threshold < 2 || self.detect_threshold > self.preamble_len {
            return Err(Error::config(format!(
                "detect threshold {} must be in 2..={}",
                self.detect_threshold, self.preamble_len
            )));
        }
        Ok(())
    }
}

/// Estimated offsets of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncEstimate {
    /// Majority preamble decision before any correction.
    pub s_pr: u16,
    /// Integer STO in chips, relative to the `N`-sample decision grid of the stream.
    pub l_sto: i64,
    /// Integer CFO in bins, `floor(tau_CFO)`.
    pub l_cfo: i64,
    pub lambda_sto: f64,
    pub lambda_cfo: f64,
    /// Max-bin over rest-of-bins power ratio on the compensated preamble.
    pub snr_est_db: f64,
    /// Global sample position of the first preamble chip.
    pub frame_start: f64,
}

impl SyncEstimate {
    /// `L_STO + lambda_STO`, in `[0, N)`.
    pub fn tau_sto(&self) -> f64 {
        self.l_sto as f64 + self.lambda_sto
    }

    /// `L_CFO + lambda_CFO`, in bins.
    pub fn tau_cfo(&self) -> f64 {
        self.l_cfo as f64 + self.lambda_cfo
    }
}

/// Per-frame record of which stages completed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyncDiagnostics {
    pub preamble_found: bool,
    pub integer_ok: bool,
    pub fraction_ok: bool,
    /// Integer correction applied by the final downchirp pass.
    pub refinement_shift: i64,
    /// Phases entered, in order.
    pub phases: Vec<SyncPhase>,
    /// Stage failures that reset the search before the frame locked.
    pub resets: usize,
}

#[derive(Debug, Clone)]
pub struct SyncOutput {
    pub estimate: SyncEstimate,
    /// Aligned, CFO- and STO-compensated `N`-sample payload windows.
    pub payload_windows: Vec<Vec<Complex64>>,
    pub diagnostics: SyncDiagnostics,
}

/// RCTSL interpolation constants for `N`-chip symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RctslConstants {
    pub n: f64,
    pub u: f64,
    pub v: f64,
}

impl RctslConstants {
    pub fn new(n: usize) -> Self {
        let n = n as f64;
        let u = 64.0 * n / (PI.powi(5) + 32.0 * PI);
        RctslConstants { n, u, v: u * PI * PI / 4.0 }
    }

    /// Peak offset `k_alpha` in DFT bins of a twice-zero-padded spectrum,
    /// from the peak power and its two neighbours.
    ///
    /// The neighbours enter the denominator as a sum, which makes the
    /// estimator unbiased for a rectangular-windowed tone.
    pub fn offset(&self, below: f64, peak: f64, above: f64) -> f64 {
        let diff = above - below;
        let denom = self.u * (above + below) + self.v * peak;
        if denom <= 0.0 {
            return 0.0;
        }
        self.n / PI * diff / denom
    }
}

/// Result of a fractional estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalEstimate {
    /// Fractional offset in `[0, 1)`.
    pub lambda: f64,
    /// Refined peak position in units of `N`-point bins, wrapped to `(-N/2, N/2]`.
    pub peak_bins: f64,
}

fn wrap_signed(x: f64, n: f64) -> f64 {
    let r = x.rem_euclid(n);
    if r > n / 2.0 {
        r - n
    } else {
        r
    }
}

fn wrap_signed_int(x: i64, n: i64) -> i64 {
    let r = x.rem_euclid(n);
    if r > n / 2 {
        r - n
    } else {
        r
    }
}

/// Refined peak of a spectrum of `upsample * n` bins, in `N`-point bin units.
fn refined_peak(spectrum: &SpectrumResult, upsample: usize, constants: &RctslConstants) -> f64 {
    let k = spectrum.len();
    let m = &spectrum.magnitudes_sq;
    let km = spectrum.k_max;
    let alpha = constants.offset(m[(km + k - 1) % k], m[km], m[(km + 1) % k]);
    (km as f64 + alpha) / upsample as f64
}

/// Preamble detector over a stream of demodulated decisions.
#[derive(Debug, Clone)]
pub struct PreambleDetector {
    n: usize,
    threshold: usize,
    history: VecDeque<u16>,
}

impl PreambleDetector {
    pub fn new(n: usize, threshold: usize) -> Self {
        PreambleDetector {
            n,
            threshold,
            history: VecDeque::with_capacity(threshold),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Feeds one decision; `None` marks a window without energy. Returns the
    /// majority value once the last `threshold` decisions fit in a ring
    /// window `{s-1, s, s+1}` for some `s`.
    pub fn push(&mut self, decision: Option<u16>) -> Option<u16> {
        let Some(value) = decision else {
            self.reset();
            return None;
        };
        if self.history.len() == self.threshold {
            self.history.pop_front();
        }
        self.history.push_back(value);
        if self.history.len() < self.threshold {
            return None;
        }
        let n = self.n;
        let fits = |c: u16| self.history.iter().all(|&v| symbol_distance(v, c, n) <= 1);
        let first = self.history[0];
        let centered = [first, (first + 1) % n as u16, (first + n as u16 - 1) % n as u16]
            .into_iter()
            .any(fits);
        centered.then(|| self.majority())
    }

    /// Most frequent value; ties go to the smallest value.
    fn majority(&self) -> u16 {
        let mut best = (0usize, u16::MAX);
        for &v in &self.history {
            let count = self.history.iter().filter(|&&w| w == v).count();
            if count > best.0 || (count == best.0 && v < best.1) {
                best = (count, v);
            }
        }
        best.1
    }
}

/// Outcome of preamble detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreambleLock {
    pub s_pr: u16,
    /// Start of the window that completed the detection.
    pub window_start: usize,
    /// Samples from the search start to the coarsely aligned grid, i.e. up
    /// to the last detection window plus the `N - s_pr` discarded samples.
    pub consumed_samples: usize,
}

/// Slides `N`-sample windows from `start` until a preamble is found.
pub fn detect_preamble(samples: &[Complex64], start: usize, p: &ChirpParams, threshold: usize) -> Option<PreambleLock> {
    let n = p.n();
    let up = reference_upchirp(p);
    let mut detector = PreambleDetector::new(n, threshold);
    let mut pos = start;
    while pos + n <= samples.len() {
        let spec = dechirp_power(&samples[pos..pos + n], &up.samples, n).ok()?;
        let decision = (spec.peak_power() > 0.0).then_some(spec.k_max as u16);
        if let Some(s_pr) = detector.push(decision) {
            return Some(PreambleLock {
                s_pr,
                window_start: pos,
                consumed_samples: pos + n - usize::from(s_pr) - start,
            });
        }
        pos += n;
    }
    None
}

/// Separates integer STO and CFO from an upchirp bin (`CFO - STO`) and a
/// downchirp bin (`CFO + STO`), both mod `N`.
///
/// Returns `(l_sto, l_cfo)` with `l_sto` in `0..N` and `|l_cfo| <= N/4`; a
/// tie at exactly `N/4` resolves to the positive value. An odd bin sum (the
/// pair disagreeing by one) is rounded down.
pub fn estimate_integer_offsets(upchirp_bin: usize, downchirp_bin: usize, n: usize) -> Result<(i64, i64)> {
    if upchirp_bin >= n || downchirp_bin >= n {
        return Err(Error::sync(
            "integer",
            format!("bins ({upchirp_bin}, {downchirp_bin}) out of range for N={n}"),
        ));
    }
    let ni = n as i64;
    let sum = (upchirp_bin + downchirp_bin) as i64 % ni;
    let half = sum.div_euclid(2);
    let a = wrap_signed_int(half, ni);
    let b = wrap_signed_int(half + ni / 2, ni);
    let l_cfo = match a.abs().cmp(&b.abs()) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => a.max(b),
    };
    let l_sto = (downchirp_bin as i64 - l_cfo).rem_euclid(ni);
    Ok((l_sto, l_cfo))
}

/// Fractional CFO from aligned preamble upchirp windows, via one coherent
/// DFT of twice the block length.
pub fn estimate_lambda_cfo(windows: &[&[Complex64]], p: &ChirpParams) -> Result<FractionalEstimate> {
    let n = p.n();
    if windows.len() < 2 {
        return Err(Error::sync("lambda_cfo", "fewer than 2 preamble windows"));
    }
    if windows.iter().any(|w| w.len() != n) {
        return Err(Error::config("preamble windows must be N samples long"));
    }
    let m = windows.len();
    let block: Vec<Complex64> = windows.iter().flat_map(|w| w.iter().copied()).collect();
    let up = reference_upchirp(p);
    let spectrum = dechirp_power(&block, &up.samples, 2 * m * n)?;
    let peak = refined_peak(&spectrum, 2 * m, &RctslConstants::new(n));
    Ok(FractionalEstimate {
        lambda: peak.rem_euclid(1.0),
        peak_bins: wrap_signed(peak, n as f64),
    })
}

/// Preamble windows whose fractional CFO has been removed. Only
/// [`compensate_lambda_cfo`] creates these, so the STO estimator cannot run
/// on uncompensated input.
#[derive(Debug, Clone)]
pub struct CfoCompensated {
    windows: Vec<Vec<Complex64>>,
    pub residual_cfo_bins: f64,
}

impl CfoCompensated {
    pub fn windows(&self) -> &[Vec<Complex64>] {
        &self.windows
    }
}

/// Removes a CFO of `cfo_bins` from windows whose first samples sit at the
/// given global indices.
pub fn compensate_lambda_cfo(windows: &[(u64, &[Complex64])], cfo_bins: f64, p: &ChirpParams) -> CfoCompensated {
    let n = p.n() as f64;
    let windows = windows
        .iter()
        .map(|&(origin, w)| {
            let mut buf = IqBuffer::with_origin(w.to_vec(), origin);
            rotate(&mut buf, -cfo_bins / n);
            buf.samples
        })
        .collect();
    CfoCompensated {
        windows,
        residual_cfo_bins: cfo_bins,
    }
}

/// Fractional STO from CFO-compensated preamble windows: noncoherent sum
/// of per-symbol `2N`-point spectra.
pub fn estimate_lambda_sto(preamble: &CfoCompensated, p: &ChirpParams) -> Result<FractionalEstimate> {
    let n = p.n();
    if preamble.windows.len() < 2 {
        return Err(Error::sync("lambda_sto", "fewer than 2 preamble windows"));
    }
    let up = reference_upchirp(p);
    let mut total: Option<SpectrumResult> = None;
    for w in &preamble.windows {
        let s = dechirp_power(w, &up.samples, 2 * n)?;
        match total.as_mut() {
            Some(t) => t.accumulate(&s),
            None => total = Some(s),
        }
    }
    let total = total.expect("at least two windows");
    let peak = refined_peak(&total, 2, &RctslConstants::new(n));
    Ok(FractionalEstimate {
        lambda: peak.rem_euclid(1.0),
        peak_bins: wrap_signed(peak, n as f64),
    })
}

/// Max-bin power over the power in all other bins, in dB. Returns NaN for an
/// all-zero spectrum and `+inf` when the other bins carry no power.
pub fn estimate_snr(spectrum: &SpectrumResult) -> f64 {
    let total: f64 = spectrum.magnitudes_sq.iter().sum();
    if total <= 0.0 {
        return f64::NAN;
    }
    let peak = spectrum.peak_power();
    let rest = total - peak;
    if rest <= 1e-12 * peak {
        return f64::INFINITY;
    }
    10.0 * (peak / rest).log10()
}

/// Offset subtracted from [`estimate_snr`] to read per-sample SNR: a unit
/// chirp puts `N^2` in its bin against `(N-1) N sigma^2` elsewhere.
pub fn snr_calibration_db(n: usize) -> f64 {
    10.0 * (n as f64 / (n as f64 - 1.0)).log10()
}

/// CFO-derotated copy of `stream[region]`, resampled so that index `i`
/// holds the stream at position `region.start + i + frac`.
fn compensate_region(stream: &IqBuffer, region: Range<usize>, cfo_bins: f64, frac: f64, n: usize) -> Vec<Complex64> {
    // Samples past the end of the stream read as zero.
    let mut copy = stream.samples[region.start.min(stream.len())..region.end.min(stream.len())].to_vec();
    copy.resize(region.len(), Complex64::new(0.0, 0.0));
    let mut buf = IqBuffer::with_origin(copy, stream.origin_index + region.start as u64);
    rotate(&mut buf, -cfo_bins / n as f64);
    if frac == 0.0 {
        return buf.samples;
    }
    let mut out = fractional_delay(&buf.samples, 1.0 - frac);
    out.remove(0);
    out.truncate(region.len());
    out
}

fn window_power(samples: &[Complex64], start: usize, reference: &[Complex64], k: usize) -> Result<SpectrumResult> {
    let n = reference.len();
    samples
        .get(start..start + n)
        .ok_or_else(|| Error::sync("window", "stream exhausted"))
        .and_then(|w| dechirp_power(w, reference, k))
}

/// Energy of a frame template at DC after removing `tau_cfo` and aligning to
/// `grid`: each preamble upchirp, both downchirps and the quarter, with the
/// downchirps at grid window `kd`. Windows outside the stream count as zero.
fn template_energy(stream: &IqBuffer, grid: f64, tau_cfo: f64, kd: i64, npr: usize, p: &ChirpParams) -> f64 {
    let n = p.n();
    let ni = n as i64;
    let gi = grid.floor() as i64;
    let first = gi + (kd - 2 - npr as i64) * ni;
    let start = first.max(0) as usize;
    let end = (gi + (kd + 3) * ni).max(0) as usize;
    if end <= start {
        return 0.0;
    }
    let comp = compensate_region(stream, start..end, tau_cfo, grid - grid.floor(), n);
    let up = reference_upchirp(p);
    let down = reference_downchirp(p);
    let dc = |k: i64, len: usize, reference: &[Complex64]| -> f64 {
        let pos = gi + k * ni - start as i64;
        let Ok(pos) = usize::try_from(pos) else { return 0.0 };
        comp.get(pos..pos + len)
            .map_or(0.0, |w| w.iter().zip(reference).map(|(y, r)| y * r.conj()).sum::<Complex64>().norm_sqr())
    };
    let preamble: f64 = (kd - 2 - npr as i64..kd - 2).map(|k| dc(k, n, &up.samples)).sum();
    preamble + dc(kd, n, &down.samples) + dc(kd + 1, n, &down.samples) + dc(kd + 2, n / 4, &down.samples)
}

fn sum_spectra(
    samples: &[Complex64],
    starts: impl IntoIterator<Item = usize>,
    reference: &[Complex64],
    k: usize,
) -> Result<SpectrumResult> {
    let mut total: Option<SpectrumResult> = None;
    for s in starts {
        let spec = window_power(samples, s, reference, k)?;
        match total.as_mut() {
            Some(t) => t.accumulate(&spec),
            None => total = Some(spec),
        }
    }
    total.ok_or_else(|| Error::sync("window", "no windows"))
}

/// Payload windows cut from a stream whose offsets are known exactly.
///
/// `frame_start` is the global position of the first preamble chip and
/// `tau_cfo` the CFO in bins. Used for genie-aided reference curves.
pub fn align_with_known_offsets(
    stream: &IqBuffer,
    frame_start: f64,
    tau_cfo: f64,
    cfg: &SyncConfig,
    p: &ChirpParams,
) -> Result<Vec<Vec<Complex64>>> {
    let n = p.n();
    let local = frame_start - stream.origin_index as f64;
    if local < 0.0 {
        return Err(Error::sync("genie", "frame starts before the stream"));
    }
    let int = local.floor() as usize;
    let frac = local - local.floor();
    let payload_start = int + (cfg.preamble_len + 4) * n + n / 4;
    let end = payload_start + cfg.payload_symbols * n;
    let region_end = (end + n).min(stream.len());
    if end > stream.len() {
        return Err(Error::sync("genie", "stream exhausted"));
    }
    let region_start = payload_start.saturating_sub(n);
    let comp = compensate_region(stream, region_start..region_end, tau_cfo, frac, n);
    let offset = payload_start - region_start;
    Ok((0..cfg.payload_symbols)
        .map(|i| comp[offset + i * n..offset + (i + 1) * n].to_vec())
        .collect())
}

const RESIDUAL_PASSES: usize = 2;

/// Samples a frame may run past the end of the stream; the grid estimate
/// can land a fraction of a chip late on a frame that ends the stream.
const TAIL_SLACK: usize = 8;

/// Synchronizer state for one stream. Frames are returned in order by
/// repeated calls to [`FrameSynchronizer::next_frame`].
#[derive(Debug, Clone)]
pub struct FrameSynchronizer {
    p: ChirpParams,
    cfg: SyncConfig,
    phase: SyncPhase,
    cursor: usize,
    phases: Vec<SyncPhase>,
}

impl FrameSynchronizer {
    pub fn new(p: ChirpParams, cfg: SyncConfig) -> Result<Self> {
        p.require_critical_rate()?;
        cfg.validate()?;
        Ok(FrameSynchronizer {
            p,
            cfg,
            phase: SyncPhase::Searching,
            cursor: 0,
            phases: vec![SyncPhase::Searching],
        })
    }

    pub fn phase(&self) -> SyncPhase {
        self.phase
    }

    fn enter(&mut self, phase: SyncPhase) {
        debug_assert!(phase == SyncPhase::Searching || phase > self.phase);
        self.phase = phase;
        self.phases.push(phase);
    }

    /// Searches from the internal cursor for the next frame. A stage failure
    /// resets to `Searching` one window past the detection point.
    pub fn next_frame(&mut self, stream: &IqBuffer) -> Result<SyncOutput> {
        let n = self.p.n();
        let mut resets = 0;
        loop {
            if self.phase != SyncPhase::Searching {
                self.enter(SyncPhase::Searching);
            }
            let Some(lock) = detect_preamble(&stream.samples, self.cursor, &self.p, self.cfg.detect_threshold) else {
                self.cursor = stream.len();
                return Err(Error::sync("search", "stream exhausted without a preamble"));
            };
            self.enter(SyncPhase::PreambleLocked);
            match self.lock_frame(stream, &lock) {
                Ok((mut out, resume)) => {
                    self.cursor = resume;
                    out.diagnostics.resets = resets;
                    out.diagnostics.phases = std::mem::replace(&mut self.phases, vec![SyncPhase::Searching]);
                    self.phase = SyncPhase::Searching;
                    return Ok(out);
                }
                Err(_) => {
                    resets += 1;
                    self.cursor = lock.window_start + n;
                }
            }
        }
    }

    fn lock_frame(&mut self, stream: &IqBuffer, lock: &PreambleLock) -> Result<(SyncOutput, usize)> {
        let p = self.p;
        let n = p.n();
        let npr = self.cfg.preamble_len;
        let samples = &stream.samples;
        let up = reference_upchirp(&p);
        let down = reference_downchirp(&p);

        // Coarsely aligned grid: upchirps now dechirp to bin 0 (+/-1).
        let g1 = lock.window_start + n - usize::from(lock.s_pr);

        // The downchirps: the adjacent window pair with the most down-dechirped
        // energy. At a fractional delay the downchirp tone straddles two bins,
        // so energy is scored over bin pairs.
        let reach = npr + 6 - self.cfg.detect_threshold.min(npr);
        let mut spectra = Vec::with_capacity(reach + 1);
        for k in 0..=reach {
            match window_power(samples, g1 + k * n, &down.samples, n) {
                Ok(s) => spectra.push(s.magnitudes_sq),
                Err(_) => break,
            }
        }
        if spectra.len() < 2 {
            return Err(Error::sync("integer", "stream exhausted before the downchirps"));
        }
        let bin_pair = |p: &[f64], b: usize| p[b] + p[(b + 1) % n];
        let pair_energy = |k: usize, b: usize| bin_pair(&spectra[k], b) + bin_pair(&spectra[k + 1], b);
        let pairs = spectra.len() - 1;
        let (kd0, bin) = (0..pairs)
            .flat_map(|k| (0..n).map(move |b| (k, b)))
            .max_by(|&(k0, b0), &(k1, b1)| pair_energy(k0, b0).total_cmp(&pair_energy(k1, b1)))
            .expect("at least one pair");

        let kd = kd0;
        let down_peak = pair_energy(kd, bin);
        let up_peak = sum_spectra(samples, [g1 + kd * n, g1 + (kd + 1) * n], &up.samples, n)?.magnitudes_sq;
        let up_peak = (0..n).map(|b| bin_pair(&up_peak, b)).fold(0.0, f64::max);
        if down_peak <= up_peak {
            return Err(Error::sync("integer", "no downchirp after preamble"));
        }
        self.lock_grid(stream, lock, g1, kd as i64, true)
    }

    /// Everything after downchirp localisation, for downchirps at grid
    /// window `kd`. With `retry`, a one-symbol slip found once the offsets are
    /// corrected is fixed by running again from the neighbouring window.
    fn lock_grid(
        &mut self,
        stream: &IqBuffer,
        lock: &PreambleLock,
        g1: usize,
        kd: i64,
        retry: bool,
    ) -> Result<(SyncOutput, usize)> {
        let mark = (self.phase, self.phases.len());
        let p = self.p;
        let n = p.n();
        let ni = n as i64;
        let npr = self.cfg.preamble_len;
        let samples = &stream.samples;
        let up = reference_upchirp(&p);
        let down = reference_downchirp(&p);

        // Preamble windows used by the estimators: the N_pr - 2 upchirps
        // before the two network identifiers.
        let n_est = npr - 2;
        let first_est = kd - 2 - n_est as i64;
        let grid_pos = |g: i64, k: i64| -> Result<usize> {
            let pos = g + k * ni;
            usize::try_from(pos).map_err(|_| Error::sync("integer", "preamble starts before the stream"))
        };
        let g1i = g1 as i64;
        let pre_starts = (0..n_est as i64)
            .map(|i| grid_pos(g1i, first_est + i))
            .collect::<Result<Vec<_>>>()?;
        let up_bin = sum_spectra(samples, pre_starts, &up.samples, n)?.k_max;
        if symbol_distance(up_bin as u16, 0, n) > 1 {
            return Err(Error::sync("integer", format!("preamble bin {up_bin} after coarse alignment")));
        }
        let down_starts = [grid_pos(g1i, kd)?, grid_pos(g1i, kd + 1)?];
        let down_bin = sum_spectra(samples, down_starts, &down.samples, n)?.k_max;
        let (l_sto_resid, l_cfo) = estimate_integer_offsets(up_bin, down_bin, n)?;
        let g2 = g1i + wrap_signed_int(l_sto_resid, ni);
        self.enter(SyncPhase::IntegerCorrected);

        // Work on a region covering the frame, with margin for the interpolator.
        let region_start = usize::try_from(g2 + (first_est - 1) * ni).unwrap_or(0);
        let payload_end = g2 + (kd + 2 + self.cfg.payload_symbols as i64) * ni + ni / 4;
        // The half-band alias resolved below may still move the grid by N/2.
        if payload_end - ni / 2 > (samples.len() + TAIL_SLACK) as i64 {
            return Err(Error::sync("integer", "stream ends before the payload"));
        }
        let region_end = usize::try_from(payload_end).unwrap_or(0) + n / 2 + n / 4;
        let region = region_start..region_end;
        let local = |k: i64, g: i64| -> Result<usize> {
            let pos = g + k * ni - region_start as i64;
            usize::try_from(pos).map_err(|_| Error::sync("fraction", "window outside the frame region"))
        };

        // Estimation only touches the preamble and the two downchirps.
        let head = region_start..usize::try_from(g2 + (kd + 3) * ni).unwrap_or(0).max(region_start);
        let int_comp = compensate_region(stream, head.clone(), l_cfo as f64, 0.0, n);
        let est_windows: Vec<&[Complex64]> = (0..n_est as i64)
            .map(|i| {
                let s = local(first_est + i, g2)?;
                int_comp
                    .get(s..s + n)
                    .ok_or_else(|| Error::sync("lambda_cfo", "stream exhausted"))
            })
            .collect::<Result<_>>()?;
        let cfo_frac = estimate_lambda_cfo(&est_windows, &p)?;
        let mut tau_cfo = l_cfo as f64 + wrap_signed(cfo_frac.lambda, 1.0);
        let frac_windows: Vec<(u64, &[Complex64])> = (0..n_est as i64)
            .map(|i| {
                let s = local(first_est + i, g2)?;
                Ok((stream.origin_index + (region_start + s) as u64, &samples[region_start + s..region_start + s + n]))
            })
            .collect::<Result<_>>()?;
        let compensated = compensate_lambda_cfo(&frac_windows, tau_cfo, &p);
        let sto_frac = estimate_lambda_sto(&compensated, &p)?;

        // Chirp grid position in stream coordinates.
        let mut grid = g2 as f64 - sto_frac.peak_bins;
        let mut refinement = 0;
        for _ in 0..2 {
            let mut comp = compensate_region(stream, head.clone(), tau_cfo, grid - grid.floor(), n);

            // Both fractional estimators are biased away from zero offset, so
            // re-estimate the small residual on the compensated preamble.
            for _ in 0..RESIDUAL_PASSES {
                let gi = grid.floor() as i64;
                let starts = (0..n_est as i64)
                    .map(|i| local(first_est + i, gi))
                    .collect::<Result<Vec<_>>>()?;
                let windows = starts
                    .iter()
                    .map(|&s| comp.get(s..s + n).ok_or_else(|| Error::sync("fraction", "stream exhausted")))
                    .collect::<Result<Vec<_>>>()?;
                let r_cfo = wrap_signed(estimate_lambda_cfo(&windows, &p)?.peak_bins, 1.0);
                let tagged: Vec<(u64, &[Complex64])> = starts.iter().map(|&s| (s as u64, &comp[s..s + n])).collect();
                let r_sto = estimate_lambda_sto(&compensate_lambda_cfo(&tagged, r_cfo, &p), &p)?.peak_bins;
                tau_cfo += r_cfo;
                grid -= r_sto;
                comp = compensate_region(stream, head.clone(), tau_cfo, grid - grid.floor(), n);
            }

            // The downchirps of a correctly aligned frame dechirp to bin 0; a
            // residual of 2k bins means both offsets are off by k.
            let gi = grid.floor() as i64;
            let d = sum_spectra(&comp, [local(kd, gi)?, local(kd + 1, gi)?], &down.samples, n)?.k_max;
            let shift = (wrap_signed_int(d as i64, ni) as f64 / 2.0).round() as i64;
            tau_cfo += shift as f64;
            grid += shift as f64;
            refinement += shift;

            // Near |CFO| = N/4 the +/-1 slack can land on the other half-band
            // solution (tau + N/2 with time + N/2 or - N/2), which fits the
            // preamble equally well. The time-shifted alias cuts the
            // downchirps in half, so keep whichever candidate concentrates
            // them best, then re-estimate the fractions on the new grid.
            if tau_cfo.abs() <= ni as f64 / 4.0 - 1.0 {
                break;
            }
            let down_peak = |tau: f64, grid: f64| -> Result<f64> {
                let c = compensate_region(stream, head.clone(), tau, grid - grid.floor(), n);
                let gi = grid.floor() as i64;
                Ok(sum_spectra(&c, [local(kd, gi)?, local(kd + 1, gi)?], &down.samples, n)?.peak_power())
            };
            let half = ni as f64 / 2.0;
            let alt = tau_cfo - tau_cfo.signum() * half;
            let mut best = (down_peak(tau_cfo, grid)?, tau_cfo, grid);
            for shift in [half, -half] {
                if let Ok(v) = down_peak(alt, grid + shift) {
                    if v > best.0 {
                        best = (v, alt, grid + shift);
                    }
                }
            }
            if best.1 == tau_cfo {
                break;
            }
            (_, tau_cfo, grid) = best;
        }
        let comp = compensate_region(stream, region.clone(), tau_cfo, grid - grid.floor(), n);
        if tau_cfo.abs() > self.cfg.max_cfo_bins + 0.5 {
            return Err(Error::sync("fraction", format!("CFO {tau_cfo:.2} bins out of range")));
        }
        let gi = grid.floor() as i64;

        // With both offsets removed every chirp of the frame dechirps to bin
        // 0, so the preamble, downchirps and quarter can be matched as a whole.
        // A one-symbol slip changes which windows the template covers at both
        // ends, which the coarse downchirp search above cannot see.
        if retry {
            let best = [kd - 1, kd + 1]
                .into_iter()
                .map(|c| (c, template_energy(stream, grid, tau_cfo, c, npr, &p)))
                .fold((kd, template_energy(stream, grid, tau_cfo, kd, npr, &p)), |a, b| if b.1 > a.1 { b } else { a });
            if best.0 != kd {
                (self.phase, _) = mark;
                self.phases.truncate(mark.1);
                return self.lock_grid(stream, lock, g1, best.0, false);
            }
        }
        self.enter(SyncPhase::FractionCorrected);

        if let Some(expected) = self.cfg.expected_netid {
            for (i, &want) in expected.iter().enumerate() {
                let s = local(kd - 2 + i as i64, gi)?;
                let got = window_power(&comp, s, &up.samples, n)?.k_max as u16;
                if symbol_distance(got, want, n) > 1 {
                    return Err(Error::sync("netid", format!("netid {i}: got {got}, want {want}")));
                }
            }
        }

        let pre_local = (0..n_est as i64)
            .map(|i| local(first_est + i, gi))
            .collect::<Result<Vec<_>>>()?;
        let snr = estimate_snr(&sum_spectra(&comp, pre_local, &up.samples, n)?) - snr_calibration_db(n);

        self.enter(SyncPhase::Demodulating);
        let payload_local = local(kd + 2, gi)? + n / 4;
        if region_start + payload_local + self.cfg.payload_symbols * n > samples.len() + TAIL_SLACK {
            return Err(Error::sync("payload", "stream exhausted"));
        }
        let mut windows = Vec::with_capacity(self.cfg.payload_symbols);
        for i in 0..self.cfg.payload_symbols {
            let s = payload_local + i * n;
            let w = comp
                .get(s..s + n)
                .ok_or_else(|| Error::sync("payload", "stream exhausted"))?;
            windows.push(w.to_vec());
        }

        let frame_start = stream.origin_index as f64 + grid + ((kd - 2 - npr as i64) * ni) as f64;
        let start_floor = frame_start.floor();
        let l_cfo_out = tau_cfo.floor();
        let estimate = SyncEstimate {
            s_pr: lock.s_pr,
            l_sto: (start_floor as i64).rem_euclid(ni),
            l_cfo: l_cfo_out as i64,
            lambda_sto: frame_start - start_floor,
            lambda_cfo: tau_cfo - l_cfo_out,
            snr_est_db: snr,
            frame_start,
        };
        let resume = region_start + payload_local + self.cfg.payload_symbols * n;
        Ok((
            SyncOutput {
                estimate,
                payload_windows: windows,
                diagnostics: SyncDiagnostics {
                    preamble_found: true,
                    integer_ok: true,
                    fraction_ok: true,
                    refinement_shift: refinement,
                    phases: Vec::new(),
                    resets: 0,
                },
            },
            resume,
        ))
    }
}

/// Runs the full procedure on a stream and returns the first frame found.
pub fn synchronize(stream: &IqBuffer, p: &ChirpParams, cfg: &SyncConfig) -> Result<SyncOutput> {
    FrameSynchronizer::new(*p, cfg.clone())?.next_frame(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{modulate_symbol, Symbol};

    #[test]
    fn rctsl_constants_n128() {
        let c = RctslConstants::new(128);
        assert!((c.u - 20.150).abs() < 1e-3, "u={}", c.u);
        assert!((c.v - 49.716).abs() < 5e-3, "v={}", c.v);
    }

    #[test]
    fn rctsl_symmetric_side_bins() {
        let c = RctslConstants::new(256);
        assert_eq!(c.offset(3.0, 10.0, 3.0), 0.0);
        assert_eq!(c.offset(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn rctsl_recovers_padded_tone_offset() {
        // Independent oracle: direct DFT of a tone at a known fractional bin.
        let n = 128usize;
        let c = RctslConstants::new(n);
        for &delta in &[-0.45, -0.3, -0.1, 0.0, 0.05, 0.2, 0.4] {
            let f = (20.0 + delta) / (2 * n) as f64;
            let power = |k: f64| -> f64 {
                let z: Complex64 = (0..n)
                    .map(|t| Complex64::from_polar(1.0, 2.0 * PI * (f - k / (2 * n) as f64) * t as f64))
                    .sum();
                z.norm_sqr()
            };
            let est = c.offset(power(19.0), power(20.0), power(21.0));
            assert!((est - delta).abs() < 0.01, "delta={delta} est={est}");
        }
    }

    #[test]
    fn detector_rule() {
        let mut d = PreambleDetector::new(128, 7);
        let mut found = None;
        for v in [17, 17, 17, 18, 17, 17, 17] {
            found = d.push(Some(v));
        }
        assert_eq!(found, Some(17));

        let mut d = PreambleDetector::new(128, 7);
        for v in [17, 17, 40, 17, 17, 17, 17] {
            assert_eq!(d.push(Some(v)), None);
        }
        // The outlier slides out after three more matches.
        assert_eq!(d.push(Some(17)), None);
        assert_eq!(d.push(Some(17)), None);
        assert_eq!(d.push(Some(16)), Some(17));
    }

    #[test]
    fn detector_window_need_not_center_on_majority() {
        let mut d = PreambleDetector::new(128, 7);
        let mut found = None;
        for v in [62, 60, 62, 62, 61, 61, 60] {
            found = d.push(Some(v));
        }
        assert_eq!(found, Some(62));
        let mut d = PreambleDetector::new(128, 3);
        for v in [60, 62, 63] {
            assert_eq!(d.push(Some(v)), None);
        }
    }

    #[test]
    fn detector_ring_adjacency_and_reset() {
        let mut d = PreambleDetector::new(128, 4);
        let mut found = None;
        for v in [127, 0, 0, 1] {
            found = d.push(Some(v));
        }
        assert_eq!(found, Some(0));
        let mut d = PreambleDetector::new(128, 3);
        d.push(Some(5));
        d.push(Some(5));
        assert_eq!(d.push(None), None);
        assert_eq!(d.push(Some(5)), None);
    }

    #[test]
    fn integer_offsets_examples() {
        assert_eq!(estimate_integer_offsets(0, 0, 128).unwrap(), (0, 0));
        // STO 5, CFO 3: up = 3 - 5, down = 3 + 5.
        assert_eq!(estimate_integer_offsets(126, 8, 128).unwrap(), (5, 3));
        assert_eq!(estimate_integer_offsets(126, 126, 128).unwrap(), (0, -2));
        assert_eq!(estimate_integer_offsets(0, 64, 128).unwrap(), (32, 32));
        assert!(estimate_integer_offsets(128, 0, 128).is_err());
    }

    #[test]
    fn integer_offsets_exhaustive_bins() {
        let n = 128i64;
        for sto in 0..n {
            for cfo in (-n / 4 + 1)..=(n / 4) {
                let up = (cfo - sto).rem_euclid(n) as usize;
                let down = (cfo + sto).rem_euclid(n) as usize;
                assert_eq!(
                    estimate_integer_offsets(up, down, n as usize).unwrap(),
                    (sto, cfo),
                    "sto={sto} cfo={cfo}"
                );
            }
        }
    }

    #[test]
    fn lambda_cfo_zero_offsets() {
        let p = ChirpParams::new(7, 125e3).unwrap();
        let up = reference_upchirp(&p);
        let windows: Vec<&[Complex64]> = (0..6).map(|_| up.samples.as_slice()).collect();
        let est = estimate_lambda_cfo(&windows, &p).unwrap();
        assert!(est.lambda.abs() < 1e-9 || (1.0 - est.lambda) < 1e-9);
        assert!(estimate_lambda_cfo(&windows[..1], &p).is_err());
    }

    #[test]
    fn lambda_sto_zero_offsets() {
        let p = ChirpParams::new(7, 125e3).unwrap();
        let up = reference_upchirp(&p);
        let windows: Vec<(u64, &[Complex64])> = (0..6).map(|i| (i * 128, up.samples.as_slice())).collect();
        let comp = compensate_lambda_cfo(&windows, 0.0, &p);
        let est = estimate_lambda_sto(&comp, &p).unwrap();
        assert!(est.peak_bins.abs() < 1e-9);
    }

    #[test]
    fn snr_sentinels() {
        let p = ChirpParams::new(7, 125e3).unwrap();
        let up = reference_upchirp(&p);
        let x = modulate_symbol(Symbol::new(9, &p).unwrap(), &p);
        let spec = dechirp_power(&x.samples, &up.samples, 128).unwrap();
        assert_eq!(estimate_snr(&spec), f64::INFINITY);
        assert!(estimate_snr(&SpectrumResult::from_power(vec![0.0; 128])).is_nan());
        let flat = SpectrumResult::from_power(vec![1.0; 4]);
        assert!((estimate_snr(&flat) - 10.0 * (1.0f64 / 3.0).log10()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let p = ChirpParams::new(7, 125e3).unwrap();
        let mut cfg = SyncConfig::for_frame(&FrameConfig::default(), &p);
        assert!(FrameSynchronizer::new(p, cfg.clone()).is_ok());
        cfg.detect_threshold = 1;
        assert!(FrameSynchronizer::new(p, cfg).is_err());
    }
}
