//! Impairment channel: complex gain, sampling time offset, carrier
//! frequency offset and AWGN, applied in that fixed order:
//!
//! ```text
//! y[n] = h * c[n] * x[n - tau_sto] + z[n],  c[n] = exp(j 2 pi n df / fs)
//! ```
//!
//! where `n` is the global sample index (`IqBuffer::origin_index` based), so
//! the CFO phase runs on continuously across symbol boundaries.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::{ChirpParams, IqBuffer};
use crate::{Error, Result};

/// Half-length of the windowed-sinc interpolator; it has `2 * HALF_TAPS + 1` taps.
pub const HALF_TAPS: usize = 31;
const WINDOW_HALF_WIDTH: f64 = (HALF_TAPS + 1) as f64;

/// How an SNR value relates to the per-sample noise variance `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseConvention {
    /// `SNR = 1 / sigma^2` for a unit-power signal.
    PerSampleInverseSigma2,
    /// `SNR = 1 / N0` with `sigma^2 = N0 / (2N)`.
    InverseN0,
}

impl NoiseConvention {
    /// Converts an SNR in dB between conventions for symbols of `n` chips.
    pub fn convert_db(self, snr_db: f64, to: NoiseConvention, n: usize) -> f64 {
        let offset = 10.0 * (2.0 * n as f64).log10();
        match (self, to) {
            (a, b) if a == b => snr_db,
            (NoiseConvention::PerSampleInverseSigma2, NoiseConvention::InverseN0) => snr_db - offset,
            _ => snr_db + offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    None,
    Sigma2(f64),
    Snr { db: f64, convention: NoiseConvention },
}

impl NoiseLevel {
    pub fn per_sample_snr_db(db: f64) -> Self {
        NoiseLevel::Snr {
            db,
            convention: NoiseConvention::PerSampleInverseSigma2,
        }
    }

    /// Per-sample complex noise variance for symbols of `n` chips.
    pub fn sigma2(&self, n: usize) -> f64 {
        match *self {
            NoiseLevel::None => 0.0,
            NoiseLevel::Sigma2(s) => s,
            NoiseLevel::Snr { db, convention } => {
                let linear = 10f64.powf(db / 10.0);
                match convention {
                    NoiseConvention::PerSampleInverseSigma2 => 1.0 / linear,
                    NoiseConvention::InverseN0 => 1.0 / (linear * 2.0 * n as f64),
                }
            }
        }
    }
}

/// Offsets and noise injected by [`transmit_through`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpairmentSpec {
    pub h: Complex64,
    /// Delay in chips, `>= 0`.
    pub tau_sto: f64,
    pub delta_fc_hz: f64,
    pub noise: NoiseLevel,
    pub seed: u64,
}

impl Default for ImpairmentSpec {
    fn default() -> Self {
        ImpairmentSpec {
            h: Complex64::new(1.0, 0.0),
            tau_sto: 0.0,
            delta_fc_hz: 0.0,
            noise: NoiseLevel::None,
            seed: 0,
        }
    }
}

impl ImpairmentSpec {
    pub fn l_sto(&self) -> i64 {
        self.tau_sto.floor() as i64
    }

    pub fn lambda_sto(&self) -> f64 {
        self.tau_sto - self.tau_sto.floor()
    }

    /// CFO in DFT bins, `df * N / fs`.
    pub fn tau_cfo(&self, p: &ChirpParams) -> f64 {
        self.delta_fc_hz * p.n() as f64 / p.sample_rate_hz()
    }

    pub fn l_cfo(&self, p: &ChirpParams) -> i64 {
        self.tau_cfo(p).floor() as i64
    }

    pub fn lambda_cfo(&self, p: &ChirpParams) -> f64 {
        let t = self.tau_cfo(p);
        t - t.floor()
    }

    /// Frequency offset that shifts the dechirped tone by `bins`.
    pub fn delta_fc_for_bins(bins: f64, p: &ChirpParams) -> f64 {
        bins * p.sample_rate_hz() / p.n() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_sto.is_finite() && self.tau_sto >= 0.0) {
            return Err(Error::config(format!("tau_sto must be >= 0, got {}", self.tau_sto)));
        }
        if !self.delta_fc_hz.is_finite() || !self.h.re.is_finite() || !self.h.im.is_finite() {
            return Err(Error::config("non-finite channel parameter"));
        }
        let sigma2 = self.noise.sigma2(1);
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::config("invalid noise level"));
        }
        Ok(())
    }
}

/// Seed for trial `index` of an experiment seeded with `master`
/// (SplitMix64 of `master + index * golden_gamma`).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hann-windowed sinc taps for a delay of `lambda` samples.
#[derive(Debug, Clone)]
pub struct FractionalDelay {
    taps: [f64; 2 * HALF_TAPS + 1],
}

impl FractionalDelay {
    pub fn new(lambda: f64) -> Self {
        let mut taps = [0.0; 2 * HALF_TAPS + 1];
        for (i, tap) in taps.iter_mut().enumerate() {
            let t = (i as f64 - HALF_TAPS as f64) - lambda;
            let window = 0.5 * (1.0 + (PI * t / WINDOW_HALF_WIDTH).cos());
            *tap = sinc(t) * window;
        }
        FractionalDelay { taps }
    }

    /// `y[n] = sum_j x[n - j] g(j - lambda)` for `n` in `0..len + 1`,
    /// with `x` zero outside its support.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let len = x.len();
        let h = HALF_TAPS as isize;
        (0..=len as isize)
            .map(|n| {
                let mut acc = Complex64::new(0.0, 0.0);
                let lo = (-h).max(n - len as isize + 1);
                let hi = h.min(n);
                for j in lo..=hi {
                    acc += x[(n - j) as usize] * self.taps[(j + h) as usize];
                }
                acc
            })
            .collect()
    }
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-12 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Prefixes `l` zero samples.
pub fn integer_delay(sig: &IqBuffer, l: usize) -> IqBuffer {
    let mut samples = vec![Complex64::new(0.0, 0.0); l];
    samples.extend_from_slice(&sig.samples);
    IqBuffer::with_origin(samples, sig.origin_index)
}

/// Band-limited fractional delay, `0 <= lambda < 1`. Output is one sample longer.
pub fn fractional_delay(samples: &[Complex64], lambda: f64) -> Vec<Complex64> {
    FractionalDelay::new(lambda).apply(samples)
}

/// Delays by `tau_sto` chips: zero prefix for the integer part, windowed-sinc
/// interpolation for the fraction. Integer delays are exact.
pub fn apply_sto(sig: &IqBuffer, tau_sto: f64) -> Result<IqBuffer> {
    if !(tau_sto.is_finite() && tau_sto >= 0.0) {
        return Err(Error::config(format!("tau_sto must be >= 0, got {tau_sto}")));
    }
    let l = tau_sto.floor() as usize;
    let lambda = tau_sto - tau_sto.floor();
    let shifted = integer_delay(sig, l);
    if lambda == 0.0 {
        return Ok(shifted);
    }
    Ok(IqBuffer::with_origin(
        fractional_delay(&shifted.samples, lambda),
        sig.origin_index,
    ))
}

/// Rotates sample `n` by `exp(j 2 pi n cycles_per_sample)` using global indices.
pub fn rotate(sig: &mut IqBuffer, cycles_per_sample: f64) {
    if cycles_per_sample == 0.0 {
        return;
    }
    let origin = sig.origin_index;
    for (i, z) in sig.samples.iter_mut().enumerate() {
        let cycles = ((origin + i as u64) as f64 * cycles_per_sample).rem_euclid(1.0);
        *z *= Complex64::from_polar(1.0, 2.0 * PI * cycles);
    }
}

pub fn apply_cfo(sig: &IqBuffer, delta_fc_hz: f64, fs: f64) -> IqBuffer {
    let mut out = sig.clone();
    rotate(&mut out, delta_fc_hz / fs);
    out
}

/// Adds circularly-symmetric complex Gaussian noise of variance `sigma2`.
pub fn apply_awgn(sig: &IqBuffer, sigma2: f64, seed: u64) -> IqBuffer {
    let mut out = sig.clone();
    add_awgn(&mut out.samples, sigma2, seed);
    out
}

pub(crate) fn add_awgn(samples: &mut [Complex64], sigma2: f64, seed: u64) {
    if sigma2 == 0.0 {
        return;
    }
    let scale = (sigma2 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for z in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z += Complex64::new(re * scale, im * scale);
    }
}

/// `y = h * cfo(sto(x)) + z`.
pub fn transmit_through(sig: &IqBuffer, spec: &ImpairmentSpec, p: &ChirpParams) -> Result<IqBuffer> {
    spec.validate()?;
    let mut y = apply_sto(sig, spec.tau_sto)?;
    rotate(&mut y, spec.delta_fc_hz / p.sample_rate_hz());
    if spec.h != Complex64::new(1.0, 0.0) {
        for z in y.samples.iter_mut() {
            *z *= spec.h;
        }
    }
    add_awgn(&mut y.samples, spec.noise.sigma2(p.n()), spec.seed);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{demodulate, modulate_symbol, reference_upchirp, Symbol};

    fn sf7() -> ChirpParams {
        ChirpParams::new(7, 125e3).unwrap()
    }

    fn tone(f: f64, len: usize) -> IqBuffer {
        IqBuffer::new((0..len).map(|n| Complex64::from_polar(1.0, 2.0 * PI * f * n as f64)).collect())
    }

    #[test]
    fn sto_zero_is_identity() {
        let x = tone(0.1, 64);
        assert_eq!(apply_sto(&x, 0.0).unwrap(), x);
        assert!(apply_sto(&x, -1.0).is_err());
    }

    #[test]
    fn sto_integer_is_exact_shift() {
        let x = tone(0.23, 50);
        let y = apply_sto(&x, 3.0).unwrap();
        assert_eq!(y.len(), 53);
        assert!(y.samples[..3].iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        assert_eq!(&y.samples[3..], &x.samples[..]);
    }

    #[test]
    fn half_sample_delay_of_tone() {
        // Analytic oracle: a delayed tone is the same tone with phase -2 pi f lambda.
        let len = 400;
        for &f in &[-0.4, -0.3, -0.1, 0.0, 0.05, 0.2, 0.37, 0.4] {
            let x = tone(f, len);
            let y = apply_sto(&x, 0.5).unwrap();
            for n in 100..300 {
                let expected = x.samples[n] * Complex64::from_polar(1.0, -2.0 * PI * f * 0.5);
                assert!((y.samples[n] - expected).norm() < 1e-3, "f={f} n={n}");
            }
        }
    }

    #[test]
    fn sto_decomposes_into_integer_then_fraction() {
        let x = modulate_symbol(Symbol::new(17, &sf7()).unwrap(), &sf7());
        let direct = apply_sto(&x, 4.3).unwrap();
        let composed = apply_sto(&integer_delay(&x, 4), 0.3).unwrap();
        assert_eq!(direct.len(), composed.len());
        for (a, b) in direct.samples.iter().zip(&composed.samples) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn cfo_zero_is_identity_and_preserves_magnitude() {
        let x = tone(0.1, 100);
        assert_eq!(apply_cfo(&x, 0.0, 125e3), x);
        let y = apply_cfo(&x, 1234.5, 125e3);
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_bin_cfo_moves_upchirp_up_one_bin() {
        let p = sf7();
        let up = reference_upchirp(&p);
        let df = ImpairmentSpec::delta_fc_for_bins(1.0, &p);
        let y = apply_cfo(&up, df, p.sample_rate_hz());
        assert_eq!(demodulate(&y.samples, &up.samples, &p).unwrap().value(), 1);
        let y = apply_cfo(&up, -df, p.sample_rate_hz());
        assert_eq!(demodulate(&y.samples, &up.samples, &p).unwrap().value(), 127);
    }

    #[test]
    fn cfo_phase_continuous_across_symbols() {
        let p = sf7();
        let n = p.n();
        let ones = IqBuffer::new(vec![Complex64::new(1.0, 0.0); 2 * n]);
        let whole = apply_cfo(&ones, 777.0, p.sample_rate_hz());
        let second = apply_cfo(
            &IqBuffer::with_origin(vec![Complex64::new(1.0, 0.0); n], n as u64),
            777.0,
            p.sample_rate_hz(),
        );
        for i in 0..n {
            assert!((whole.samples[n + i] - second.samples[i]).norm() < 1e-12);
        }
        let step = whole.samples[n] / whole.samples[n - 1];
        let inner = whole.samples[1] / whole.samples[0];
        assert!((step - inner).norm() < 1e-12);
    }

    #[test]
    fn awgn_zero_and_determinism() {
        let x = tone(0.1, 256);
        assert_eq!(apply_awgn(&x, 0.0, 5), x);
        assert_eq!(apply_awgn(&x, 0.5, 5), apply_awgn(&x, 0.5, 5));
        assert_ne!(apply_awgn(&x, 0.5, 5), apply_awgn(&x, 0.5, 6));
    }

    #[test]
    fn awgn_variance() {
        let zeros = IqBuffer::new(vec![Complex64::new(0.0, 0.0); 1_000_000]);
        let sigma2 = 0.37;
        let z = apply_awgn(&zeros, sigma2, 99);
        let var = z.energy() / z.len() as f64;
        assert!((var - sigma2).abs() < 0.01 * sigma2, "var={var}");
        let mean: Complex64 = z.samples.iter().sum::<Complex64>() / z.len() as f64;
        assert!(mean.norm() < 3e-3);
    }

    #[test]
    fn seeds_are_independent() {
        let zeros = IqBuffer::new(vec![Complex64::new(0.0, 0.0); 1_000_000]);
        let a = apply_awgn(&zeros, 1.0, derive_seed(1, 0));
        let b = apply_awgn(&zeros, 1.0, derive_seed(1, 1));
        let rho: Complex64 = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y.conj()).sum();
        let rho = rho.norm() / (a.energy() * b.energy()).sqrt();
        assert!(rho < 0.01, "rho={rho}");
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(derive_seed(0, 0), 0);
    }

    #[test]
    fn noise_conventions() {
        let n = 128;
        let ps = NoiseLevel::per_sample_snr_db(10.0);
        assert!((ps.sigma2(n) - 0.1).abs() < 1e-12);
        let n0_db = NoiseConvention::PerSampleInverseSigma2.convert_db(10.0, NoiseConvention::InverseN0, n);
        let n0 = NoiseLevel::Snr {
            db: n0_db,
            convention: NoiseConvention::InverseN0,
        };
        assert!((n0.sigma2(n) - 0.1).abs() < 1e-12);
        let back = NoiseConvention::InverseN0.convert_db(n0_db, NoiseConvention::PerSampleInverseSigma2, n);
        assert!((back - 10.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition() {
        let p = sf7();
        let spec = ImpairmentSpec {
            tau_sto: 12.75,
            delta_fc_hz: ImpairmentSpec::delta_fc_for_bins(-2.25, &p),
            ..ImpairmentSpec::default()
        };
        assert_eq!(spec.l_sto(), 12);
        assert!((spec.lambda_sto() - 0.75).abs() < 1e-12);
        assert!((spec.tau_cfo(&p) + 2.25).abs() < 1e-12);
        assert_eq!(spec.l_cfo(&p), -3);
        assert!((spec.lambda_cfo(&p) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn identity_channel() {
        let p = sf7();
        let x = modulate_symbol(Symbol::new(3, &p).unwrap(), &p);
        assert_eq!(transmit_through(&x, &ImpairmentSpec::default(), &p).unwrap(), x);
    }

    #[test]
    fn pure_phase_gain_keeps_decisions() {
        let p = sf7();
        let up = reference_upchirp(&p);
        for s in 0..p.n() as u16 {
            let x = modulate_symbol(Symbol::new(s, &p).unwrap(), &p);
            let spec = ImpairmentSpec {
                h: Complex64::from_polar(1.0, 1.234),
                ..ImpairmentSpec::default()
            };
            let y = transmit_through(&x, &spec, &p).unwrap();
            assert_eq!(demodulate(&y.samples, &up.samples, &p).unwrap().value(), s);
            for z in &y.samples {
                assert!((z.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
