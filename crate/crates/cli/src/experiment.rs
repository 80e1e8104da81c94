//! Monte Carlo BER/SER sweeps and synchronizer benchmarks.
//!
//! Trial `t` at sweep point `i` draws everything (payload, offsets, noise)
//! from `derive_seed(derive_seed(seed, i), t)`, so results do not depend on
//! how trials are spread over threads. Per-trial outcomes are collected in
//! trial order and reduced sequentially.

use std::f64::consts::PI;

use lora_phy::channel::{derive_seed, transmit_through};
use lora_phy::frame::{build_frame, decode_payload_symbols, encode_payload};
use lora_phy::signal::{demodulate, reference_upchirp};
use lora_phy::sync::{align_with_known_offsets, synchronize};
use lora_phy::{Complex64, ImpairmentSpec, IqBuffer, NoiseLevel, Symbol};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Experiment, Range};
use crate::error::Result;
use crate::stats::Wilson;

/// Schema tags written as the first line of each CSV.
pub const BER_SCHEMA: &str = "# lora-phy ber v1";
pub const SYNC_SCHEMA: &str = "# lora-phy sync-bench v1";

/// Random quantities of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDraw {
    pub payload: Vec<u8>,
    pub tau_sto: f64,
    pub cfo_bins: f64,
    pub phase: f64,
    pub noise_seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r.max > r.min {
        rng.random_range(r.min..r.max)
    } else {
        r.min
    }
}

type Windows = Vec<Vec<Complex64>>;

impl Experiment {
    pub fn trial_seed(&self, point: usize, trial: usize) -> u64 {
        derive_seed(derive_seed(self.config.seed, point as u64), trial as u64)
    }

    pub fn draw(&self, point: usize, trial: usize) -> TrialDraw {
        let mut rng = ChaCha8Rng::seed_from_u64(self.trial_seed(point, trial));
        let mut payload = vec![0u8; self.frame.payload_len];
        rng.fill_bytes(&mut payload);
        let c = &self.config.channel;
        let tau_sto = uniform(&mut rng, c.sto);
        let cfo_bins = uniform(&mut rng, c.cfo_bins);
        let phase = if c.random_phase { rng.random_range(0.0..2.0 * PI) } else { 0.0 };
        TrialDraw {
            payload,
            tau_sto,
            cfo_bins,
            phase,
            noise_seed: rng.next_u64(),
        }
    }

    /// Frame plus guard symbols passed through the channel.
    pub fn received_stream(&self, draw: &TrialDraw, snr_db: f64) -> Result<IqBuffer> {
        let p = &self.params;
        let mut frame = build_frame(&self.frame, &draw.payload, p)?;
        let guard = self.config.channel.guard_symbols * p.n();
        frame.samples.resize(frame.len() + guard, Complex64::new(0.0, 0.0));
        let gain = 10f64.powf(self.config.channel.gain_db / 20.0);
        let spec = ImpairmentSpec {
            h: Complex64::from_polar(gain, draw.phase),
            tau_sto: draw.tau_sto,
            delta_fc_hz: ImpairmentSpec::delta_fc_for_bins(draw.cfo_bins, p),
            noise: self.noise_level(snr_db),
            seed: draw.noise_seed,
        };
        Ok(transmit_through(&frame, &spec, p)?)
    }

    pub fn noise_level(&self, snr_db: f64) -> NoiseLevel {
        if snr_db == f64::INFINITY {
            NoiseLevel::None
        } else {
            NoiseLevel::Snr {
                db: snr_db,
                convention: self.convention,
            }
        }
    }

    /// Payload windows, from the synchronizer or from the known offsets,
    /// with the (STO, CFO) estimate when one was made.
    fn payload_windows(&self, stream: &IqBuffer, draw: &TrialDraw) -> Option<(Windows, Option<(f64, f64)>)> {
        let p = &self.params;
        if self.config.genie_sync {
            let w = align_with_known_offsets(stream, draw.tau_sto, draw.cfo_bins, &self.sync, p).ok()?;
            Some((w, None))
        } else {
            let out = synchronize(stream, p, &self.sync).ok()?;
            let est = out.estimate;
            let errors = (
                est.frame_start - (stream.origin_index as f64 + draw.tau_sto),
                est.tau_cfo() - draw.cfo_bins,
            );
            Some((out.payload_windows, Some(errors)))
        }
    }

    pub fn run_trial(&self, point: usize, trial: usize) -> Result<TrialOutcome> {
        let p = &self.params;
        let snr = self.config.channel.snr_db[point];
        let draw = self.draw(point, trial);
        let tx_symbols = encode_payload(&draw.payload, &self.frame, p)?;
        let stream = self.received_stream(&draw, snr)?;
        let Some((windows, errors)) = self.payload_windows(&stream, &draw) else {
            return Ok(TrialOutcome::sync_failure());
        };
        let up = reference_upchirp(p);
        let rx_symbols: Vec<Symbol> = windows
            .iter()
            .map(|w| demodulate(w, &up.samples, p))
            .collect::<lora_phy::Result<_>>()?;
        let symbol_errors = rx_symbols.iter().zip(&tx_symbols).filter(|(a, b)| a != b).count() as u64;
        let decoded = decode_payload_symbols(&rx_symbols, &self.frame, p)?;
        let bit_errors: u64 = decoded
            .payload
            .iter()
            .zip(&draw.payload)
            .map(|(a, b)| u64::from((a ^ b).count_ones()))
            .sum();
        Ok(TrialOutcome {
            synced: true,
            bits: 8 * draw.payload.len() as u64,
            bit_errors,
            symbols: tx_symbols.len() as u64,
            symbol_errors,
            frame_error: bit_errors > 0 || !decoded.crc_ok,
            offset_errors: errors,
        })
    }

    /// Synchronizes one trial without decoding; `None` on sync failure.
    pub fn sync_trial(&self, point: usize, trial: usize) -> Result<Option<SyncErrors>> {
        let draw = self.draw(point, trial);
        let stream = self.received_stream(&draw, self.config.channel.snr_db[point])?;
        let Ok(out) = synchronize(&stream, &self.params, &self.sync) else {
            return Ok(None);
        };
        let est = out.estimate;
        Ok(Some(SyncErrors {
            sto: est.frame_start - (stream.origin_index as f64 + draw.tau_sto),
            cfo: est.tau_cfo() - draw.cfo_bins,
        }))
    }

    fn over_trials<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let run = || (0..self.config.trials).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
        match self.config.threads {
            Some(t) => rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .expect("thread pool")
                .install(run),
            None => run(),
        }
    }

    pub fn run_ber(&self) -> Result<Vec<ResultRow>> {
        self.require_sweep()?;
        (0..self.config.channel.snr_db.len())
            .map(|point| {
                let outcomes = self.over_trials(|t| self.run_trial(point, t))?;
                Ok(self.ber_row(point, &outcomes))
            })
            .collect()
    }

    pub fn run_sync_bench(&self) -> Result<Vec<SyncBenchRow>> {
        self.require_sweep()?;
        (0..self.config.channel.snr_db.len())
            .map(|point| {
                let outcomes = self.over_trials(|t| self.sync_trial(point, t))?;
                Ok(self.sync_row(point, &outcomes))
            })
            .collect()
    }

    fn ber_row(&self, point: usize, outcomes: &[TrialOutcome]) -> ResultRow {
        let (snr_db, snr_n0_db) = self.snr_axes(self.config.channel.snr_db[point]);
        let frames = outcomes.len() as u64;
        let sum = |f: fn(&TrialOutcome) -> u64| outcomes.iter().map(f).sum::<u64>();
        let bits = sum(|o| o.bits);
        let bit_errors = sum(|o| o.bit_errors);
        let symbols = sum(|o| o.symbols);
        let symbol_errors = sum(|o| o.symbol_errors);
        let frame_errors = sum(|o| u64::from(o.frame_error));
        let sync_failures = sum(|o| u64::from(!o.synced));
        let errs: Vec<(f64, f64)> = outcomes.iter().filter_map(|o| o.offset_errors).collect();
        let mean_abs = |f: fn(&(f64, f64)) -> f64| {
            if errs.is_empty() {
                f64::NAN
            } else {
                errs.iter().map(|e| f(e).abs()).sum::<f64>() / errs.len() as f64
            }
        };
        ResultRow {
            snr_db,
            snr_n0_db,
            mode: self.mode(),
            frames,
            bits,
            bit_errors,
            ber: ratio(bit_errors, bits),
            ber_ci95: Wilson::new(bit_errors, bits).half_width(),
            symbols,
            symbol_errors,
            ser: ratio(symbol_errors, symbols),
            ser_ci95: Wilson::new(symbol_errors, symbols).half_width(),
            frame_errors,
            fer: ratio(frame_errors, frames),
            fer_ci95: Wilson::new(frame_errors, frames).half_width(),
            sync_failures,
            sync_failure_rate: ratio(sync_failures, frames),
            mean_abs_err_sto: mean_abs(|e| e.0),
            mean_abs_err_cfo: mean_abs(|e| e.1),
        }
    }

    fn sync_row(&self, point: usize, outcomes: &[Option<SyncErrors>]) -> SyncBenchRow {
        let (snr_db, snr_n0_db) = self.snr_axes(self.config.channel.snr_db[point]);
        let trials = outcomes.len() as u64;
        let ok: Vec<&SyncErrors> = outcomes.iter().flatten().collect();
        let failures = trials - ok.len() as u64;
        let moments = |f: fn(&SyncErrors) -> f64| {
            if ok.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let n = ok.len() as f64;
            let bias = ok.iter().map(|e| f(e)).sum::<f64>() / n;
            let rmse = (ok.iter().map(|e| f(e).powi(2)).sum::<f64>() / n).sqrt();
            (bias, rmse)
        };
        let (bias_sto, rmse_sto) = moments(|e| e.sto);
        let (bias_cfo, rmse_cfo) = moments(|e| e.cfo);
        let within = ok.iter().filter(|e| e.sto.abs() <= 0.02 && e.cfo.abs() <= 0.02).count() as u64;
        let integer_ok = ok.iter().filter(|e| e.integer_ok()).count() as u64;
        SyncBenchRow {
            snr_db,
            snr_n0_db,
            trials,
            sync_failures: failures,
            sync_failure_rate: ratio(failures, trials),
            sync_failure_ci95: Wilson::new(failures, trials).half_width(),
            bias_sto,
            rmse_sto,
            bias_cfo,
            rmse_cfo,
            integer_ok_rate: ratio(integer_ok, ok.len() as u64),
            within_002_rate: ratio(within, ok.len() as u64),
        }
    }

    fn mode(&self) -> &'static str {
        if self.config.genie_sync {
            "genie"
        } else {
            "sync"
        }
    }
}

/// `k / n`, or NaN when nothing was counted.
fn ratio(k: u64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        k as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub synced: bool,
    /// Payload bits of a synchronized frame; zero when sync failed.
    pub bits: u64,
    pub bit_errors: u64,
    pub symbols: u64,
    pub symbol_errors: u64,
    /// Sync failure, any payload bit error, or a CRC mismatch.
    pub frame_error: bool,
    /// `(start, CFO)` estimate minus truth, full-sync mode only.
    pub offset_errors: Option<(f64, f64)>,
}

impl TrialOutcome {
    fn sync_failure() -> Self {
        TrialOutcome {
            synced: false,
            bits: 0,
            bit_errors: 0,
            symbols: 0,
            symbol_errors: 0,
            frame_error: true,
            offset_errors: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncErrors {
    /// Frame start error in chips.
    pub sto: f64,
    /// CFO error in bins.
    pub cfo: f64,
}

impl SyncErrors {
    /// Both errors below half a chip or bin: the integer stage was right.
    pub fn integer_ok(&self) -> bool {
        self.sto.abs() < 0.5 && self.cfo.abs() < 0.5
    }
}

/// One BER sweep point. Bit and symbol rates are over frames that
/// synchronized; failed frames count towards `fer` and `sync_failure_rate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub snr_n0_db: f64,
    pub mode: &'static str,
    pub frames: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub ber_ci95: f64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub ser: f64,
    pub ser_ci95: f64,
    pub frame_errors: u64,
    pub fer: f64,
    pub fer_ci95: f64,
    pub sync_failures: u64,
    pub sync_failure_rate: f64,
    pub mean_abs_err_sto: f64,
    pub mean_abs_err_cfo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncBenchRow {
    pub snr_db: f64,
    pub snr_n0_db: f64,
    pub trials: u64,
    pub sync_failures: u64,
    pub sync_failure_rate: f64,
    pub sync_failure_ci95: f64,
    pub bias_sto: f64,
    pub rmse_sto: f64,
    pub bias_cfo: f64,
    pub rmse_cfo: f64,
    pub integer_ok_rate: f64,
    pub within_002_rate: f64,
}

/// CSV text: the schema line, a header and one line per row.
pub fn to_csv<R: Serialize>(schema: &str, rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv");
    format!("{schema}\n{body}")
}
