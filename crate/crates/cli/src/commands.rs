//! Subcommand bodies, separated from argument parsing so tests can call them.

use std::path::{Path, PathBuf};

use lora_phy::channel::transmit_through;
use lora_phy::frame::{build_frame, decode_payload_symbols};
use lora_phy::signal::{demodulate, reference_upchirp};
use lora_phy::sync::{align_with_known_offsets, synchronize};
use lora_phy::{Complex64, ImpairmentSpec, IqBuffer, NoiseLevel, Symbol, SyncOutput};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiment::{to_csv, BER_SCHEMA, SYNC_SCHEMA};
use crate::iq::{read_iq_file, write_iq_file};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub genie: bool,
}

pub fn load_experiment(config: &Path, o: &Overrides) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if o.threads.is_some() {
        cfg.threads = o.threads;
    }
    cfg.genie_sync |= o.genie;
    cfg.resolve()
}

/// Payload for `tx`: the configured bytes, else random bytes from the seed.
pub fn tx_payload(exp: &Experiment) -> Result<Vec<u8>> {
    let payload = match &exp.config.tx.payload_hex {
        Some(h) => hex::decode(h.trim()).map_err(|e| CliError::config(format!("payload_hex: {e}")))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(exp.config.seed);
            let mut bytes = vec![0u8; exp.frame.payload_len];
            rng.fill_bytes(&mut bytes);
            bytes
        }
    };
    if payload.len() != exp.frame.payload_len {
        return Err(CliError::config(format!(
            "payload has {} bytes but frame.payload_len is {}",
            payload.len(),
            exp.frame.payload_len
        )));
    }
    Ok(payload)
}

/// Baseband samples for `tx`, passed through the `[tx]` impairments.
pub fn tx_samples(exp: &Experiment) -> Result<IqBuffer> {
    let p = &exp.params;
    let t = &exp.config.tx;
    let mut frame = build_frame(&exp.frame, &tx_payload(exp)?, p)?;
    frame
        .samples
        .resize(frame.len() + t.guard_symbols * p.n(), Complex64::new(0.0, 0.0));
    let spec = ImpairmentSpec {
        h: Complex64::new(1.0, 0.0),
        tau_sto: t.tau_sto,
        delta_fc_hz: ImpairmentSpec::delta_fc_for_bins(t.cfo_bins, p),
        noise: t.snr_db.map_or(NoiseLevel::None, |db| exp.noise_level(db)),
        seed: lora_phy::channel::derive_seed(exp.config.seed, u64::MAX),
    };
    Ok(transmit_through(&frame, &spec, p)?)
}

pub fn cmd_tx(exp: &Experiment, out: &Path) -> Result<usize> {
    let samples = tx_samples(exp)?;
    write_iq_file(out, &samples, &exp.params)?;
    Ok(samples.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RxReport {
    /// `ok`, `crc_fail`, `sync_fail` or `decode_fail`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_hex: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crc_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrected_codewords: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncorrectable_codewords: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub s_pr: u16,
    pub l_sto: i64,
    pub l_cfo: i64,
    pub lambda_sto: f64,
    pub lambda_cfo: f64,
    pub tau_sto: f64,
    pub tau_cfo: f64,
    pub snr_est_db: f64,
    pub frame_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub preamble_found: bool,
    pub integer_ok: bool,
    pub fraction_ok: bool,
    pub refinement_shift: i64,
    pub resets: usize,
    pub phases: Vec<String>,
}

impl RxReport {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    fn failure(status: &str, error: String) -> Self {
        RxReport {
            status: status.into(),
            error: Some(error),
            payload_hex: None,
            crc_ok: None,
            corrected_codewords: None,
            uncorrectable_codewords: None,
            estimate: None,
            diagnostics: None,
        }
    }
}

fn records(out: &SyncOutput) -> (EstimateRecord, DiagnosticsRecord) {
    let e = out.estimate;
    let d = &out.diagnostics;
    (
        EstimateRecord {
            s_pr: e.s_pr,
            l_sto: e.l_sto,
            l_cfo: e.l_cfo,
            lambda_sto: e.lambda_sto,
            lambda_cfo: e.lambda_cfo,
            tau_sto: e.tau_sto(),
            tau_cfo: e.tau_cfo(),
            snr_est_db: e.snr_est_db,
            frame_start: e.frame_start,
        },
        DiagnosticsRecord {
            preamble_found: d.preamble_found,
            integer_ok: d.integer_ok,
            fraction_ok: d.fraction_ok,
            refinement_shift: d.refinement_shift,
            resets: d.resets,
            phases: d.phases.iter().map(|ph| format!("{ph:?}")).collect(),
        },
    )
}

/// Reads a capture, synchronizes (or uses the `[tx]` offsets with genie
/// sync) and decodes the first frame.
pub fn cmd_rx(exp: &Experiment, input: &Path) -> Result<RxReport> {
    let (stream, sidecar) = read_iq_file(input)?;
    sidecar.check_matches(&exp.params)?;
    Ok(receive(exp, &stream))
}

pub fn receive(exp: &Experiment, stream: &IqBuffer) -> RxReport {
    let p = &exp.params;
    let (windows, recs) = if exp.config.genie_sync {
        let t = &exp.config.tx;
        match align_with_known_offsets(stream, t.tau_sto, t.cfo_bins, &exp.sync, p) {
            Ok(w) => (w, None),
            Err(e) => return RxReport::failure("sync_fail", e.to_string()),
        }
    } else {
        match synchronize(stream, p, &exp.sync) {
            Ok(out) => {
                let recs = records(&out);
                (out.payload_windows, Some(recs))
            }
            Err(e) => return RxReport::failure("sync_fail", e.to_string()),
        }
    };
    let up = reference_upchirp(p);
    let decoded = windows
        .iter()
        .map(|w| demodulate(w, &up.samples, p))
        .collect::<lora_phy::Result<Vec<Symbol>>>()
        .and_then(|symbols| decode_payload_symbols(&symbols, &exp.frame, p));
    let (estimate, diagnostics) = recs.unzip();
    match decoded {
        Ok(d) => RxReport {
            status: if d.crc_ok { "ok" } else { "crc_fail" }.into(),
            error: None,
            payload_hex: Some(hex::encode(&d.payload)),
            crc_ok: Some(d.crc_ok),
            corrected_codewords: Some(d.corrected_codewords),
            uncorrectable_codewords: Some(d.uncorrectable_codewords),
            estimate,
            diagnostics,
        },
        Err(e) => RxReport {
            estimate,
            diagnostics,
            ..RxReport::failure("decode_fail", e.to_string())
        },
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// BER sweep; CSV goes to `out` or standard output.
pub fn cmd_ber(exp: &Experiment, out: Option<&Path>) -> Result<String> {
    let csv = to_csv(BER_SCHEMA, &exp.run_ber()?);
    emit(&csv, out)?;
    Ok(csv)
}

pub fn cmd_sync_bench(exp: &Experiment, out: Option<&Path>) -> Result<String> {
    let csv = to_csv(SYNC_SCHEMA, &exp.run_sync_bench()?);
    emit(&csv, out)?;
    Ok(csv)
}

/// Output path for `tx`, which has no stdout form.
pub fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| CliError::config("tx needs --out"))
}
