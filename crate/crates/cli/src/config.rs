//! Experiment configuration file (TOML).
//!
//! ```toml
//! seed = 1
//! trials = 1000
//! genie_sync = false
//!
//! [modem]
//! sf = 7
//! bandwidth_hz = 125000.0
//!
//! [frame]
//! coding = "4/8"
//! payload_len = 64
//!
//! [channel]
//! snr_db = [-12.0, -10.0, -8.0]
//! sto = { min = 0.0, max = 128.0 }
//! cfo_bins = { min = -16.0, max = 16.0 }
//! ```

use std::path::{Path, PathBuf};

use lora_phy::frame::CrcParams;
use lora_phy::{ChirpParams, Coding, CodingRate, FrameConfig, NetIdMode, NoiseConvention, SyncConfig, WhiteningSequence};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Frames per SNR point.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Bypass the synchronizer and cut windows at the injected offsets.
    #[serde(default)]
    pub genie_sync: bool,
    /// Worker threads; the rayon default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub modem: ModemSection,
    #[serde(default)]
    pub frame: FrameSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub sync: SyncSection,
    #[serde(default)]
    pub tx: TxSection,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModemSection {
    pub sf: u8,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    /// Defaults to the bandwidth; only critical sampling is supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
}

fn default_bandwidth() -> f64 {
    125e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    pub preamble_len: usize,
    pub sync_word: u16,
    /// `"repeated"` or `"paired"`.
    pub netid_mode: String,
    /// `"uncoded"`, `"4/5"`, `"4/6"`, `"4/7"` or `"4/8"`.
    pub coding: String,
    pub has_crc: bool,
    pub payload_len: usize,
    pub crc: CrcSection,
    /// File holding the whitening bits as one line of `0`/`1`, relative to
    /// the config file. The shipped table is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub whitening_file: Option<PathBuf>,
}

impl Default for FrameSection {
    fn default() -> Self {
        let d = FrameConfig::default();
        FrameSection {
            preamble_len: d.preamble_len,
            sync_word: d.sync_word,
            netid_mode: "repeated".into(),
            coding: "4/8".into(),
            has_crc: d.has_crc,
            payload_len: 16,
            crc: CrcSection::default(),
            whitening_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrcSection {
    pub poly: u16,
    pub init: u16,
    pub reflect_in: bool,
    pub reflect_out: bool,
    pub xor_out: u16,
}

impl Default for CrcSection {
    fn default() -> Self {
        let d = CrcParams::default();
        CrcSection {
            poly: d.poly,
            init: d.init,
            reflect_in: d.reflect_in,
            reflect_out: d.reflect_out,
            xor_out: d.xor_out,
        }
    }
}

/// Uniform distribution over `[min, max)`; a point mass when equal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn fixed(v: f64) -> Self {
        Range { min: v, max: v }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// SNR sweep; `inf` gives a noiseless point.
    pub snr_db: Vec<f64>,
    /// `"per-sample"` (SNR = 1/sigma^2) or `"n0"` (SNR = 1/N0).
    pub snr_convention: String,
    /// Delay in chips.
    pub sto: Range,
    /// Carrier offset in DFT bins.
    pub cfo_bins: Range,
    pub gain_db: f64,
    /// Draw the carrier phase uniformly per frame.
    pub random_phase: bool,
    /// Zero symbols appended after each frame before the channel.
    pub guard_symbols: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            snr_db: Vec::new(),
            snr_convention: "per-sample".into(),
            sto: Range::default(),
            cfo_bins: Range::default(),
            gain_db: 0.0,
            random_phase: false,
            guard_symbols: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncSection {
    /// Matching preamble decisions needed; `preamble_len - 1` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detect_threshold: Option<usize>,
    pub validate_netid: bool,
    /// Largest accepted |CFO| in bins; `N / 4` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_cfo_bins: Option<f64>,
}

/// Single-shot settings for `tx` (and `rx --genie`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TxSection {
    /// Payload bytes; random bytes from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_hex: Option<String>,
    pub tau_sto: f64,
    pub cfo_bins: f64,
    /// Noiseless when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Zero symbols appended after the frame.
    pub guard_symbols: usize,
}

/// A validated configuration with library types filled in.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub params: ChirpParams,
    pub frame: FrameConfig,
    pub sync: SyncConfig,
    pub convention: NoiseConvention,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let Some(w) = cfg.frame.whitening_file.as_mut() {
            if w.is_relative() {
                *w = path.parent().unwrap_or(Path::new(".")).join(&*w);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Experiment> {
        if self.trials == 0 {
            return Err(CliError::config("trials must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads must be at least 1"));
        }
        let params = match self.modem.sample_rate_hz {
            Some(fs) => ChirpParams::with_sample_rate(self.modem.sf, self.modem.bandwidth_hz, fs)?,
            None => ChirpParams::new(self.modem.sf, self.modem.bandwidth_hz)?,
        };
        let n = params.n();
        let f = &self.frame;
        let frame = FrameConfig {
            preamble_len: f.preamble_len,
            sync_word: f.sync_word,
            netid_mode: parse_netid_mode(&f.netid_mode)?,
            coding: parse_coding(&f.coding)?,
            has_crc: f.has_crc,
            crc: CrcParams {
                poly: f.crc.poly,
                init: f.crc.init,
                reflect_in: f.crc.reflect_in,
                reflect_out: f.crc.reflect_out,
                xor_out: f.crc.xor_out,
            },
            payload_len: f.payload_len,
            whitening: match &f.whitening_file {
                Some(path) => WhiteningSequence::load(path)?,
                None => WhiteningSequence::default(),
            },
        };
        frame.validate(&params)?;

        let mut sync = SyncConfig::for_frame(&frame, &params);
        if let Some(t) = self.sync.detect_threshold {
            sync.detect_threshold = t;
        }
        if let Some(m) = self.sync.max_cfo_bins {
            if !(m.is_finite() && m > 0.0) {
                return Err(CliError::config("max_cfo_bins must be positive"));
            }
            sync.max_cfo_bins = m;
        }
        if self.sync.validate_netid {
            sync.expected_netid = Some(frame.netid_symbols(&params));
        }
        if sync.detect_threshold < 2 || sync.detect_threshold > frame.preamble_len {
            return Err(CliError::config(format!(
                "detect_threshold {} must be in 2..={}",
                sync.detect_threshold, frame.preamble_len
            )));
        }

        let c = &self.channel;
        let convention = match c.snr_convention.as_str() {
            "per-sample" => NoiseConvention::PerSampleInverseSigma2,
            "n0" => NoiseConvention::InverseN0,
            other => return Err(CliError::config(format!("unknown snr_convention {other:?}"))),
        };
        if c.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(CliError::config("snr_db entries must be numbers or inf"));
        }
        check_range("sto", c.sto)?;
        check_range("cfo_bins", c.cfo_bins)?;
        if c.sto.min < 0.0 {
            return Err(CliError::config("sto must be non-negative"));
        }
        let cfo_limit = c.cfo_bins.min.abs().max(c.cfo_bins.max.abs());
        if cfo_limit > n as f64 / 2.0 {
            return Err(CliError::config(format!("cfo_bins beyond +/-{} bins", n / 2)));
        }
        if !c.gain_db.is_finite() {
            return Err(CliError::config("gain_db must be finite"));
        }
        let t = &self.tx;
        if !(t.tau_sto.is_finite() && t.tau_sto >= 0.0 && t.cfo_bins.is_finite()) {
            return Err(CliError::config("tx offsets must be finite, tau_sto >= 0"));
        }
        Ok(Experiment {
            config: self.clone(),
            params,
            frame,
            sync,
            convention,
        })
    }
}

impl Experiment {
    /// Sweep experiments need at least one SNR point.
    pub fn require_sweep(&self) -> Result<()> {
        if self.config.channel.snr_db.is_empty() {
            return Err(CliError::config("channel.snr_db sweep list is empty"));
        }
        Ok(())
    }

    /// `(per-sample, 1/N0)` SNR in dB for a configured sweep value.
    pub fn snr_axes(&self, snr_db: f64) -> (f64, f64) {
        let n = self.params.n();
        let per_sample = self
            .convention
            .convert_db(snr_db, NoiseConvention::PerSampleInverseSigma2, n);
        let n0 = self.convention.convert_db(snr_db, NoiseConvention::InverseN0, n);
        (per_sample, n0)
    }
}

fn check_range(name: &str, r: Range) -> Result<()> {
    if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
        return Err(CliError::config(format!("{name} range needs finite min <= max")));
    }
    Ok(())
}

pub fn parse_coding(s: &str) -> Result<Coding> {
    Ok(match s {
        "uncoded" => Coding::Uncoded,
        "4/5" => Coding::Hamming(CodingRate::Cr45),
        "4/6" => Coding::Hamming(CodingRate::Cr46),
        "4/7" => Coding::Hamming(CodingRate::Cr47),
        "4/8" => Coding::Hamming(CodingRate::Cr48),
        other => return Err(CliError::config(format!("unknown coding {other:?}"))),
    })
}

fn parse_netid_mode(s: &str) -> Result<NetIdMode> {
    match s {
        "repeated" => Ok(NetIdMode::Repeated),
        "paired" => Ok(NetIdMode::Paired),
        other => Err(CliError::config(format!("unknown netid_mode {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[modem]\nsf = 7\n";

    #[test]
    fn defaults_resolve() {
        let exp = ExperimentConfig::from_toml(MINIMAL).unwrap().resolve().unwrap();
        assert_eq!(exp.params.n(), 128);
        assert_eq!(exp.frame.payload_len, 16);
        assert_eq!(exp.sync.detect_threshold, 7);
        assert!(exp.require_sweep().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.channel.snr_db = vec![-10.0, f64::INFINITY];
        cfg.channel.cfo_bins = Range { min: -4.0, max: 4.0 };
        cfg.sync.detect_threshold = Some(5);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_fields() {
        for text in [
            "[modem]\nsf = 7\n[frame]\ncoding = \"4/9\"\n",
            "[modem]\nsf = 13\n",
            "trials = 0\n[modem]\nsf = 7\n",
            "[modem]\nsf = 7\n[channel]\nsto = { min = 2.0, max = 1.0 }\n",
            "[modem]\nsf = 7\n[sync]\ndetect_threshold = 9\n",
            "[modem]\nsf = 7\n[frame]\npayload_len = 300\n",
        ] {
            let r = ExperimentConfig::from_toml(text).and_then(|c| c.resolve());
            assert!(matches!(r, Err(CliError::Config(_))), "{text}");
        }
        assert!(ExperimentConfig::from_toml("[modem]\nsf = 7\nbogus = 1\n").is_err());
    }

    #[test]
    fn snr_axes_differ_by_two_n() {
        let exp = ExperimentConfig::from_toml(MINIMAL).unwrap().resolve().unwrap();
        let (ps, n0) = exp.snr_axes(-10.0);
        assert_eq!(ps, -10.0);
        assert!((ps - n0 - 10.0 * 256f64.log10()).abs() < 1e-12);
    }
}
