//! cf32 IQ files: interleaved little-endian `f32` I/Q pairs with no
//! header, plus a TOML sidecar at `<file>.toml` describing the capture.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use lora_phy::{ChirpParams, Complex64, IqBuffer};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_TAG: &str = "cf32_le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub sample_rate_hz: f64,
    pub sf: u8,
    pub bandwidth_hz: f64,
    pub samples: u64,
}

impl Sidecar {
    pub fn for_params(p: &ChirpParams, samples: usize) -> Self {
        Sidecar {
            format: FORMAT_TAG.into(),
            sample_rate_hz: p.sample_rate_hz(),
            sf: p.sf(),
            bandwidth_hz: p.bandwidth_hz(),
            samples: samples as u64,
        }
    }

    /// Rejects captures made with other modem settings.
    pub fn check_matches(&self, p: &ChirpParams) -> Result<()> {
        if self.format != FORMAT_TAG {
            return Err(CliError::config(format!("unsupported IQ format {:?}", self.format)));
        }
        if self.sf != p.sf() || self.bandwidth_hz != p.bandwidth_hz() || self.sample_rate_hz != p.sample_rate_hz() {
            return Err(CliError::config(format!(
                "capture is SF{} at {} Hz / {} S/s, config is SF{} at {} Hz / {} S/s",
                self.sf,
                self.bandwidth_hz,
                self.sample_rate_hz,
                p.sf(),
                p.bandwidth_hz(),
                p.sample_rate_hz()
            )));
        }
        Ok(())
    }
}

pub fn sidecar_path(iq: &Path) -> PathBuf {
    let mut s = iq.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

pub fn write_cf32<W: Write>(mut w: W, samples: &[Complex64]) -> std::io::Result<()> {
    for z in samples {
        w.write_all(&(z.re as f32).to_le_bytes())?;
        w.write_all(&(z.im as f32).to_le_bytes())?;
    }
    w.flush()
}

pub fn read_cf32<R: Read>(mut r: R) -> std::io::Result<Vec<Complex64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{} bytes is not a whole number of cf32 samples", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(f64::from(re), f64::from(im))
        })
        .collect())
}

/// Writes the samples and their sidecar.
pub fn write_iq_file(path: &Path, buf: &IqBuffer, p: &ChirpParams) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_cf32(BufWriter::new(file), &buf.samples).map_err(|e| CliError::io(path, e))?;
    let meta = sidecar_path(path);
    let text = toml::to_string(&Sidecar::for_params(p, buf.len())).expect("sidecar serializes");
    std::fs::write(&meta, text).map_err(|e| CliError::io(&meta, e))
}

pub fn read_iq_file(path: &Path) -> Result<(IqBuffer, Sidecar)> {
    let meta = sidecar_path(path);
    let text = std::fs::read_to_string(&meta).map_err(|e| CliError::io(&meta, e))?;
    let sidecar: Sidecar =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", meta.display())))?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let samples = read_cf32(BufReader::new(file)).map_err(|e| CliError::io(path, e))?;
    if samples.len() as u64 != sidecar.samples {
        return Err(CliError::config(format!(
            "sidecar says {} samples, file has {}",
            sidecar.samples,
            samples.len()
        )));
    }
    Ok((IqBuffer::new(samples), sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cf32_layout_is_interleaved_le() {
        let mut out = Vec::new();
        write_cf32(&mut out, &[Complex64::new(1.0, -2.0)]).unwrap();
        assert_eq!(out, [1f32.to_le_bytes(), (-2f32).to_le_bytes()].concat());
        assert_eq!(read_cf32(&out[..]).unwrap(), [Complex64::new(1.0, -2.0)]);
        assert!(read_cf32(&out[..7]).is_err());
    }

    #[test]
    fn sidecar_path_appends_extension() {
        assert_eq!(sidecar_path(Path::new("a/b.cf32")), Path::new("a/b.cf32.toml"));
    }

    #[test]
    fn sidecar_mismatch_is_config_error() {
        let p7 = ChirpParams::new(7, 125e3).unwrap();
        let p8 = ChirpParams::new(8, 125e3).unwrap();
        let meta = Sidecar::for_params(&p7, 10);
        assert!(meta.check_matches(&p7).is_ok());
        assert!(matches!(meta.check_matches(&p8), Err(CliError::Config(_))));
    }
}
