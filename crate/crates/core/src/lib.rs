//! Software LoRa physical layer.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`]: chirp generation, dechirping and DFT demodulation at `fs = B`.
//! * [`codec`]: whitening, Hamming codes, diagonal interleaving and Gray mapping.
//! * [`frame`]: packet assembly (preamble, network identifiers, downchirps,
//!   payload, CRC16) and payload recovery.
//! * [`channel`]: impairment injection (complex gain, STO, CFO, AWGN).
//! * [`sync`]: preamble detection and STO/CFO estimation and compensation.

pub mod channel;
pub mod codec;
mod error;
pub mod frame;
pub mod signal;
pub mod sync;

pub use num_complex::Complex64;

pub use channel::{ImpairmentSpec, NoiseConvention, NoiseLevel};
pub use codec::{CodingRate, WhiteningSequence};
pub use error::{Error, Result};
pub use frame::{Coding, DecodedPayload, FrameConfig, FramePlan, NetIdMode};
pub use signal::{ChirpParams, IqBuffer, SpectrumResult, Symbol};
pub use sync::{SyncConfig, SyncEstimate, SyncOutput, SyncPhase};
