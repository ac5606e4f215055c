//! Thermal network identification and electro-thermal transient simulation
//! for N/P nanosheet device pairs.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`geometry`]: box models of side-by-side and stacked device pairs, voxelized.
//! - [`heatsolve`]: finite-volume heat conduction on the voxel grid, giving
//!   steady temperature rises and thermal step responses `Zth(t)`.
//! - [`nid`]: log-time derivative of `Zth`, iterative Bayesian deconvolution into a
//!   time-constant spectrum, and peak counting to pick a network order.
//! - [`fosterfit`]: real-coded genetic algorithm fitting Foster ladders.
//! - [`xnet`]: the cross-coupled pair model (four ladders), its state evolution
//!   and the crosstalk coefficient.
//! - [`compact`]: temperature-dependent transistor surrogate and its two-phase extraction.
//! - [`circuit`]: MNA transient simulator with loose electro-thermal coupling,
//!   standard cells, ring oscillators and delay/edge metrics.

// `!(x > 0.0)` guards reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod compact;
pub mod csvio;
pub mod error;
pub mod fosterfit;
pub mod geometry;
pub mod heatsolve;
pub mod nid;
pub mod optim;
pub mod xnet;

pub use error::{Error, ErrorKind, Result};

/// Identifies one transistor of an N/P pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    N,
    P,
}

impl Device {
    pub const BOTH: [Device; 2] = [Device::N, Device::P];

    pub fn other(self) -> Device {
        match self {
            Device::N => Device::P,
            Device::P => Device::N,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Device::N => "n",
            Device::P => "p",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Device::N => 0,
            Device::P => 1,
        }
    }
}

impl std::fmt::Display for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Device {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" | "nfet" => Ok(Device::N),
            "p" | "pfet" => Ok(Device::P),
            other => Err(Error::Parse(format!("unknown device `{other}`"))),
        }
    }
}

/// Device architecture of a pair: N and P side by side, or N stacked over P.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Nsfet,
    Cfet,
}

impl Flavor {
    pub const BOTH: [Flavor; 2] = [Flavor::Nsfet, Flavor::Cfet];

    pub fn name(self) -> &'static str {
        match self {
            Flavor::Nsfet => "nsfet",
            Flavor::Cfet => "cfet",
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nsfet" => Ok(Flavor::Nsfet),
            "cfet" => Ok(Flavor::Cfet),
            other => Err(Error::Parse(format!("unknown flavor `{other}`"))),
        }
    }
}
