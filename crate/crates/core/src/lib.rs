//! Design, simulation and analysis of fast two-ion crystal separation in a
//! segmented Paul trap.
//!
//! The crate is organised along the experimental pipeline:
//!
//! - [`trapmodel`]: quartic axial potential, equilibria and mode frequencies
//! - [`calibrate`]: regressions that turn spectroscopy and distance scans into a [`trapmodel::SegmentBasis`]
//! - [`rampgen`]: separation voltage ramps
//! - [`hardware`]: waveform generator quantization and the segment low-pass filters
//! - [`dynamics`]: classical two-ion trajectories, excitation extraction and scans
//! - [`phonons`]: phonon-number distributions and the Rabi forward model
//! - [`estimate`]: MCMC inference of motional states from Rabi data
//! - [`drift`]: laser-induced charging, the tilt servo and the separation window
//! - [`config`] and [`io`]: the unit-annotated configuration file and CSV/JSON formats

pub mod calibrate;
pub mod config;
pub mod drift;
pub mod dynamics;
pub mod error;
pub mod estimate;
pub mod fitting;
pub mod hardware;
pub mod io;
pub mod numeric;
pub mod phonons;
pub mod rampgen;
pub mod trapmodel;

pub use error::{Error, Result};
