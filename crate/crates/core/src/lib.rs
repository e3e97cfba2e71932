// SPDX-License-Identifier: Apache-2.0

//! Simulation of built-in self-test and repair flows for carbon-nanotube
//! FPGAs.
//!
//! The crate covers MWCNT interconnect delay variation and ring-oscillator
//! delay-fault detection, metallic-CNT defect sampling and its mapping to
//! LUT fault models, CLB and carry-chain test sessions, recursive jump
//! testing of the CLB array, and spare-row repair.

pub mod clb_test;
pub mod config;
pub mod defects;
pub mod delay;
pub mod error;
pub mod experiment;
pub mod model;
pub mod redundancy;
pub mod seed;

pub use config::{Experiment, RunConfig};
pub use error::{Error, Result};
pub use experiment::run;
pub use model::{
    build_array, carry_chain_eval, clb_pitch, lut_eval, ArrayGeometry, CarryChainStage, Clb,
    FaultKind, FpgaArray, LutInstance, LutSite, PassTransistor, TruthTable,
};
