//! Simulation and analysis toolkit for the Kirchhoff-law-Johnson-noise (KLJN)
//! key exchange.
//!
//! The crate is layered bottom-up:
//!
//! * [`noise`] synthesizes band-limited Johnson-like noise and measures it.
//! * [`circuit`] solves the two-resistor loop, ideal or with wire resistance
//!   and cable capacitance.
//! * [`protocol`] runs Alice/Bob sessions with sifting and the
//!   instantaneous-comparison alarm.
//! * [`attacks`] implements Eve's catalog and leak accounting.
//! * [`privacy`] is XOR privacy amplification.
//! * [`qkd`] is the BB84 intercept-resend baseline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod circuit;
pub mod error;
pub mod key;
pub mod noise;
pub mod privacy;
pub mod protocol;
pub mod qkd;
pub mod rng;

pub use error::{Error, Result};
