//! Joint bit and power loading for OFDM links.
//!
//! The loader minimizes a weighted difference of total transmit power and
//! throughput subject to an average-BER target and an optional total-power
//! cap, by solving the Lagrangian stationarity system with a
//! Levenberg–Marquardt iteration and flooring the resulting bit vector.

pub mod baseline;
pub mod channel;
pub mod cli;
pub mod experiments;
pub mod kkt;
pub mod linalg;
pub mod linkmodel;
pub mod lmsolver;
pub mod loader;
pub mod screen;
pub mod selftest;
