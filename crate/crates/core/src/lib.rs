//! Freezing-of-gait detection on a simulated microcontroller.
//!
//! The pipeline runs from raw Daphnet-style acceleration logs to a byte
//! streaming device:
//!
//! * [`ingest`] parses logs and removes out-of-experiment data,
//! * [`windows`] cuts labelled 129 × 3 windows, balances and splits them,
//! * [`nn`] trains the 1-D CNN,
//! * [`tune`] grid-searches its hyperparameters,
//! * [`export`] freezes, quantizes and packs the model into an int8 blob,
//! * [`micro`] runs that blob behind a Read/Process byte protocol,
//! * [`host`] streams windows to a device and reports on the replies.

mod bytes;
pub mod export;
pub mod host;
pub mod ingest;
pub mod micro;
pub mod nn;
pub mod pipeline;
pub mod tune;
pub mod windows;
