//! Deterministic single-process simulator of federated optimization.
//!
//! The crate implements three aggregation algorithms over a synthetic (or
//! CSV-ingested) federation of devices holding non-IID data:
//!
//! * **FedAvg** — sample-size weighted averaging of client models.
//! * **FedProx** — FedAvg plus a proximal term in the client objective.
//! * **FedFa** — double momentum (client and server side) combined with
//!   information-quantity weighting of client models, which trades off
//!   training accuracy against participation frequency to produce a fairer
//!   accuracy distribution across devices.
//!
//! Everything is a pure function of explicit configuration plus a single
//! root seed: repeated runs produce byte-identical outputs.

pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;

pub use error::{FedError, Result};
