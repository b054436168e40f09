//! Simulator for a hybrid photon-pair entangler: polarization qubits on
//! discrete modes coupled to coherent-state bus beams through cross-Kerr
//! phase shifts, with QND filtering, a double-XPM parity gate and a lossy
//! bus channel.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod elements;
pub mod error;
pub mod fock_oracle;
pub mod hybrid_state;
pub mod loss;
pub mod pipeline;
pub mod registry;
pub mod rng;

pub use error::{Error, Result};
pub use hybrid_state::{coherent_overlap, fidelity, inner, normalize, DvLabel, HybridKet, MixedState, Pol, C64};
pub use registry::{BusMode, DvMode, ModeRegistry, Side};
