//! Spiking population reservoir with FORCE-trained readouts for closed-loop
//! control of a compliant quadruped surrogate, plus the CPG targets and the
//! CMA-ES gait search that produce them.

pub mod body;
pub mod closed_loop;
pub mod cmaes;
pub mod cpg;
pub mod error;
pub mod force;
pub mod interface;
pub mod reservoir;
pub mod rng;
pub mod spiking;

pub use error::{Result, SimError};
