//! Reward models, posterior updates and a mobile-health trial simulator for
//! pooled Thompson-sampling policies.
//!
//! Everything here is `no_std` with `alloc`; IO, configuration files and the
//! command line live in the companion `ipool` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod error;
pub mod evidence;
pub mod gp;
pub mod latent;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod presets;
pub mod sim;
pub mod trial;

pub use error::{BoundsError, GpError, ModelError, PolicyError, SimError, TrialError};
pub use gp::{History, KernelVariant, Posterior};
pub use model::{Action, FeatureMap, Hyperparameters, Interaction, UserId};
