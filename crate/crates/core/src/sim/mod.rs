//! Simulation environment: a synthetic historical corpus, the context
//! generators built from it, and the reward models of the simulated users.

pub mod corpus;
pub mod env;
pub mod population;

pub use corpus::{generate_corpus, CorpusConfig, CorpusRecord, Field, SyntheticCorpus, Target, Timestamp};
pub use env::Environment;
pub use population::{PopulationParams, PopulationSetting, UserProfile};
