//! Cooperative multi-agent Q-learning with value decomposition.
//!
//! Per-agent utility networks are combined by a centralized mixing network
//! into a joint action value. Besides the VDN and QMIX mixers, the crate
//! implements a mixer whose hypernetwork is conditioned on a sampled global
//! hierarchy `z ~ N(mu(s), sigma(s))`; the hierarchy policy is trained with a
//! REINFORCE signal equal to the episode-return improvement produced by a few
//! Q-learning "exercise" updates.

pub mod error;
pub mod gradcore;

pub use error::{Error, Result};
pub mod agents;
pub mod envs;
pub mod mixer;
pub mod train;
pub mod harness;
