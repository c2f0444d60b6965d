//! Implicit semantic communication over knowledge graphs.
//!
//! A source user holds a knowledge graph and a hidden way of reasoning over
//! it (its expert paths). Only explicit entities cross the channel, as points
//! of a learned low-dimensional constellation. The destination learns to
//! reproduce the source's reasoning by adversarial imitation: a comparator at
//! the source scores generated paths against expert ones, and the destination
//! updates its reasoning policy from those scores.
//!
//! | module | role |
//! |---|---|
//! | [`kg`] | graph storage, subgraph sampling, expert paths |
//! | [`encoder`] | translation energy, margin training, symbol packing |
//! | [`channel`] | AWGN / Rayleigh transmission at a given SNR |
//! | [`decoder`] | nearest-neighbor and reasoning-constrained recovery |
//! | [`policy`] | reasoning MDP, policy network, rollouts, policy gradient |
//! | [`comparator`] | path discriminator and Jensen-Shannon distance |
//! | [`grml`] | the alternating imitation trainer |
//! | [`experiments`] | sweeps, CSV tables, manifests |

pub mod channel;
pub mod comparator;
pub mod datasets;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod grml;
pub mod kg;
pub mod nn;
pub mod policy;

pub use error::{Error, Result};
pub use kg::{EntityId, ExplicitSemantics, KnowledgeGraph, RelationId, SemanticPath, Triple};
