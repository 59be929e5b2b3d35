//! A coordination-aware CRDT store.
//!
//! State lives in join semi-lattices ([`lattice`]). Queries are classified as
//! monotone or not ([`query`], [`dsl`]): monotone threshold queries answer from
//! a single replica and their `true` results are never retracted, while
//! non-monotone queries go through [`coordination`]. The [`sim`] module drives
//! replicas ([`replication`]) through a seeded, fault-injecting network and
//! writes a [`trace`] that the [`checker`] audits offline.

pub mod checker;
pub mod coordination;
pub mod dsl;
pub mod id;
pub mod lattice;
pub mod metrics;
pub mod polog;
pub mod query;
pub mod replication;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use id::ReplicaId;
pub use lattice::{Element, Lattice, LatticeError, LatticeType, LatticeValue, Op, Store};
