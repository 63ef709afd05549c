//! Simulator and analysis toolkit for shielded-pool transaction privacy.
//!
//! The crate models a Zcash-style currency with transparent and shielded
//! addresses, a global passive adversary that watches both the blockchain and
//! the peer-to-peer broadcast layer, and a two-part defense: a cascade mix
//! network that broadcasts transactions on behalf of users, and an advisor
//! that recommends how to split deposits so they blend into prior pool
//! activity.

pub mod adversary;
pub mod advisor;
pub mod harness;
pub mod ledger;
pub mod mixnet;
pub mod network;
