//! Control plane for a public cluster partitioned into user-owned blocks.
//!
//! Everything here runs on a virtual clock and performs no IO, so the crate
//! builds without `std` (it needs `alloc`).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod block;
pub mod cluster;
pub mod fabric;
pub mod flood;
pub mod ids;
pub mod qmgr;
pub mod router;
pub mod scheduler;
pub mod system;
