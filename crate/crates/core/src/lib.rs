//! Desk-scale laboratory for conditional GAN class transfer.
//!
//! A pretrained class-conditional generator is extended to new classes by
//! learning each new class's batch-normalization parameters as a regularized
//! linear combination of (jointly updated copies of) the source classes'
//! parameters, with optional residual corrections. Scratch training, full
//! fine-tuning and per-class BN-from-scratch baselines run on the same
//! synthetic 2D multi-class tasks for comparison.

pub mod condnet;
pub mod gradcore;
pub mod metrics;
pub mod synthdata;
pub mod train;
pub mod transfer;
