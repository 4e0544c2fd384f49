//! IO and orchestration around `stream-core`: worker-pool scans, event and
//! point file formats, checkpoint containers, the toy training harness,
//! streaming inference, verification suites, and benchmarks.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod formats;
pub mod infer;
pub mod metrics;
pub mod parallel;
pub mod trainer;
pub mod verify;
