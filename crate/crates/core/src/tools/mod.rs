//! Command line clients and the benchmark harness.

pub mod bench;
pub mod cli;
pub mod client;
pub mod stats;

pub use bench::{
    bench_connect, bench_forward, bench_forward_compare, bench_forward_with, BenchMode,
    BenchReport, ConnectTarget, ForwardComparison, LocalBroker,
};
pub use cli::{run_pub, run_sub, PubArgs, SubArgs};
pub use client::{Client, ClientError, ClientOptions, TlsClientOptions};
pub use stats::{summary_stats, Summary};
