use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mixmq::broker::{Broker, BrokerConfig};
use mixmq::security::LegacyPolicy;
use mixmq::tools::bench::{self, connect_comparison, BenchMode, ConnectTarget, LocalBroker};
use mixmq::tools::{run_pub, run_sub, PubArgs, SubArgs, TlsClientOptions};
use mixmq::transport::{write_self_signed, ListenerConfig, ListenerKind, TransportKind};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "mixmq", version, about = "Mixed-mode MQTT broker with end-to-end security enforcement")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the broker.
    Broker(BrokerArgs),
    /// Publish one message.
    Pub(PubArgs),
    /// Subscribe and print messages.
    Sub(SubArgs),
    /// Measure CONNECT to CONNACK time over plain TCP and TLS.
    BenchConnect(BenchConnectArgs),
    /// Measure broker-side forwarding latency with and without enforcement.
    BenchForward(BenchForwardArgs),
    /// Write a self-signed certificate and key.
    GenCert(GenCertArgs),
}

#[derive(clap::Args)]
struct BrokerArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bind: Option<IpAddr>,
    #[arg(long)]
    plain_port: Option<u16>,
    #[arg(long)]
    tls_port: Option<u16>,
    #[arg(long, requires = "key")]
    cert: Option<PathBuf>,
    #[arg(long, requires = "cert")]
    key: Option<PathBuf>,
    #[arg(long, value_enum)]
    legacy_policy: Option<PolicyArg>,
    #[arg(long)]
    max_qos: Option<u8>,
    #[arg(long)]
    audit_log: Option<PathBuf>,
    #[arg(long)]
    session_limit: Option<usize>,
    /// Forward everything regardless of security levels.
    #[arg(long)]
    no_enforcement: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PolicyArg {
    InferFromTransport,
    AlwaysRelaxed,
}

#[derive(clap::Args)]
struct BenchConnectArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Plain listener of an external broker. Without it a local broker with
    /// a throwaway certificate is started.
    #[arg(long, requires_all = ["tls_addr"])]
    plain_addr: Option<String>,
    #[arg(long)]
    tls_addr: Option<String>,
    #[arg(long)]
    ca_file: Option<PathBuf>,
    #[arg(long)]
    insecure: bool,
    #[arg(long, default_value = "localhost")]
    server_name: String,
    /// Write all samples of both modes to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchForwardArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GenCertArgs {
    #[arg(long, default_value = "certs")]
    out: PathBuf,
    /// Subject alternative names.
    #[arg(long = "name", default_values_t = ["localhost".to_string(), "127.0.0.1".to_string()])]
    names: Vec<String>,
}

fn broker_config(args: &BrokerArgs) -> anyhow::Result<BrokerConfig> {
    let mut config = match &args.config {
        Some(p) => BrokerConfig::load(p)?,
        None => BrokerConfig {
            listeners: vec![toml::from_str("kind = \"plain\"")?],
            ..Default::default()
        },
    };
    if let (Some(cert), Some(key)) = (&args.cert, &args.key) {
        let addr = args.bind.unwrap_or([0, 0, 0, 0].into());
        config.listeners.retain(|l| !matches!(l.kind, ListenerKind::Tls(_)));
        config.listeners.push(ListenerConfig::tls(addr, 8883, cert.clone(), key.clone()));
    }
    for l in &mut config.listeners {
        if let Some(b) = args.bind {
            l.address = b;
        }
        match l.kind {
            ListenerKind::Plain if args.plain_port.is_some() => l.port = args.plain_port,
            ListenerKind::Tls(_) if args.tls_port.is_some() => l.port = args.tls_port,
            _ => {}
        }
    }
    if let Some(p) = args.legacy_policy {
        config.legacy_policy = match p {
            PolicyArg::InferFromTransport => LegacyPolicy::InferFromTransport,
            PolicyArg::AlwaysRelaxed => LegacyPolicy::AlwaysRelaxed,
        };
    }
    if let Some(q) = args.max_qos {
        config.max_qos = q;
    }
    if let Some(a) = &args.audit_log {
        config.audit_log_path = Some(a.clone());
    }
    if let Some(s) = args.session_limit {
        config.session_limit = s;
    }
    if args.no_enforcement {
        config.enforcement = false;
    }
    config.validate()?;
    Ok(config)
}

async fn run_broker(args: BrokerArgs) -> anyhow::Result<()> {
    let config = broker_config(&args)?;
    let mut running = Broker::start(config).await?;
    for kind in [TransportKind::Plain, TransportKind::Tls] {
        if let Some(a) = running.addr(kind) {
            eprintln!("listening ({kind:?}) on {a}");
        }
    }
    tokio::select! {
        _ = running.wait() => {}
        r = tokio::signal::ctrl_c() => r?,
    }
    Ok(())
}

async fn run_bench_connect(args: BenchConnectArgs) -> anyhow::Result<()> {
    let tmp = std::env::temp_dir().join(format!("mixmq-bench-{}", std::process::id()));
    let mut local = None;
    let target = match (&args.plain_addr, &args.tls_addr) {
        (Some(p), Some(t)) => ConnectTarget {
            plain_addr: p.clone(),
            tls_addr: t.clone(),
            tls: TlsClientOptions {
                ca_file: args.ca_file.clone(),
                insecure: args.insecure,
                server_name: args.server_name.clone(),
                tls12_only: false,
            },
        },
        _ => {
            let l = LocalBroker::start(Some(&tmp), |_| {}).await?;
            let t = l.connect_target().context("local TLS listener missing")?;
            local = Some(l);
            t
        }
    };
    let plain = bench::bench_connect(&target, args.n, BenchMode::Plain).await;
    let tls = bench::bench_connect(&target, args.n, BenchMode::Tls).await;
    print!("{}{}", plain.human_summary(), tls.human_summary());
    println!("{}", connect_comparison(&plain, &tls));
    if let Some(path) = args.csv {
        let mut text = plain.to_csv();
        text.push_str(tls.to_csv().split_once('\n').map_or("", |x| x.1));
        std::fs::write(&path, text)?;
    }
    drop(local);
    let _ = std::fs::remove_dir_all(&tmp);
    if plain.samples_ms.is_empty() || tls.samples_ms.is_empty() {
        bail!("every run failed in at least one mode");
    }
    Ok(())
}

async fn run_bench_forward(args: BenchForwardArgs) -> anyhow::Result<()> {
    let cmp = bench::bench_forward_compare(args.n).await?;
    print!("{}", cmp.human_summary());
    if let Some(path) = args.csv {
        let mut text = cmp.off.to_csv();
        text.push_str(cmp.on.to_csv().split_once('\n').map_or("", |x| x.1));
        std::fs::write(&path, text)?;
    }
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Broker(a) => run_broker(a).await,
        Cmd::Pub(a) => Ok(run_pub(&a).await?),
        Cmd::Sub(a) => {
            let mut out = std::io::stdout();
            run_sub(&a, &mut out).await?;
            Ok(())
        }
        Cmd::BenchConnect(a) => run_bench_connect(a).await,
        Cmd::BenchForward(a) => run_bench_forward(a).await,
        Cmd::GenCert(a) => {
            let f = write_self_signed(&a.out, &a.names)?;
            println!("{}\n{}", f.cert.display(), f.key.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
