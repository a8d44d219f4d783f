//! Benchmark harness: connection establishment time per transport and
//! broker-side forwarding latency with and without enforcement.

use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::client::{Client, ClientError, ClientOptions, TlsClientOptions};
use super::stats::{summary_stats, Summary};
use crate::broker::{Broker, BrokerConfig, BrokerError, RunningBroker};
use crate::codec::QoS;
use crate::security::EnforcementFlag;
use crate::transport::{write_self_signed, ListenerConfig, TransportError, TransportKind};

pub const CSV_HEADER: &str = "scenario,run,duration_ms";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub scenario: String,
    pub requested: usize,
    pub samples_ms: Vec<f64>,
    pub failures: usize,
    pub summary: Option<Summary>,
    pub notes: Vec<String>,
}

impl BenchReport {
    pub fn from_samples(
        scenario: impl Into<String>,
        requested: usize,
        samples_ms: Vec<f64>,
        failures: usize,
    ) -> Self {
        let summary = summary_stats(&samples_ms).ok();
        Self {
            scenario: scenario.into(),
            requested,
            samples_ms,
            failures,
            summary,
            notes: Vec::new(),
        }
    }

    /// One row per successful run. Values are written with full precision
    /// so the summary can be recomputed exactly from the file.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (i, s) in self.samples_ms.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.scenario, i + 1, s);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn human_summary(&self) -> String {
        let mut out = format!(
            "{} (requested {}, completed {}, failed {})\n",
            self.scenario,
            self.requested,
            self.samples_ms.len(),
            self.failures
        );
        match &self.summary {
            Some(s) => {
                let _ = writeln!(out, "  Average Time        {:>12.3} ms", s.avg);
                let _ = writeln!(out, "  Standard Deviation  {:>12.3} ms (population)", s.stddev);
                let _ = writeln!(out, "  Minimum Time        {:>12.3} ms", s.min);
                let _ = writeln!(out, "  Maximum Time        {:>12.3} ms", s.max);
                let _ = writeln!(out, "  Median              {:>12.3} ms", s.median);
            }
            None => out.push_str("  no samples\n"),
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        out
    }
}

/// Parses a CSV produced by [`BenchReport::to_csv`] back into samples.
pub fn parse_csv_samples(text: &str) -> Vec<f64> {
    text.lines()
        .skip(1)
        .filter_map(|l| l.rsplit(',').next()?.parse().ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Plain,
    Tls,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMode::Plain => "plain",
            BenchMode::Tls => "tls",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConnectTarget {
    pub plain_addr: String,
    pub tls_addr: String,
    pub tls: TlsClientOptions,
}

/// Runs `n` sequential fresh connections. Each sample spans TCP connect,
/// the TLS handshake when applicable, and CONNECT until CONNACK arrives.
pub async fn bench_connect(target: &ConnectTarget, n: usize, mode: BenchMode) -> BenchReport {
    let mut samples = Vec::with_capacity(n);
    let mut failures = 0;
    let tag = std::process::id();
    for i in 0..n {
        let mut opts = match mode {
            BenchMode::Plain => ClientOptions::new(target.plain_addr.clone(), ""),
            BenchMode::Tls => {
                let mut o = ClientOptions::new(target.tls_addr.clone(), "");
                o.tls = Some(target.tls.clone());
                o
            }
        };
        opts.client_id = format!("bench-{mode}-{tag}-{i}");
        let start = Instant::now();
        match Client::connect(&opts).await {
            Ok((client, _)) => {
                samples.push(start.elapsed().as_secs_f64() * 1e3);
                let _ = client.disconnect().await;
            }
            Err(e) => {
                failures += 1;
                tracing::warn!(run = i, error = %e, "connect run failed");
            }
        }
    }
    BenchReport::from_samples(format!("connect-{mode}"), n, samples, failures)
}

pub fn connect_comparison(plain: &BenchReport, tls: &BenchReport) -> String {
    match (&plain.summary, &tls.summary) {
        (Some(p), Some(t)) if p.avg > 0.0 => format!(
            "TLS / plain average: {:.2}x ({:.3} ms vs {:.3} ms)",
            t.avg / p.avg,
            t.avg,
            p.avg
        ),
        _ => "TLS / plain average: n/a".into(),
    }
}

/// A broker on loopback with a plain listener and, when a certificate
/// directory is given, a TLS listener using a fresh self-signed
/// certificate.
pub struct LocalBroker {
    pub running: RunningBroker,
    pub plain_addr: String,
    pub tls_addr: Option<String>,
    pub tls: Option<TlsClientOptions>,
}

impl LocalBroker {
    pub async fn start(
        cert_dir: Option<&Path>,
        tweak: impl FnOnce(&mut BrokerConfig),
    ) -> Result<Self, BenchError> {
        let lo = Ipv4Addr::LOCALHOST.into();
        let mut config = BrokerConfig {
            listeners: vec![ListenerConfig::plain(lo, 0)],
            ..Default::default()
        };
        let mut ca: Option<PathBuf> = None;
        if let Some(dir) = cert_dir {
            let files = write_self_signed(dir, &["localhost".into(), "127.0.0.1".into()])?;
            config
                .listeners
                .push(ListenerConfig::tls(lo, 0, files.cert.clone(), files.key));
            ca = Some(files.cert);
        }
        tweak(&mut config);
        let running = Broker::start(config).await?;
        let plain_addr = running
            .addr(TransportKind::Plain)
            .map(|a| a.to_string())
            .unwrap_or_default();
        let tls_addr = running.addr(TransportKind::Tls).map(|a| a.to_string());
        Ok(Self {
            running,
            plain_addr,
            tls_addr,
            tls: ca.map(TlsClientOptions::with_ca),
        })
    }

    pub fn broker(&self) -> &Broker {
        self.running.broker()
    }

    /// Client options for this broker over the given transport.
    pub fn options(&self, mode: BenchMode, client_id: &str) -> ClientOptions {
        match mode {
            BenchMode::Plain => ClientOptions::new(self.plain_addr.clone(), client_id),
            BenchMode::Tls => {
                let mut o = ClientOptions::new(
                    self.tls_addr.clone().expect("TLS listener not started"),
                    client_id,
                );
                o.tls = self.tls.clone();
                o
            }
        }
    }

    pub fn connect_target(&self) -> Option<ConnectTarget> {
        Some(ConnectTarget {
            plain_addr: self.plain_addr.clone(),
            tls_addr: self.tls_addr.clone()?,
            tls: self.tls.clone()?,
        })
    }
}

const FORWARD_TOPIC: &str = "bench/forward";

struct ForwardRig {
    publisher: Client,
    subscriber: Option<Client>,
}

impl ForwardRig {
    async fn new(local: &LocalBroker, subscribe: bool) -> Result<Self, BenchError> {
        let tag = std::process::id();
        let (publisher, _) =
            Client::connect(&local.options(BenchMode::Plain, &format!("fwd-pub-{tag}"))).await?;
        let subscriber = if subscribe {
            let (mut s, _) =
                Client::connect(&local.options(BenchMode::Plain, &format!("fwd-sub-{tag}")))
                    .await?;
            s.subscribe(FORWARD_TOPIC, QoS::AtMostOnce, None).await?;
            Some(s)
        } else {
            None
        };
        Ok(Self {
            publisher,
            subscriber,
        })
    }

    /// Publishes one message and returns its forwarding latency, `Ok(None)`
    /// when nothing was forwarded.
    async fn one(&mut self, broker: &Broker, i: usize) -> Result<Option<f64>, ClientError> {
        broker.take_forward_samples();
        let payload = format!("m{i}");
        self.publisher
            .publish(
                FORWARD_TOPIC,
                payload.as_bytes(),
                QoS::AtLeastOnce,
                Some(EnforcementFlag::Enforce),
            )
            .await?;
        let Some(sub) = &mut self.subscriber else {
            return Ok(broker.take_forward_samples().first().map(dur_ms));
        };
        match sub.next_message(Duration::from_secs(5)).await? {
            Some(_) => {}
            None => return Err(ClientError::Timeout),
        }
        // The sample is recorded right after the write completes, which may
        // be a moment after the subscriber already has the bytes.
        let deadline = Instant::now() + Duration::from_secs(1);
        loop {
            if let Some(d) = broker.take_forward_samples().first() {
                return Ok(Some(dur_ms(d)));
            }
            if Instant::now() > deadline {
                return Ok(None);
            }
            tokio::task::yield_now().await;
        }
    }
}

fn dur_ms(d: &Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn forward_label(enforcement: bool) -> &'static str {
    if enforcement {
        "forward-enforcement-on"
    } else {
        "forward-enforcement-off"
    }
}

/// Forwarding latency with one matched subscriber (or none), using an
/// in-process broker with measurement enabled.
pub async fn bench_forward_with(
    n: usize,
    enforcement: bool,
    subscribe: bool,
) -> Result<BenchReport, BenchError> {
    let local = LocalBroker::start(None, |c| {
        c.measure_forwarding = true;
        c.enforcement = enforcement;
    })
    .await?;
    let mut rig = ForwardRig::new(&local, subscribe).await?;
    let mut samples = Vec::with_capacity(n);
    let mut failures = 0;
    for i in 0..n {
        match rig.one(local.broker(), i).await {
            Ok(Some(ms)) => samples.push(ms),
            Ok(None) if !subscribe => {}
            _ => failures += 1,
        }
    }
    let mut report = BenchReport::from_samples(forward_label(enforcement), n, samples, failures);
    if report.samples_ms.is_empty() {
        report.notes.push("zero deliveries".into());
    }
    local.running.shutdown();
    Ok(report)
}

pub async fn bench_forward(n: usize, enforcement: bool) -> Result<BenchReport, BenchError> {
    bench_forward_with(n, enforcement, true).await
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardComparison {
    pub off: BenchReport,
    pub on: BenchReport,
}

impl ForwardComparison {
    pub fn median_ratio(&self) -> Option<f64> {
        let off = self.off.summary?.median;
        let on = self.on.summary?.median;
        (off > 0.0).then(|| on / off)
    }

    pub fn human_summary(&self) -> String {
        let mut out = self.off.human_summary();
        out.push_str(&self.on.human_summary());
        match self.median_ratio() {
            Some(r) => {
                let _ = writeln!(out, "median on / off: {r:.3}");
            }
            None => out.push_str("median on / off: n/a\n"),
        }
        out
    }
}

/// Both modes on one broker and one pair of connections. Runs alternate
/// between modes (and which mode goes first) so drift over the campaign
/// affects both equally.
pub async fn bench_forward_compare(n: usize) -> Result<ForwardComparison, BenchError> {
    let local = LocalBroker::start(None, |c| c.measure_forwarding = true).await?;
    let broker = local.broker().clone();
    let mut rig = ForwardRig::new(&local, true).await?;
    let mut on = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n);
    let (mut on_fail, mut off_fail) = (0, 0);
    // A few unrecorded rounds so connection setup does not land in the data.
    for i in 0..10 {
        let _ = rig.one(&broker, i).await;
    }
    for i in 0..n {
        let order = if i % 2 == 0 { [false, true] } else { [true, false] };
        for mode in order {
            broker.set_enforcement(mode);
            let r = rig.one(&broker, i).await;
            let (samples, fails) = if mode {
                (&mut on, &mut on_fail)
            } else {
                (&mut off, &mut off_fail)
            };
            match r {
                Ok(Some(ms)) => samples.push(ms),
                _ => *fails += 1,
            }
        }
    }
    local.running.shutdown();
    Ok(ForwardComparison {
        off: BenchReport::from_samples(forward_label(false), n, off, off_fail),
        on: BenchReport::from_samples(forward_label(true), n, on, on_fail),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let samples = vec![0.1234567891234, 3162.0, 1e-9, 12.5];
        let r = BenchReport::from_samples("x", 5, samples.clone(), 1);
        let csv = r.to_csv();
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        assert_eq!(csv.lines().count(), 1 + r.requested - r.failures);
        let back = parse_csv_samples(&csv);
        assert_eq!(back, samples);
        assert_eq!(summary_stats(&back).ok(), r.summary);
    }

    #[test]
    fn human_summary_has_table_rows() {
        let r = BenchReport::from_samples("s", 4, vec![4.0; 4], 0);
        let h = r.human_summary();
        for row in ["Average Time", "Standard Deviation", "Minimum Time", "Maximum Time"] {
            assert!(h.contains(row));
        }
        assert!(h.contains("4.000"));
    }
}
