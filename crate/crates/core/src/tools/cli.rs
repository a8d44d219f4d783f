//! Publisher and subscriber command line clients.

use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;

use super::client::{Client, ClientError, ClientOptions, TlsClientOptions};
use crate::codec::{ProtocolVersion, Publish, QoS};
use crate::security::EnforcementFlag;

#[derive(Debug, Clone, Args)]
pub struct ConnArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Defaults to 1883 (plain) or 8883 (TLS).
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, conflicts_with = "plain")]
    pub tls: bool,
    #[arg(long)]
    pub plain: bool,
    /// CA or self-signed certificate to trust (PEM).
    #[arg(long)]
    pub ca_file: Option<PathBuf>,
    /// Accept any server certificate.
    #[arg(long)]
    pub insecure: bool,
    #[arg(long, default_value = "localhost")]
    pub server_name: String,
    /// Speak MQTT 3.1.1 instead of 5.
    #[arg(long)]
    pub v4: bool,
    #[arg(long, default_value = "")]
    pub client_id: String,
    /// Ask for security enforcement ("s" = "1").
    #[arg(long, conflicts_with = "relax")]
    pub enforce: bool,
    /// Waive enforcement ("s" = "0").
    #[arg(long)]
    pub relax: bool,
    /// Send the flag on CONNECT instead of on each PUBLISH/SUBSCRIBE.
    #[arg(long)]
    pub at_connect: bool,
    #[arg(long, default_value_t = 60)]
    pub keep_alive: u16,
}

impl ConnArgs {
    pub fn flag(&self) -> Option<EnforcementFlag> {
        match (self.enforce, self.relax) {
            (true, _) => Some(EnforcementFlag::Enforce),
            (_, true) => Some(EnforcementFlag::Relax),
            _ => None,
        }
    }

    /// Flag to attach to PUBLISH/SUBSCRIBE.
    pub fn packet_flag(&self) -> Option<EnforcementFlag> {
        if self.at_connect {
            None
        } else {
            self.flag()
        }
    }

    pub fn options(&self) -> ClientOptions {
        let port = self.port.unwrap_or(if self.tls { 8883 } else { 1883 });
        let mut o = ClientOptions::new(format!("{}:{}", self.host, port), self.client_id.clone());
        if self.tls {
            o.tls = Some(TlsClientOptions {
                ca_file: self.ca_file.clone(),
                insecure: self.insecure,
                server_name: self.server_name.clone(),
                tls12_only: false,
            });
        }
        if self.v4 {
            o.version = ProtocolVersion::V311;
        }
        o.keep_alive_s = self.keep_alive;
        if self.at_connect {
            o.connect_flag = self.flag();
        }
        o
    }
}

fn parse_qos(s: &str) -> Result<QoS, String> {
    match s {
        "0" => Ok(QoS::AtMostOnce),
        "1" => Ok(QoS::AtLeastOnce),
        _ => Err("QoS must be 0 or 1".into()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct PubArgs {
    #[command(flatten)]
    pub conn: ConnArgs,
    #[arg(long)]
    pub topic: String,
    #[arg(long, default_value = "")]
    pub payload: String,
    #[arg(long, default_value = "0", value_parser = parse_qos)]
    pub qos: QoS,
}

#[derive(Debug, Clone, Args)]
pub struct SubArgs {
    #[command(flatten)]
    pub conn: ConnArgs,
    #[arg(long, required = true)]
    pub filter: Vec<String>,
    #[arg(long, default_value = "0", value_parser = parse_qos)]
    pub qos: QoS,
    /// Exit after this many messages.
    #[arg(long)]
    pub count: Option<usize>,
    /// Exit after this many seconds without a message.
    #[arg(long)]
    pub timeout: Option<f64>,
}

/// Connects, publishes one message and disconnects. A QoS 1 publish
/// succeeds only on a success PUBACK.
pub async fn run_pub(args: &PubArgs) -> Result<(), ClientError> {
    let (mut c, _) = Client::connect(&args.conn.options()).await?;
    let ack = c
        .publish(
            &args.topic,
            args.payload.as_bytes(),
            args.qos,
            args.conn.packet_flag(),
        )
        .await?;
    if let Some(a) = ack {
        if a.reason_code >= 0x80 {
            return Err(ClientError::Refused(a.reason_code));
        }
    }
    c.disconnect().await
}

/// `timestamp<TAB>topic<TAB>payload`, payload as text when it is UTF-8 and
/// as `0x`-prefixed hex otherwise.
pub fn format_message(p: &Publish) -> String {
    let payload = match std::str::from_utf8(&p.payload) {
        Ok(s) => s.to_owned(),
        Err(_) => {
            let mut hex = String::from("0x");
            for b in &p.payload {
                hex.push_str(&format!("{b:02x}"));
            }
            hex
        }
    };
    format!(
        "{}\t{}\t{}",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        p.topic,
        payload
    )
}

/// Subscribes and prints one line per message. Returns how many messages
/// were printed.
pub async fn run_sub(args: &SubArgs, out: &mut (dyn Write + Send)) -> Result<usize, ClientError> {
    let (mut c, _) = Client::connect(&args.conn.options()).await?;
    let filters: Vec<(&str, QoS)> = args.filter.iter().map(|f| (f.as_str(), args.qos)).collect();
    let ack = c.subscribe_many(&filters, args.conn.packet_flag()).await?;
    if let Some(code) = ack.reason_codes.iter().find(|c| **c >= 0x80) {
        return Err(ClientError::Refused(*code));
    }
    let idle = args
        .timeout
        .map(Duration::from_secs_f64)
        .unwrap_or(Duration::from_secs(365 * 24 * 3600));
    let mut printed = 0;
    while args.count.map_or(true, |n| printed < n) {
        match c.next_message(idle).await? {
            Some(p) => {
                writeln!(out, "{}", format_message(&p))?;
                out.flush()?;
                printed += 1;
            }
            None => break,
        }
    }
    let _ = c.disconnect().await;
    Ok(printed)
}
