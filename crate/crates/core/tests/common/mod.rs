#![allow(dead_code)]

use std::time::Duration;

use mixmq::broker::BrokerConfig;
use mixmq::codec::properties::{self, property_kind, ValueKind};
use mixmq::codec::{
    Connack, Connect, Disconnect, Packet, Properties, Property, PropertyValue, ProtocolVersion,
    Puback, Publish, QoS, Suback, Subscribe, SubscribeFilter, Unsuback, Unsubscribe,
};
use mixmq::security::EnforcementFlag;
use mixmq::tools::bench::LocalBroker;
use mixmq::tools::{Client, ClientOptions};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

pub use mixmq::tools::BenchMode::{Plain, Tls};

pub struct Harness {
    pub local: LocalBroker,
    pub dir: tempfile::TempDir,
}

impl Harness {
    /// Broker with a plain and a TLS listener on loopback and an audit log
    /// in a temporary directory.
    pub async fn start(tweak: impl FnOnce(&mut BrokerConfig)) -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let audit = dir.path().join("audit.jsonl");
        let local = LocalBroker::start(Some(&dir.path().join("certs")), |c| {
            c.audit_log_path = Some(audit);
            tweak(c);
        })
        .await
        .unwrap();
        Harness { local, dir }
    }

    pub fn audit_lines(&self) -> Vec<serde_json::Value> {
        let text = std::fs::read_to_string(self.dir.path().join("audit.jsonl")).unwrap_or_default();
        text.lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    pub fn options(
        &self,
        mode: mixmq::tools::BenchMode,
        id: &str,
        version: ProtocolVersion,
        flag: Option<EnforcementFlag>,
    ) -> ClientOptions {
        let mut o = self.local.options(mode, id);
        o.version = version;
        o.connect_flag = flag;
        o.timeout = Duration::from_secs(10);
        o
    }

    pub async fn client(
        &self,
        mode: mixmq::tools::BenchMode,
        id: &str,
        version: ProtocolVersion,
        flag: Option<EnforcementFlag>,
    ) -> Client {
        Client::connect(&self.options(mode, id, version, flag))
            .await
            .unwrap_or_else(|e| panic!("connect {id}: {e}"))
            .0
    }
}

// ---------------------------------------------------------------------------
// Random packet generation for codec round trips.

fn text(rng: &mut StdRng, max: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'z', '0', '/', ' ', '-', 'é', '漢', '😀', '$'];
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn nonempty_text(rng: &mut StdRng, max: usize) -> String {
    loop {
        let s = text(rng, max);
        if !s.is_empty() {
            return s;
        }
    }
}

fn bytes(rng: &mut StdRng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

const PROPERTY_IDS: &[u8] = &[
    properties::PAYLOAD_FORMAT_INDICATOR,
    properties::MESSAGE_EXPIRY_INTERVAL,
    properties::CONTENT_TYPE,
    properties::RESPONSE_TOPIC,
    properties::CORRELATION_DATA,
    properties::SUBSCRIPTION_IDENTIFIER,
    properties::SESSION_EXPIRY_INTERVAL,
    properties::REASON_STRING,
    properties::RECEIVE_MAXIMUM,
    properties::TOPIC_ALIAS_MAXIMUM,
    properties::MAXIMUM_QOS,
    properties::USER_PROPERTY,
    properties::USER_PROPERTY,
    properties::USER_PROPERTY,
];

pub fn random_properties(rng: &mut StdRng) -> Properties {
    let n = rng.gen_range(0..4);
    let mut p = Properties::new();
    for _ in 0..n {
        let id = *PROPERTY_IDS.choose(rng).unwrap();
        let value = match property_kind(id).unwrap() {
            ValueKind::Byte => PropertyValue::Byte(rng.gen_range(0..2)),
            ValueKind::TwoByteInt => PropertyValue::TwoByteInt(rng.gen()),
            ValueKind::FourByteInt => PropertyValue::FourByteInt(rng.gen()),
            ValueKind::VarInt => PropertyValue::VarInt(rng.gen_range(1..=268_435_455)),
            ValueKind::Utf8 => PropertyValue::Utf8(text(rng, 12)),
            ValueKind::Binary => PropertyValue::Binary(bytes(rng, 12)),
            ValueKind::StringPair => PropertyValue::StringPair(text(rng, 6), text(rng, 6)),
        };
        p.push(Property::new(id, value));
    }
    if rng.gen_bool(0.3) {
        let flag = *EnforcementFlag::ALL.choose(rng).unwrap();
        p.push(flag.user_property());
    }
    p
}

fn qos01(rng: &mut StdRng) -> QoS {
    if rng.gen() {
        QoS::AtLeastOnce
    } else {
        QoS::AtMostOnce
    }
}

fn pid(rng: &mut StdRng) -> u16 {
    rng.gen_range(1..=u16::MAX)
}

/// A random packet that is valid for `version`.
pub fn random_packet(rng: &mut StdRng, version: ProtocolVersion) -> Packet {
    let v5 = version == ProtocolVersion::V5;
    let props = |rng: &mut StdRng| {
        if v5 {
            random_properties(rng)
        } else {
            Properties::new()
        }
    };
    match rng.gen_range(0..11) {
        0 => {
            let mut c = Connect::new(version, text(rng, 20));
            c.clean_start = rng.gen();
            c.keep_alive_s = rng.gen();
            c.properties = props(rng);
            if rng.gen() {
                c.username = Some(text(rng, 10));
            }
            if rng.gen() && (v5 || c.username.is_some()) {
                c.password = Some(bytes(rng, 10));
            }
            Packet::Connect(c)
        }
        1 => Packet::Connack(Connack {
            session_present: rng.gen(),
            reason_code: rng.gen(),
            properties: props(rng),
        }),
        2 => {
            let qos = qos01(rng);
            let mut p = Publish::new(nonempty_text(rng, 30), bytes(rng, 64));
            p.qos = qos;
            p.retain = rng.gen();
            if qos == QoS::AtLeastOnce {
                p.packet_id = Some(pid(rng));
                p.dup = rng.gen();
            }
            p.properties = props(rng);
            Packet::Publish(p)
        }
        3 => Packet::Puback(Puback {
            packet_id: pid(rng),
            reason_code: if v5 { *[0u8, 0x10, 0x80, 0x83].choose(rng).unwrap() } else { 0 },
            properties: props(rng),
        }),
        4 => Packet::Subscribe(Subscribe {
            packet_id: pid(rng),
            properties: props(rng),
            filters: (0..rng.gen_range(1..4))
                .map(|_| {
                    let mut f = SubscribeFilter::new(nonempty_text(rng, 16), qos01(rng));
                    if v5 {
                        f.no_local = rng.gen();
                        f.retain_as_published = rng.gen();
                        f.retain_handling = rng.gen_range(0..3);
                    }
                    f
                })
                .collect(),
        }),
        5 => Packet::Suback(Suback {
            packet_id: pid(rng),
            properties: props(rng),
            reason_codes: (0..rng.gen_range(1..4)).map(|_| rng.gen()).collect(),
        }),
        6 => Packet::Unsubscribe(Unsubscribe {
            packet_id: pid(rng),
            properties: props(rng),
            filters: (0..rng.gen_range(1..4)).map(|_| nonempty_text(rng, 16)).collect(),
        }),
        7 => Packet::Unsuback(Unsuback {
            packet_id: pid(rng),
            properties: props(rng),
            reason_codes: if v5 {
                (0..rng.gen_range(1..4)).map(|_| rng.gen()).collect()
            } else {
                Vec::new()
            },
        }),
        8 => Packet::Pingreq,
        9 => Packet::Pingresp,
        _ => Packet::Disconnect(Disconnect {
            reason_code: if v5 { rng.gen() } else { 0 },
            properties: props(rng),
        }),
    }
}
