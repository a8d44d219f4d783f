//! Broker behaviour over real sockets.

mod common;

use std::time::Duration;

use common::{Harness, Plain, Tls};
use mixmq::codec::{
    encode_packet_for, reason, Connect, Packet, Property, ProtocolVersion, Publish, QoS,
};
use mixmq::security::EnforcementFlag::{Enforce, Relax};
use mixmq::tools::bench::{bench_connect, bench_forward_with, parse_csv_samples, BenchMode};
use mixmq::tools::cli::{ConnArgs, PubArgs, SubArgs};
use mixmq::tools::client::open_stream;
use mixmq::tools::{run_pub, run_sub, summary_stats, Client, ClientError, TlsClientOptions};
use mixmq::transport::{ListenerKind, TlsMinVersion};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

use ProtocolVersion::{V311, V5};

#[tokio::test]
async fn legacy_subscriber_gets_publish_without_properties() {
    let h = Harness::start(|_| {}).await;
    let mut sub = h.client(Plain, "old", V311, None).await;
    sub.subscribe("t", QoS::AtLeastOnce, None).await.unwrap();
    let mut publ = h.client(Plain, "new", V5, Some(Relax)).await;
    publ.publish("t", b"hello", QoS::AtLeastOnce, Some(Relax))
        .await
        .unwrap();
    let m = sub.next_message(Duration::from_secs(5)).await.unwrap().unwrap();
    assert_eq!(m.payload, b"hello");
    assert!(m.properties.is_empty());
    assert_eq!(m.qos, QoS::AtLeastOnce);
}

#[tokio::test]
async fn v5_subscriber_sees_original_user_properties() {
    let h = Harness::start(|_| {}).await;
    let mut sub = h.client(Tls, "s", V5, Some(Relax)).await;
    sub.subscribe("t", QoS::AtMostOnce, None).await.unwrap();
    let mut publ = h.client(Tls, "p", V5, None).await;
    publ.publish("t", &[0, 159, 255], QoS::AtLeastOnce, Some(Enforce))
        .await
        .unwrap();
    let m = sub.next_message(Duration::from_secs(5)).await.unwrap().unwrap();
    assert_eq!(m.payload, vec![0, 159, 255]);
    assert_eq!(m.qos, QoS::AtMostOnce);
    assert_eq!(m.properties.user_properties().collect::<Vec<_>>(), vec![("s", "1")]);
}

#[tokio::test]
async fn puback_even_when_every_subscriber_is_denied() {
    let h = Harness::start(|_| {}).await;
    let mut sub = h.client(Plain, "s", V5, None).await;
    sub.subscribe("#", QoS::AtLeastOnce, None).await.unwrap();
    let mut publ = h.client(Tls, "p", V5, Some(Enforce)).await;
    let ack = publ
        .publish("x", b"secret", QoS::AtLeastOnce, None)
        .await
        .unwrap()
        .unwrap();
    assert_eq!(ack.reason_code, reason::SUCCESS);
    assert!(sub.next_message(Duration::from_millis(300)).await.unwrap().is_none());
    assert_eq!(h.local.broker().metrics().denials, 1);
}

#[tokio::test]
async fn keepalive_expiry_closes_silent_session() {
    let h = Harness::start(|_| {}).await;
    let mut opts = h.options(Plain, "quiet", V5, None);
    opts.keep_alive_s = 2;
    let (mut c, _) = Client::connect(&opts).await.unwrap();
    c.subscribe("k", QoS::AtMostOnce, None).await.unwrap();
    let started = std::time::Instant::now();
    match c.recv_within(Duration::from_secs(6)).await {
        Ok(Packet::Disconnect(d)) => assert_eq!(d.reason_code, reason::KEEP_ALIVE_TIMEOUT),
        other => panic!("expected DISCONNECT, got {other:?}"),
    }
    let waited = started.elapsed();
    assert!(waited >= Duration::from_millis(2900), "{waited:?}");
    assert!(!h.local.broker().is_connected("quiet"));
    assert!(h.local.broker().subscriptions().is_empty());
}

#[tokio::test]
async fn pings_keep_the_session_alive() {
    let h = Harness::start(|_| {}).await;
    let mut opts = h.options(Plain, "pinger", V5, None);
    opts.keep_alive_s = 1;
    let (mut c, _) = Client::connect(&opts).await.unwrap();
    for _ in 0..4 {
        tokio::time::sleep(Duration::from_millis(700)).await;
        c.ping().await.unwrap();
    }
    assert!(h.local.broker().is_connected("pinger"));
}

#[tokio::test]
async fn takeover_disconnects_the_first_connection() {
    let h = Harness::start(|_| {}).await;
    let mut first = h.client(Plain, "dup", V5, None).await;
    let _second = h.client(Tls, "dup", V5, None).await;
    match first.recv_within(Duration::from_secs(5)).await {
        Ok(Packet::Disconnect(d)) => assert_eq!(d.reason_code, reason::SESSION_TAKEN_OVER),
        other => panic!("expected DISCONNECT, got {other:?}"),
    }
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(h.local.broker().session_count(), 1);
    assert!(h.local.broker().is_connected("dup"));
}

#[tokio::test]
async fn unsupported_protocol_level_gets_v311_refusal() {
    let h = Harness::start(|_| {}).await;
    let mut s = open_stream(&h.local.plain_addr, None).await.unwrap();
    let mut bytes = encode_packet_for(
        &Packet::Connect(Connect::new(V311, "c")),
        V311,
    )
    .unwrap();
    bytes[8] = 3;
    s.write_all(&bytes).await.unwrap();
    let mut buf = [0u8; 4];
    s.read_exact(&mut buf).await.unwrap();
    assert_eq!(buf, [0x20, 0x02, 0x00, reason::v311::UNACCEPTABLE_PROTOCOL_VERSION]);
}

#[tokio::test]
async fn invalid_security_value_on_connect_is_refused() {
    let h = Harness::start(|_| {}).await;
    let mut s = open_stream(&h.local.plain_addr, None).await.unwrap();
    let mut c = Connect::new(V5, "c");
    c.properties.push(Property::user("s", "on"));
    s.write_all(&encode_packet_for(&Packet::Connect(c), V5).unwrap())
        .await
        .unwrap();
    let mut buf = [0u8; 5];
    s.read_exact(&mut buf).await.unwrap();
    // Empty property block after the reason code.
    assert_eq!(buf, [0x20, 0x03, 0x00, reason::IMPLEMENTATION_SPECIFIC_ERROR, 0x00]);
}

#[tokio::test]
async fn protocol_violations_disconnect_with_reason() {
    let h = Harness::start(|_| {}).await;

    let mut c = h.client(Plain, "retainer", V5, None).await;
    let mut p = Publish::new("t", b"x".to_vec());
    p.retain = true;
    c.send(&Packet::Publish(p)).await.unwrap();
    match c.recv().await {
        Ok(Packet::Disconnect(d)) => assert_eq!(d.reason_code, reason::RETAIN_NOT_SUPPORTED),
        other => panic!("{other:?}"),
    }

    let mut c = h.client(Plain, "qos2", V5, None).await;
    // QoS 2 PUBLISH, topic "t", packet id 1.
    c.send_raw(&[0x34, 0x06, 0x00, 0x01, b't', 0x00, 0x01, 0x00])
        .await
        .unwrap();
    match c.recv().await {
        Ok(Packet::Disconnect(d)) => assert_eq!(d.reason_code, reason::QOS_NOT_SUPPORTED),
        other => panic!("{other:?}"),
    }

    let mut c = h.client(Plain, "wild", V5, None).await;
    c.send(&Packet::Publish(Publish::new("a/+", b"x".to_vec())))
        .await
        .unwrap();
    match c.recv().await {
        Ok(Packet::Disconnect(d)) => assert_eq!(d.reason_code, reason::TOPIC_NAME_INVALID),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn invalid_flag_on_publish_is_refused_with_puback_code() {
    let h = Harness::start(|_| {}).await;
    let mut sub = h.client(Plain, "s", V5, None).await;
    sub.subscribe("t", QoS::AtMostOnce, None).await.unwrap();
    let mut c = h.client(Plain, "p", V5, None).await;
    let mut p = Publish::new("t", b"x".to_vec());
    p.qos = QoS::AtLeastOnce;
    p.packet_id = Some(9);
    p.properties.push(Property::user("s", "maybe"));
    c.send(&Packet::Publish(p)).await.unwrap();
    match c.recv().await {
        Ok(Packet::Puback(a)) => {
            assert_eq!(a.reason_code, reason::IMPLEMENTATION_SPECIFIC_ERROR)
        }
        other => panic!("{other:?}"),
    }
    assert!(sub.next_message(Duration::from_millis(200)).await.unwrap().is_none());
}

#[tokio::test]
async fn raw_mqtt_on_tls_port_never_reaches_the_broker() {
    let h = Harness::start(|_| {}).await;
    let addr = h.local.tls_addr.clone().unwrap();
    let mut s = open_stream(&addr, None).await.unwrap();
    let bytes = encode_packet_for(&Packet::Connect(Connect::new(V5, "raw")), V5).unwrap();
    let _ = s.write_all(&bytes).await;
    let mut buf = Vec::new();
    let _ = tokio::time::timeout(Duration::from_secs(5), s.read_to_end(&mut buf)).await;
    assert!(!buf.starts_with(&[0x20]), "got a CONNACK over plaintext");
    assert!(!h.local.broker().is_connected("raw"));
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(h.local.running.handshake_failures(), 1);
}

#[tokio::test]
async fn tls_version_floor_rejects_older_clients() {
    let h = Harness::start(|c| {
        for l in &mut c.listeners {
            if let ListenerKind::Tls(t) = &mut l.kind {
                t.min_version = TlsMinVersion::Tls13;
            }
        }
    })
    .await;
    let mut opts = h.options(Tls, "old-tls", V5, None);
    let mut tls = opts.tls.clone().unwrap();
    tls.tls12_only = true;
    opts.tls = Some(tls);
    assert!(matches!(Client::connect(&opts).await, Err(ClientError::Io(_))));

    let ok = h.options(Tls, "new-tls", V5, None);
    Client::connect(&ok).await.unwrap();
}

#[tokio::test]
async fn untrusted_certificate_fails_unless_insecure() {
    let h = Harness::start(|_| {}).await;
    let mut opts = h.options(Tls, "c", V5, None);
    opts.tls = Some(TlsClientOptions {
        ca_file: None,
        insecure: false,
        server_name: "localhost".into(),
        tls12_only: false,
    });
    assert!(Client::connect(&opts).await.is_err());
    opts.tls.as_mut().unwrap().insecure = true;
    Client::connect(&opts).await.unwrap();
}

fn conn_args(h: &Harness, tls: bool) -> ConnArgs {
    let addr = if tls {
        h.local.tls_addr.clone().unwrap()
    } else {
        h.local.plain_addr.clone()
    };
    let port = addr.rsplit(':').next().unwrap().parse().unwrap();
    ConnArgs {
        host: "127.0.0.1".into(),
        port: Some(port),
        tls,
        plain: !tls,
        ca_file: h.local.tls.as_ref().and_then(|t| t.ca_file.clone()),
        insecure: false,
        server_name: "localhost".into(),
        v4: false,
        client_id: String::new(),
        enforce: false,
        relax: false,
        at_connect: false,
        keep_alive: 30,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cli_pub_sub_roundtrip_is_byte_exact() {
    let h = Harness::start(|_| {}).await;
    let mut sub_conn = conn_args(&h, true);
    sub_conn.enforce = true;
    let sub = SubArgs {
        conn: sub_conn,
        filter: vec!["home/#".into()],
        qos: QoS::AtLeastOnce,
        count: Some(1),
        timeout: Some(5.0),
    };
    let handle = tokio::spawn(async move {
        let mut out = Vec::new();
        let n = run_sub(&sub, &mut out).await.unwrap();
        (n, String::from_utf8(out).unwrap())
    });
    tokio::time::sleep(Duration::from_millis(300)).await;

    // The plain publisher is withheld from the enforcing TLS subscriber.
    let mut plain = conn_args(&h, false);
    plain.client_id = "plain-pub".into();
    run_pub(&PubArgs {
        conn: plain,
        topic: "home/kitchen/temperature".into(),
        payload: "19.0".into(),
        qos: QoS::AtLeastOnce,
    })
    .await
    .unwrap();

    let mut secured = conn_args(&h, true);
    secured.enforce = true;
    let payload = "21.5 °C, ünïcode";
    run_pub(&PubArgs {
        conn: secured,
        topic: "home/kitchen/temperature".into(),
        payload: payload.into(),
        qos: QoS::AtLeastOnce,
    })
    .await
    .unwrap();

    let (n, out) = handle.await.unwrap();
    assert_eq!(n, 1);
    let fields: Vec<&str> = out.trim_end().split('\t').collect();
    assert_eq!(fields[1..], ["home/kitchen/temperature", payload]);
}

#[tokio::test]
async fn cli_pub_reports_connection_failure() {
    let h = Harness::start(|_| {}).await;
    let mut args = conn_args(&h, false);
    args.port = Some(1);
    let r = run_pub(&PubArgs {
        conn: args,
        topic: "t".into(),
        payload: "x".into(),
        qos: QoS::AtMostOnce,
    })
    .await;
    assert!(r.is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn connect_bench_csv_matches_summary() {
    let h = Harness::start(|_| {}).await;
    let target = h.local.connect_target().unwrap();
    let r = bench_connect(&target, 20, BenchMode::Tls).await;
    let csv = r.to_csv();
    assert_eq!(csv.lines().count() - 1, r.requested - r.failures);
    let back = parse_csv_samples(&csv);
    assert_eq!(summary_stats(&back).ok(), r.summary);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn forward_bench_without_subscribers_has_no_samples() {
    let r = bench_forward_with(1, true, false).await.unwrap();
    assert!(r.samples_ms.is_empty());
    assert_eq!(r.failures, 0);
    assert!(r.summary.is_none());
    assert!(r.notes.iter().any(|n| n.contains("zero deliveries")));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn forward_bench_with_subscriber_collects_every_run() {
    let r = bench_forward_with(25, false, true).await.unwrap();
    assert_eq!(r.samples_ms.len(), 25);
}
