use std::path::Path;
use std::sync::Arc;

use rustls::crypto::{ring, CryptoProvider};
use rustls::server::{NoServerSessionStorage, WebPkiClientVerifier};
use rustls::{RootCertStore, ServerConfig, SupportedProtocolVersion};
use rustls_pki_types::pem::PemObject;
use rustls_pki_types::{CertificateDer, PrivateKeyDer};

use super::{TlsMinVersion, TlsSettings, TransportError};

pub(crate) fn load_certs(path: &Path) -> Result<Vec<CertificateDer<'static>>, TransportError> {
    let pem_err = |reason: String| TransportError::Pem {
        path: path.to_owned(),
        reason,
    };
    let certs = CertificateDer::pem_file_iter(path)
        .map_err(|e| pem_err(e.to_string()))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| pem_err(e.to_string()))?;
    if certs.is_empty() {
        return Err(pem_err("no certificates found".into()));
    }
    Ok(certs)
}

fn load_key(path: &Path) -> Result<PrivateKeyDer<'static>, TransportError> {
    PrivateKeyDer::from_pem_file(path).map_err(|e| TransportError::Pem {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

/// Names of the suites the built-in provider supports.
pub fn cipher_suite_names() -> Vec<String> {
    ring::default_provider()
        .cipher_suites
        .iter()
        .map(|s| format!("{:?}", s.suite()))
        .collect()
}

fn versions(min: TlsMinVersion) -> &'static [&'static SupportedProtocolVersion] {
    static BOTH: &[&SupportedProtocolVersion] = &[&rustls::version::TLS13, &rustls::version::TLS12];
    static ONLY13: &[&SupportedProtocolVersion] = &[&rustls::version::TLS13];
    match min {
        TlsMinVersion::Tls12 => BOTH,
        TlsMinVersion::Tls13 => ONLY13,
    }
}

fn provider(settings: &TlsSettings) -> Result<CryptoProvider, TransportError> {
    let mut provider = ring::default_provider();
    if let Some(names) = &settings.ciphersuites {
        let all = provider.cipher_suites.clone();
        let mut chosen = Vec::new();
        for name in names {
            let suite = all
                .iter()
                .find(|s| format!("{:?}", s.suite()).eq_ignore_ascii_case(name))
                .ok_or_else(|| TransportError::UnknownCipherSuite(name.clone()))?;
            chosen.push(*suite);
        }
        provider.cipher_suites = chosen;
    }
    let usable = provider.cipher_suites.iter().any(|s| {
        versions(settings.min_version)
            .iter()
            .any(|v| s.version() == *v)
    });
    if !usable {
        return Err(TransportError::NoUsableCipherSuite);
    }
    Ok(provider)
}

/// Builds the rustls server configuration for a TLS listener. Session
/// resumption is disabled so every handshake is a full one.
pub fn build_server_config(settings: &TlsSettings) -> Result<Arc<ServerConfig>, TransportError> {
    let provider = Arc::new(provider(settings)?);
    let certs = load_certs(&settings.cert)?;
    let key = load_key(&settings.key)?;
    let builder = ServerConfig::builder_with_provider(provider.clone())
        .with_protocol_versions(versions(settings.min_version))?;
    let builder = match &settings.client_ca {
        None => builder.with_no_client_auth(),
        Some(ca) => {
            let mut roots = RootCertStore::empty();
            for c in load_certs(ca)? {
                roots.add(c)?;
            }
            let verifier = WebPkiClientVerifier::builder_with_provider(Arc::new(roots), provider)
                .build()
                .map_err(|e| TransportError::ClientVerifier(e.to_string()))?;
            builder.with_client_cert_verifier(verifier)
        }
    };
    let mut config = builder.with_single_cert(certs, key)?;
    config.session_storage = Arc::new(NoServerSessionStorage {});
    config.send_tls13_tickets = 0;
    Ok(Arc::new(config))
}
