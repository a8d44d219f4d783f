use std::path::{Path, PathBuf};

use super::TransportError;

/// PEM encoded self-signed certificate and its key.
#[derive(Debug, Clone)]
pub struct SelfSigned {
    pub cert_pem: String,
    pub key_pem: String,
}

#[derive(Debug, Clone)]
pub struct SelfSignedFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

/// Generates a self-signed certificate valid for `names` (DNS names or IP
/// literals).
pub fn generate_self_signed(names: &[String]) -> Result<SelfSigned, TransportError> {
    let ck = rcgen::generate_simple_self_signed(names.to_vec())?;
    Ok(SelfSigned {
        cert_pem: ck.cert.pem(),
        key_pem: ck.key_pair.serialize_pem(),
    })
}

/// Writes `cert.pem` and `key.pem` into `dir`. The certificate doubles as
/// its own CA for clients.
pub fn write_self_signed(dir: &Path, names: &[String]) -> Result<SelfSignedFiles, TransportError> {
    std::fs::create_dir_all(dir)?;
    let s = generate_self_signed(names)?;
    let files = SelfSignedFiles {
        cert: dir.join("cert.pem"),
        key: dir.join("key.pem"),
    };
    std::fs::write(&files.cert, s.cert_pem)?;
    std::fs::write(&files.key, s.key_pem)?;
    Ok(files)
}
