//! Local certificate authority for intercepting CONNECT tunnels.

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::Path;
use std::sync::Arc;

use chrono::Datelike;
use parking_lot::Mutex;
use rcgen::{
    date_time_ymd, BasicConstraints, CertificateParams, DnType, ExtendedKeyUsagePurpose, IsCa, Issuer, KeyPair,
    KeyUsagePurpose, SanType,
};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};

#[derive(Debug, thiserror::Error)]
pub enum TlsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("certificate error: {0}")]
    Cert(#[from] rcgen::Error),
    #[error("tls configuration: {0}")]
    Rustls(#[from] rustls::Error),
    #[error("{0}")]
    Pem(String),
}

pub fn crypto_provider() -> Arc<rustls::crypto::CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// PEM-encoded CA certificate and private key.
#[derive(Debug, Clone)]
pub struct CaMaterial {
    pub cert_pem: String,
    pub key_pem: String,
}

impl CaMaterial {
    pub fn generate(common_name: &str) -> Result<Self, TlsError> {
        let key = KeyPair::generate()?;
        let mut params = CertificateParams::default();
        params.distinguished_name.push(DnType::CommonName, common_name);
        params.distinguished_name.push(DnType::OrganizationName, "selfheal");
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params.key_usages = vec![KeyUsagePurpose::KeyCertSign, KeyUsagePurpose::CrlSign, KeyUsagePurpose::DigitalSignature];
        let year = chrono::Utc::now().year();
        params.not_before = date_time_ymd(year - 1, 1, 1);
        params.not_after = date_time_ymd(year + 10, 1, 1);
        let cert = params.self_signed(&key)?;
        Ok(CaMaterial { cert_pem: cert.pem(), key_pem: key.serialize_pem() })
    }

    pub fn load(cert_path: &Path, key_path: &Path) -> Result<Self, TlsError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TlsError::Io { path: p.display().to_string(), source })
        };
        Ok(CaMaterial { cert_pem: read(cert_path)?, key_pem: read(key_path)? })
    }

    pub fn write(&self, cert_path: &Path, key_path: &Path) -> Result<(), TlsError> {
        let write = |p: &Path, text: &str| {
            std::fs::write(p, text).map_err(|source| TlsError::Io { path: p.display().to_string(), source })
        };
        write(cert_path, &self.cert_pem)?;
        write(key_path, &self.key_pem)
    }

    pub fn cert_der(&self) -> Result<CertificateDer<'static>, TlsError> {
        pem_certs(&self.cert_pem)?.into_iter().next().ok_or_else(|| TlsError::Pem("no certificate in CA file".into()))
    }
}

/// Parses every certificate in a PEM bundle.
pub fn pem_certs(pem: &str) -> Result<Vec<CertificateDer<'static>>, TlsError> {
    use rustls::pki_types::pem::PemObject;
    CertificateDer::pem_slice_iter(pem.as_bytes())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| TlsError::Pem(e.to_string()))
}

/// Issues and caches per-host leaf certificates signed by the CA.
pub struct CertAuthority {
    issuer: Issuer<'static, KeyPair>,
    ca_der: CertificateDer<'static>,
    leaf_key: KeyPair,
    cache: Mutex<HashMap<String, Arc<rustls::ServerConfig>>>,
}

impl std::fmt::Debug for CertAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CertAuthority").field("cached_hosts", &self.cache.lock().len()).finish()
    }
}

impl CertAuthority {
    pub fn new(material: &CaMaterial) -> Result<Self, TlsError> {
        let key = KeyPair::from_pem(&material.key_pem)?;
        let issuer = Issuer::from_ca_cert_pem(&material.cert_pem, key)?;
        Ok(CertAuthority {
            issuer,
            ca_der: material.cert_der()?,
            leaf_key: KeyPair::generate()?,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Server configuration presenting a certificate for `host`.
    pub fn server_config(&self, host: &str) -> Result<Arc<rustls::ServerConfig>, TlsError> {
        let host = host.trim_start_matches('[').trim_end_matches(']').to_ascii_lowercase();
        if let Some(config) = self.cache.lock().get(&host) {
            return Ok(config.clone());
        }
        let mut params = CertificateParams::default();
        params.distinguished_name.push(DnType::CommonName, host.as_str());
        params.subject_alt_names = vec![match host.parse::<IpAddr>() {
            Ok(ip) => SanType::IpAddress(ip),
            Err(_) => SanType::DnsName(host.as_str().try_into()?),
        }];
        params.extended_key_usages = vec![ExtendedKeyUsagePurpose::ServerAuth];
        params.use_authority_key_identifier_extension = true;
        let year = chrono::Utc::now().year();
        params.not_before = date_time_ymd(year - 1, 1, 1);
        params.not_after = date_time_ymd(year + 1, 12, 31);
        let leaf = params.signed_by(&self.leaf_key, &self.issuer)?;
        let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.leaf_key.serialize_der()));
        let mut config = rustls::ServerConfig::builder_with_provider(crypto_provider())
            .with_safe_default_protocol_versions()?
            .with_no_client_auth()
            .with_single_cert(vec![leaf.der().clone(), self.ca_der.clone()], key)?;
        config.alpn_protocols = vec![b"http/1.1".to_vec()];
        let config = Arc::new(config);
        self.cache.lock().insert(host, config.clone());
        Ok(config)
    }
}

/// Client configuration trusting the public web roots plus `extra` roots.
pub fn client_config(extra: &[CertificateDer<'static>]) -> Result<rustls::ClientConfig, TlsError> {
    let mut roots = rustls::RootCertStore { roots: webpki_roots::TLS_SERVER_ROOTS.to_vec() };
    for cert in extra {
        roots.add(cert.clone())?;
    }
    let config = rustls::ClientConfig::builder_with_provider(crypto_provider())
        .with_safe_default_protocol_versions()?
        .with_root_certificates(roots)
        .with_no_client_auth();
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_certificates_are_cached_per_host() {
        let ca = CertAuthority::new(&CaMaterial::generate("test ca").unwrap()).unwrap();
        let a = ca.server_config("Shop.Test").unwrap();
        let b = ca.server_config("shop.test").unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        ca.server_config("127.0.0.1").unwrap();
        assert_eq!(ca.cache.lock().len(), 2);
    }

    #[test]
    fn material_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = CaMaterial::generate("x").unwrap();
        let (c, k) = (dir.path().join("ca.pem"), dir.path().join("ca.key"));
        m.write(&c, &k).unwrap();
        let loaded = CaMaterial::load(&c, &k).unwrap();
        assert_eq!(loaded.cert_der().unwrap(), m.cert_der().unwrap());
        CertAuthority::new(&loaded).unwrap();
    }
}
