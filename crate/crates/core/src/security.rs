//! Security levels, enforcement intent and the forwarding decision.
//!
//! A client's connection has a [`SecurityLevel`]. Through an
//! [`EnforcementFlag`] it either asks the broker to uphold that level towards
//! every peer it exchanges messages with, or waives it. The broker forwards
//! a message only if each side's connection meets the other side's required
//! level.
//!
//! The decision only ever compares levels, so adding a level means adding an
//! enum variant and nothing else.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::properties::EXPERIMENTAL_SECURITY_LEVEL;
use crate::codec::{Properties, PropertyValue};

/// User property key carrying the enforcement flag.
pub const SECURITY_PROPERTY_KEY: &str = "s";
pub const ENFORCE_VALUE: &str = "1";
pub const RELAX_VALUE: &str = "0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecurityLevel {
    /// Plain TCP.
    NonSecured,
    /// TLS.
    Secured,
}

impl SecurityLevel {
    pub const ALL: [SecurityLevel; 2] = [SecurityLevel::NonSecured, SecurityLevel::Secured];

    pub fn lowest() -> Self {
        SecurityLevel::NonSecured
    }
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityLevel::NonSecured => "non-secured",
            SecurityLevel::Secured => "secured",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnforcementFlag {
    /// Uphold the client's own level beyond the broker.
    Enforce,
    /// Waive it.
    Relax,
}

impl EnforcementFlag {
    pub const ALL: [EnforcementFlag; 2] = [EnforcementFlag::Enforce, EnforcementFlag::Relax];

    pub fn property_value(self) -> &'static str {
        match self {
            EnforcementFlag::Enforce => ENFORCE_VALUE,
            EnforcementFlag::Relax => RELAX_VALUE,
        }
    }

    /// The `("s", "0"|"1")` user property signalling this flag.
    pub fn user_property(self) -> crate::codec::Property {
        crate::codec::Property::user(SECURITY_PROPERTY_KEY, self.property_value())
    }
}

impl fmt::Display for EnforcementFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnforcementFlag::Enforce => "enforce",
            EnforcementFlag::Relax => "relax",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagSource {
    ExplicitConnect,
    ExplicitMessage,
    InferredLegacy,
}

/// How to treat clients that never signal a flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LegacyPolicy {
    /// TLS clients are assumed to enforce, plain clients to relax.
    #[default]
    InferFromTransport,
    /// Every silent client relaxes.
    AlwaysRelaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientSecurityProfile {
    transport_level: SecurityLevel,
    flag: EnforcementFlag,
    flag_source: FlagSource,
    required_level: SecurityLevel,
}

impl ClientSecurityProfile {
    pub fn new(transport_level: SecurityLevel, flag: EnforcementFlag, flag_source: FlagSource) -> Self {
        let required_level = match flag {
            EnforcementFlag::Enforce => transport_level,
            EnforcementFlag::Relax => SecurityLevel::lowest(),
        };
        Self {
            transport_level,
            flag,
            flag_source,
            required_level,
        }
    }

    pub fn transport_level(&self) -> SecurityLevel {
        self.transport_level
    }

    pub fn flag(&self) -> EnforcementFlag {
        self.flag
    }

    pub fn flag_source(&self) -> FlagSource {
        self.flag_source
    }

    pub fn required_level(&self) -> SecurityLevel {
        self.required_level
    }

    /// Same connection, different flag. The transport level never changes.
    pub fn with_flag(&self, flag: EnforcementFlag, source: FlagSource) -> Self {
        Self::new(self.transport_level, flag, source)
    }

    /// True when the client asked to enforce but sits at the lowest level,
    /// which makes the request a no-op.
    pub fn is_inert_enforce(&self) -> bool {
        self.flag == EnforcementFlag::Enforce && self.transport_level == SecurityLevel::lowest()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    PublisherEnforces,
    SubscriberEnforces,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::PublisherEnforces => "publisher-enforces",
            DenyReason::SubscriberEnforces => "subscriber-enforces",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "kebab-case")]
pub enum DeliveryDecision {
    Deliver,
    Deny(DenyReason),
}

impl DeliveryDecision {
    pub fn is_deliver(&self) -> bool {
        matches!(self, DeliveryDecision::Deliver)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecurityPropertyError {
    #[error("security property value {0:?} is neither \"0\" nor \"1\"")]
    InvalidValue(String),
    #[error("experimental security level byte {0} is neither 0 nor 1")]
    InvalidLevelByte(u8),
}

/// Reads the enforcement flag from a property list.
///
/// The first `"s"` user property decides; later ones are ignored. When no
/// user property is present, the experimental one-byte property is consulted
/// (it only appears if the decoder was configured to accept it).
pub fn parse_security_property(
    properties: &Properties,
) -> Result<Option<EnforcementFlag>, SecurityPropertyError> {
    if let Some((_, value)) = properties
        .user_properties()
        .find(|(k, _)| *k == SECURITY_PROPERTY_KEY)
    {
        return match value {
            ENFORCE_VALUE => Ok(Some(EnforcementFlag::Enforce)),
            RELAX_VALUE => Ok(Some(EnforcementFlag::Relax)),
            other => Err(SecurityPropertyError::InvalidValue(other.to_owned())),
        };
    }
    match properties.get(EXPERIMENTAL_SECURITY_LEVEL) {
        Some(PropertyValue::Byte(1)) => Ok(Some(EnforcementFlag::Enforce)),
        Some(PropertyValue::Byte(0)) => Ok(Some(EnforcementFlag::Relax)),
        Some(PropertyValue::Byte(b)) => Err(SecurityPropertyError::InvalidLevelByte(*b)),
        _ => Ok(None),
    }
}

/// Builds the connection-wide profile of a client.
///
/// An explicit flag from CONNECT wins. Otherwise the legacy policy decides.
pub fn derive_profile(
    transport_level: SecurityLevel,
    explicit: Option<EnforcementFlag>,
    policy: LegacyPolicy,
) -> ClientSecurityProfile {
    match explicit {
        Some(flag) => ClientSecurityProfile::new(transport_level, flag, FlagSource::ExplicitConnect),
        None => {
            let flag = match (policy, transport_level) {
                (LegacyPolicy::AlwaysRelaxed, _) => EnforcementFlag::Relax,
                (LegacyPolicy::InferFromTransport, SecurityLevel::NonSecured) => {
                    EnforcementFlag::Relax
                }
                (LegacyPolicy::InferFromTransport, _) => EnforcementFlag::Enforce,
            };
            ClientSecurityProfile::new(transport_level, flag, FlagSource::InferredLegacy)
        }
    }
}

/// Decides whether a message from `publisher` may be written to `subscriber`.
///
/// Each side's connection must reach the other side's required level. When
/// both requirements are violated the publisher's is reported.
pub fn decide_delivery(
    publisher: &ClientSecurityProfile,
    subscriber: &ClientSecurityProfile,
) -> DeliveryDecision {
    if subscriber.transport_level < publisher.required_level {
        DeliveryDecision::Deny(DenyReason::PublisherEnforces)
    } else if publisher.transport_level < subscriber.required_level {
        DeliveryDecision::Deny(DenyReason::SubscriberEnforces)
    } else {
        DeliveryDecision::Deliver
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TruthRow {
    pub publisher_level: SecurityLevel,
    pub publisher_flag: EnforcementFlag,
    pub subscriber_level: SecurityLevel,
    pub subscriber_flag: EnforcementFlag,
    pub decision: DeliveryDecision,
}

/// Every (level, flag) pairing of publisher and subscriber with its outcome.
pub fn decision_truth_table() -> Vec<TruthRow> {
    let mut rows = Vec::with_capacity(16);
    for publisher_level in SecurityLevel::ALL {
        for publisher_flag in EnforcementFlag::ALL {
            for subscriber_level in SecurityLevel::ALL {
                for subscriber_flag in EnforcementFlag::ALL {
                    let p = ClientSecurityProfile::new(
                        publisher_level,
                        publisher_flag,
                        FlagSource::ExplicitConnect,
                    );
                    let s = ClientSecurityProfile::new(
                        subscriber_level,
                        subscriber_flag,
                        FlagSource::ExplicitConnect,
                    );
                    rows.push(TruthRow {
                        publisher_level,
                        publisher_flag,
                        subscriber_level,
                        subscriber_flag,
                        decision: decide_delivery(&p, &s),
                    });
                }
            }
        }
    }
    rows
}
