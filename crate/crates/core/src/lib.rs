//! A mixed-mode MQTT broker that serves plain TCP and TLS clients side by
//! side and only forwards a message when both the publisher's and the
//! subscriber's connection satisfy the stricter party's declared security
//! requirement.

pub mod broker;
pub mod codec;
pub mod security;
pub mod tools;
pub mod topic;
pub mod transport;
