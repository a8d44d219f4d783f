//! Topic names, topic filters and the subscription table.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::codec::QoS;
use crate::security::EnforcementFlag;

const MULTI_LEVEL: &str = "#";
const SINGLE_LEVEL: &str = "+";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic exceeds 65535 bytes")]
    TooLong,
    #[error("topic contains U+0000")]
    NullCharacter,
    #[error("topic name contains a wildcard")]
    WildcardInName,
    #[error("'#' must be the last level and alone in it")]
    MisplacedMultiLevel,
    #[error("'+' must be alone in its level")]
    MisplacedSingleLevel,
}

fn check_common(s: &str) -> Result<(), TopicError> {
    if s.is_empty() {
        return Err(TopicError::Empty);
    }
    if s.len() > u16::MAX as usize {
        return Err(TopicError::TooLong);
    }
    if s.contains('\0') {
        return Err(TopicError::NullCharacter);
    }
    Ok(())
}

/// A topic a message is published to. Never contains wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> std::str::Split<'_, char> {
        self.0.split('/')
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A subscription pattern, possibly with `+` and `#` wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicFilter(String);

impl TopicFilter {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> std::str::Split<'_, char> {
        self.0.split('/')
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn validate_topic_name(s: &str) -> Result<TopicName, TopicError> {
    check_common(s)?;
    if s.contains(['+', '#']) {
        return Err(TopicError::WildcardInName);
    }
    Ok(TopicName(s.to_owned()))
}

pub fn validate_topic_filter(s: &str) -> Result<TopicFilter, TopicError> {
    check_common(s)?;
    let mut levels = s.split('/').peekable();
    while let Some(level) = levels.next() {
        if level.contains('#') && (level != MULTI_LEVEL || levels.peek().is_some()) {
            return Err(TopicError::MisplacedMultiLevel);
        }
        if level.contains('+') && level != SINGLE_LEVEL {
            return Err(TopicError::MisplacedSingleLevel);
        }
    }
    Ok(TopicFilter(s.to_owned()))
}

/// MQTT level-by-level match. Wildcards in the first level never match a
/// topic starting with `$`.
pub fn matches(filter: &TopicFilter, topic: &TopicName) -> bool {
    let mut f = filter.levels();
    let mut t = topic.levels();

    if topic.as_str().starts_with('$')
        && filter.as_str().starts_with(['+', '#'])
    {
        return false;
    }

    loop {
        match (f.next(), t.next()) {
            (Some(MULTI_LEVEL), _) => return true,
            (Some(SINGLE_LEVEL), Some(_)) => {}
            (Some(fl), Some(tl)) if fl == tl => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub client_id: String,
    pub filter: TopicFilter,
    pub granted_qos: QoS,
    /// Per-subscription flag; `None` means the session's flag applies.
    pub override_flag: Option<EnforcementFlag>,
}

/// Strictest of two override flags. `None` defers to the session flag, which
/// may be either value, so it only yields to an explicit `Enforce`.
fn strictest(a: Option<EnforcementFlag>, b: Option<EnforcementFlag>) -> Option<EnforcementFlag> {
    use EnforcementFlag::*;
    match (a, b) {
        (Some(Enforce), _) | (_, Some(Enforce)) => Some(Enforce),
        (None, _) | (_, None) => None,
        _ => Some(Relax),
    }
}

/// Merges the subscriptions of one client that all match the same topic:
/// highest QoS, strictest flag.
pub fn merge_client_matches<I>(matches: I) -> Vec<Subscription>
where
    I: IntoIterator<Item = Subscription>,
{
    let mut by_client: HashMap<String, Subscription> = HashMap::new();
    for s in matches {
        match by_client.get_mut(&s.client_id) {
            Some(existing) => {
                if s.granted_qos > existing.granted_qos {
                    existing.granted_qos = s.granted_qos;
                    existing.filter = s.filter.clone();
                }
                existing.override_flag = strictest(existing.override_flag, s.override_flag);
            }
            None => {
                by_client.insert(s.client_id.clone(), s);
            }
        }
    }
    let mut out: Vec<_> = by_client.into_values().collect();
    out.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    out
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
struct Node {
    children: HashMap<String, Node>,
    subscribers: HashMap<String, Subscription>,
}

impl Node {
    fn is_empty(&self) -> bool {
        self.children.is_empty() && self.subscribers.is_empty()
    }

    fn collect<'a>(&'a self, levels: &[&str], first: bool, out: &mut Vec<&'a Subscription>) {
        let Some((level, rest)) = levels.split_first() else {
            out.extend(self.subscribers.values());
            // "a/#" also matches "a".
            if let Some(hash) = self.children.get(MULTI_LEVEL) {
                out.extend(hash.subscribers.values());
            }
            return;
        };
        if !(first && level.starts_with('$')) {
            if let Some(hash) = self.children.get(MULTI_LEVEL) {
                out.extend(hash.subscribers.values());
            }
            if let Some(plus) = self.children.get(SINGLE_LEVEL) {
                plus.collect(rest, false, out);
            }
        }
        if let Some(child) = self.children.get(*level) {
            child.collect(rest, false, out);
        }
    }

    fn remove(&mut self, levels: &[&str], client_id: &str) -> Option<Subscription> {
        match levels.split_first() {
            None => self.subscribers.remove(client_id),
            Some((level, rest)) => {
                let child = self.children.get_mut(*level)?;
                let removed = child.remove(rest, client_id);
                if child.is_empty() {
                    self.children.remove(*level);
                }
                removed
            }
        }
    }
}

/// Subscriptions keyed by topic level. At most one entry per
/// (client, filter) pair.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SubscriptionTable {
    root: Node,
    by_client: HashMap<String, HashSet<TopicFilter>>,
}

impl SubscriptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_client.values().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_client.is_empty()
    }

    /// Inserts `sub`, returning the entry it replaced, if any.
    pub fn subscribe(&mut self, sub: Subscription) -> Option<Subscription> {
        let mut node = &mut self.root;
        for level in sub.filter.levels() {
            node = node.children.entry(level.to_owned()).or_default();
        }
        self.by_client
            .entry(sub.client_id.clone())
            .or_default()
            .insert(sub.filter.clone());
        node.subscribers.insert(sub.client_id.clone(), sub)
    }

    /// Removes one entry. `None` means there was nothing to remove.
    pub fn unsubscribe(&mut self, client_id: &str, filter: &TopicFilter) -> Option<Subscription> {
        let levels: Vec<&str> = filter.levels().collect();
        let removed = self.root.remove(&levels, client_id)?;
        if let Some(filters) = self.by_client.get_mut(client_id) {
            filters.remove(filter);
            if filters.is_empty() {
                self.by_client.remove(client_id);
            }
        }
        Some(removed)
    }

    /// Drops every subscription of `client_id`, returning how many there were.
    pub fn remove_client(&mut self, client_id: &str) -> usize {
        let Some(filters) = self.by_client.remove(client_id) else {
            return 0;
        };
        for filter in &filters {
            let levels: Vec<&str> = filter.levels().collect();
            self.root.remove(&levels, client_id);
        }
        filters.len()
    }

    pub fn client_filters(&self, client_id: &str) -> Vec<TopicFilter> {
        let mut v: Vec<_> = self
            .by_client
            .get(client_id)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default();
        v.sort();
        v
    }

    /// All subscriptions matching `topic`, one per client.
    pub fn match_subscribers(&self, topic: &TopicName) -> Vec<Subscription> {
        let levels: Vec<&str> = topic.levels().collect();
        let mut hits = Vec::new();
        self.root.collect(&levels, true, &mut hits);
        merge_client_matches(hits.into_iter().cloned())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Subscription> {
        let mut stack = vec![&self.root];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.values());
            Some(node.subscribers.values())
        })
        .flatten()
    }
}
