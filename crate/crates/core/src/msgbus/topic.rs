//! MQTT topic names and filters.

use std::fmt;

use super::BusError;

/// A concrete topic name: `/`-separated UTF-8 levels, no wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    pub fn new(s: impl Into<String>) -> Result<Self, BusError> {
        let s = s.into();
        if s.is_empty() {
            return Err(BusError::InvalidTopic { topic: s, reason: "empty topic" });
        }
        if s.contains(['+', '#']) {
            return Err(BusError::InvalidTopic { topic: s, reason: "wildcard in topic name" });
        }
        if s.contains('\0') {
            return Err(BusError::InvalidTopic { topic: s, reason: "NUL character" });
        }
        Ok(Topic(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn levels(&self) -> std::str::Split<'_, char> {
        self.0.split('/')
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Topic {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Level {
    Exact(String),
    Single,
    Multi,
}

/// A subscription filter, validated once and matched many times.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    raw: String,
    levels: Vec<Level>,
}

impl TopicFilter {
    pub fn new(s: impl Into<String>) -> Result<Self, BusError> {
        let raw = s.into();
        if raw.is_empty() {
            return Err(BusError::InvalidFilter { filter: raw, reason: "empty filter" });
        }
        let parts: Vec<&str> = raw.split('/').collect();
        let mut levels = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let level = match *part {
                "+" => Level::Single,
                "#" if i + 1 == parts.len() => Level::Multi,
                "#" => {
                    return Err(BusError::InvalidFilter { filter: raw.clone(), reason: "`#` must be the last level" })
                }
                p if p.contains(['+', '#']) => {
                    return Err(BusError::InvalidFilter {
                        filter: raw.clone(),
                        reason: "wildcard must occupy a whole level",
                    })
                }
                p => Level::Exact(p.to_string()),
            };
            levels.push(level);
        }
        Ok(TopicFilter { raw, levels })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn has_wildcards(&self) -> bool {
        self.levels.iter().any(|l| !matches!(l, Level::Exact(_)))
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        self.matches_str(topic.as_str())
    }

    /// Match against a raw topic string that is assumed to be wildcard-free.
    pub fn matches_str(&self, topic: &str) -> bool {
        let mut names = topic.split('/');
        for level in &self.levels {
            match level {
                Level::Multi => return true,
                Level::Single => {
                    if names.next().is_none() {
                        return false;
                    }
                }
                Level::Exact(want) => match names.next() {
                    Some(name) if name == want => {}
                    _ => return false,
                },
            }
        }
        names.next().is_none()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Validate both sides and match. Errors on a malformed filter or a topic with wildcards.
pub fn topic_matches(filter: &str, topic: &str) -> Result<bool, BusError> {
    let filter = TopicFilter::new(filter)?;
    let topic = Topic::new(topic)?;
    Ok(filter.matches(&topic))
}
