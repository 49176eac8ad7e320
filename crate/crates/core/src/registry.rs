//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Anything that can be looked up by name in a [`Registry`].
pub trait Named {
    fn name(&self) -> &str;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {available})")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    /// Registers `entry` under its own name, replacing any previous entry.
    pub fn register(&mut self, entry: Arc<T>) -> &mut Self {
        self.entries.insert(entry.name().to_string(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>, UnknownName> {
        self.entries.get(name).cloned().ok_or_else(|| UnknownName {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<T>> {
        self.entries.values()
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("kind", &self.kind).field("entries", &self.entries.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Thing(&'static str);
    impl Named for Thing {
        fn name(&self) -> &str {
            self.0
        }
    }

    #[test]
    fn lookup_and_unknown() {
        let mut r: Registry<Thing> = Registry::new("thing");
        r.register(Arc::new(Thing("b"))).register(Arc::new(Thing("a")));
        assert_eq!(r.names(), vec!["a", "b"]);
        assert_eq!(r.get("a").unwrap().name(), "a");
        let err = r.get("zzz").err().unwrap();
        assert_eq!(err.to_string(), "unknown thing `zzz` (available: a, b)");
    }
}
