//! Sidecar manifest echoing a run's fully resolved configuration.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Ordered `key = value` lines plus a hash over them.
#[derive(Debug, Clone)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self { entries: Vec::new() };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    /// Sets or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    fn body(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the configuration lines.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.body().as_bytes()))
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let text = format!("{}config_sha256 = {}\n", self.body(), self.config_hash());
        fs::write(dir.join(MANIFEST_FILE), text)
    }
}

/// Lowercase hex of a digest.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_content_not_insertion_of_duplicates() {
        let mut a = Manifest::new("train");
        a.set("epochs", 2);
        let mut b = Manifest::new("train");
        b.set("epochs", 3);
        b.set("epochs", 2);
        assert_eq!(a.config_hash(), b.config_hash());
        b.set("seed", 1);
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
