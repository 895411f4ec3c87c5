//! Plain-text `key=value` run configuration files.
//!
//! Every key mirrors a command-line flag without the leading dashes
//! (`xi=100`, `prior=l1tv`, `max-iter=30`). Lines starting with `#` and
//! blank lines are ignored. Flags given on the command line win over file
//! entries.

use std::collections::HashMap;
use std::path::Path;

pub struct ConfigFile {
    entries: HashMap<String, String>,
}

impl ConfigFile {
    pub fn empty() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    /// Fill `slot` from the file when the flag was absent.
    pub fn fill<T: std::str::FromStr>(
        &self,
        slot: &mut Option<T>,
        key: &str,
    ) -> Result<(), String>
    where
        T::Err: std::fmt::Display,
    {
        if slot.is_none() {
            if let Some(raw) = self.entries.get(key) {
                *slot = Some(
                    raw.parse()
                        .map_err(|e| format!("config key {key}={raw}: {e}"))?,
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_fills_only_missing_slots() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("eptv-cfg-{}.conf", std::process::id()));
        std::fs::write(&path, "# comment\nxi = 100\nprior=l1tv\n\nmax-iter=7\n").unwrap();
        let cfg = ConfigFile::load(&path).unwrap();
        let mut xi: Option<f64> = None;
        let mut prior: Option<String> = Some("bg".to_string());
        let mut iters: Option<usize> = None;
        cfg.fill(&mut xi, "xi").unwrap();
        cfg.fill(&mut prior, "prior").unwrap();
        cfg.fill(&mut iters, "max-iter").unwrap();
        assert_eq!(xi, Some(100.0));
        assert_eq!(prior.as_deref(), Some("bg"));
        assert_eq!(iters, Some(7));
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn rejects_malformed_lines() {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("eptv-cfg-bad-{}.conf", std::process::id()));
        std::fs::write(&path, "just words\n").unwrap();
        assert!(ConfigFile::load(&path).is_err());
        std::fs::remove_file(path).unwrap();
    }
}
