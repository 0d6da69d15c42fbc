//! Optional `key = value` configuration file; command-line flags win.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use metatree::model::parse_kv;

use crate::CliError;

pub struct Settings {
    entries: Vec<(String, String)>,
    used: RefCell<BTreeSet<usize>>,
}

fn norm(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Settings, CliError> {
        let entries = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Core(metatree::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))))?;
                parse_kv(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                    .into_iter()
                    .map(|(k, v)| (norm(&k), v))
                    .collect()
            }
            None => Vec::new(),
        };
        Ok(Settings { entries, used: RefCell::new(BTreeSet::new()) })
    }

    #[cfg(test)]
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Settings {
        Settings {
            entries: pairs.iter().map(|(k, v)| (norm(k), v.to_string())).collect(),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    /// Last value for `key` in the file, marking it consumed.
    pub fn raw(&self, key: &str) -> Option<String> {
        let key = norm(key);
        let mut found = None;
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if *k == key {
                self.used.borrow_mut().insert(i);
                found = Some(v.clone());
            }
        }
        found
    }

    /// The flag when given, else the file's value.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let from_file = self.raw(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|v| v.parse().map_err(|_| CliError::Usage(format!("invalid value '{v}' for '{key}' in config file"))))
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    pub fn req<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.get(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{}", key.replace('_', "-"))))
    }

    /// File entries not yet consumed, in file order.
    pub fn unused(&self) -> Vec<(String, String)> {
        let used = self.used.borrow();
        self.entries.iter().enumerate().filter(|(i, _)| !used.contains(i)).map(|(_, e)| e.clone()).collect()
    }

    /// Rejects keys no part of the command consumed.
    pub fn finish(&self) -> Result<(), CliError> {
        match self.unused().first() {
            Some((k, _)) => Err(CliError::Usage(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }
}
