//! `key=value` run configuration: file values, then flag overrides, then
//! defaults. Every run writes the resolved result next to its outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Copy)]
pub enum Default {
    Required,
    Optional,
    Value(&'static str),
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Default,
}

pub const fn key(name: &'static str, default: Default) -> Key {
    Key { name, default }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    keys: &'static [Key],
    values: BTreeMap<&'static str, String>,
}

fn parse_file(text: &str, keys: &'static [Key], origin: &str) -> Result<BTreeMap<&'static str, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, got '{line}'", n + 1))?;
        let k = k.trim();
        let known = keys.iter().find(|x| x.name == k).ok_or_else(|| {
            let names: Vec<&str> = keys.iter().map(|x| x.name).collect();
            anyhow!("{origin}:{}: unknown key '{k}' (allowed: {})", n + 1, names.join(", "))
        })?;
        if out.insert(known.name, v.trim().to_string()).is_some() {
            bail!("{origin}:{}: key '{k}' given twice", n + 1);
        }
    }
    Ok(out)
}

impl RunConfig {
    /// `overrides` are flag values; `None` leaves the file value in place.
    pub fn resolve(
        command: &'static str,
        keys: &'static [Key],
        file: Option<&Path>,
        overrides: Vec<(&'static str, Option<String>)>,
    ) -> Result<Self> {
        let mut values = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config file {}", p.display()))?;
                parse_file(&text, keys, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            let known = keys
                .iter()
                .find(|x| x.name == k)
                .unwrap_or_else(|| panic!("flag '{k}' has no config key for {command}"));
            if let Some(v) = v {
                values.insert(known.name, v);
            }
        }
        for k in keys {
            match k.default {
                Default::Value(d) => {
                    values.entry(k.name).or_insert_with(|| d.to_string());
                }
                Default::Required if !values.contains_key(k.name) => {
                    bail!("{command}: missing required setting '{}' (flag --{} or config key)", k.name, k.name.replace('_', "-"));
                }
                _ => {}
            }
        }
        Ok(RunConfig { command, keys, values })
    }

    pub fn raw(&self, k: &str) -> Option<&str> {
        self.values.get(k).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, k: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(k)?.ok_or_else(|| anyhow!("{}: missing setting '{k}'", self.command))
    }

    pub fn opt<T: FromStr>(&self, k: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(self.keys.iter().any(|x| x.name == k), "unknown key {k}");
        match self.values.get(k) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{}: invalid value '{v}' for '{k}': {e}", self.command)),
        }
    }

    pub fn flag(&self, k: &str) -> Result<bool> {
        match self.raw(k) {
            None | Some("false") | Some("0") | Some("no") => Ok(false),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some(v) => bail!("{}: '{k}' must be true or false, got '{v}'", self.command),
        }
    }

    pub fn snapshot(&self) -> String {
        let mut s = format!("# motif {} resolved configuration\n", self.command);
        for k in self.keys {
            if let Some(v) = self.values.get(k.name) {
                let _ = writeln!(s, "{}={v}", k.name);
            }
        }
        s
    }
}
