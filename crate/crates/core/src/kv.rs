//! Plain-text key=value files (configs, manifests, report headers).
//!
//! One `key=value` pair per line; blank lines and lines starting with `#` are
//! ignored. Keys are unique.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
    }
    Ok(map)
}

pub fn get_str<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("missing key {key:?}")))
}

pub fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    get_str(map, key)?
        .parse()
        .map_err(|e| Error::Config(format!("key {key:?}: {e}")))
}

pub fn get_usize(map: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    get_str(map, key)?
        .parse()
        .map_err(|e| Error::Config(format!("key {key:?}: {e}")))
}

pub fn get_u64(map: &BTreeMap<String, String>, key: &str) -> Result<u64> {
    get_str(map, key)?
        .parse()
        .map_err(|e| Error::Config(format!("key {key:?}: {e}")))
}

pub fn get_f64_or(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64> {
    match map.get(key) {
        None => Ok(default),
        Some(_) => get_f64(map, key),
    }
}

pub fn get_usize_or(map: &BTreeMap<String, String>, key: &str, default: usize) -> Result<usize> {
    match map.get(key) {
        None => Ok(default),
        Some(_) => get_usize(map, key),
    }
}

pub fn get_u64_or(map: &BTreeMap<String, String>, key: &str, default: u64) -> Result<u64> {
    match map.get(key) {
        None => Ok(default),
        Some(_) => get_u64(map, key),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reads() {
        let map = parse("a=1\n# comment\n\n b = hello world \n").unwrap();
        assert_eq!(get_str(&map, "a").unwrap(), "1");
        assert_eq!(get_str(&map, "b").unwrap(), "hello world");
        assert_eq!(get_f64(&map, "a").unwrap(), 1.0);
        assert!(get_str(&map, "missing").is_err());
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse("no equals sign").is_err());
        assert!(parse("a=1\na=2").is_err());
    }
}
