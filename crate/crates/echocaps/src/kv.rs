//! Plain-text `key=value` records.

use std::collections::BTreeMap;
use std::str::FromStr;

/// Splits a whitespace-separated record of `key=value` fields.
pub fn parse_record(line: &str) -> Result<Vec<(&str, &str)>, String> {
    line.split_whitespace()
        .map(|field| {
            field
                .split_once('=')
                .filter(|(k, _)| !k.is_empty())
                .ok_or_else(|| format!("field {field:?} is not key=value"))
        })
        .collect()
}

/// One `key = value` pair per line; blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("line {}: empty key", n + 1));
        }
        if out.insert(k.to_owned(), v.trim().to_owned()).is_some() {
            return Err(format!("line {}: duplicate key {k:?}", n + 1));
        }
    }
    Ok(out)
}

/// Looks up and parses one field of a record.
pub fn field<T: FromStr>(fields: &[(&str, &str)], key: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    let (_, v) = fields
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| format!("missing field {key:?}"))?;
    v.parse().map_err(|e| format!("field {key:?}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records() {
        let f = parse_record("a=1  b=x=y c=").unwrap();
        assert_eq!(f, vec![("a", "1"), ("b", "x=y"), ("c", "")]);
        assert_eq!(field::<u32>(&f, "a").unwrap(), 1);
        assert!(field::<u32>(&f, "c").is_err());
        assert!(field::<u32>(&f, "z").is_err());
        assert!(parse_record("a=1 oops").is_err());
    }

    #[test]
    fn lines() {
        let m = parse_lines("# header\nepochs = 5\n\nlr=0.001 # note\n").unwrap();
        assert_eq!(m["epochs"], "5");
        assert_eq!(m["lr"], "0.001");
        assert!(parse_lines("x=1\nx=2").is_err());
        assert!(parse_lines("novalue").is_err());
    }
}
