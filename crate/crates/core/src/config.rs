//! Flat `key = value` files. Blank lines and lines starting with `#` are
//! ignored; keys are trimmed; later duplicates override earlier ones when
//! applied in order.

use crate::error::{Error, Result};

/// Parses `text` into ordered `(key, value)` pairs.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected key = value".into(),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("invalid key {key:?}"),
            });
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

/// Value of the last occurrence of `key`.
pub fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let pairs = parse_kv("# c\n\ndim = 8\nmodel=RotatE\n  lr =0.5  \r\ndim=9\n").unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(lookup(&pairs, "dim"), Some("9"));
        assert_eq!(lookup(&pairs, "lr"), Some("0.5"));
        assert_eq!(lookup(&pairs, "nope"), None);
    }

    #[test]
    fn reports_line_numbers() {
        match parse_kv("a = 1\nbroken\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_kv("two words = 1").is_err());
        assert!(parse_kv(" = 1").is_err());
    }
}
