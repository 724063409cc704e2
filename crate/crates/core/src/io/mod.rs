//! On-disk formats for every pipeline stage.
//!
//! JSON documents carry a mandatory `format_version`. Line-oriented text and CSV
//! files may start with a `# format_version N` line; files without one are read
//! as the current version. Angles are degrees in files and radians in memory.

mod manifest;
mod matches;
mod recon;
mod report;
mod stage;
mod tables;

pub use manifest::*;
pub use matches::*;
pub use recon::*;
pub use report::*;
pub use stage::*;
pub use tables::*;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents`, creating parent directories.
pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn check_version(path: &Path, found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            path: path.to_path_buf(),
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Parses a versioned JSON document.
pub(crate) fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    check_version(path, probe.format_version)?;
    serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_text(path)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

/// Strips an optional leading `# format_version N` line and checks it.
pub(crate) fn strip_text_version<'a>(path: &Path, text: &'a str) -> Result<(&'a str, usize)> {
    let first = text.lines().next().unwrap_or("");
    let Some(rest) = first.trim().strip_prefix("# format_version") else {
        return Ok((text, 0));
    };
    let found: u32 = rest
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("line 1: malformed format_version `{}`", rest.trim())))?;
    check_version(path, found)?;
    let body = text.split_once('\n').map_or("", |x| x.1);
    Ok((body, 1))
}

pub(crate) fn version_line() -> String {
    format!("# format_version {FORMAT_VERSION}\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_json_version_is_rejected() {
        let p = Path::new("x.json");
        let e = parse_json::<serde_json::Value>(p, r#"{"format_version": 7}"#).unwrap_err();
        assert!(matches!(e, Error::FormatVersion { found: 7, supported: 1, .. }));
        assert!(e.to_string().contains("re-export"));
        assert!(matches!(parse_json::<serde_json::Value>(p, "{}"), Err(Error::Parse { .. })));
    }

    #[test]
    fn text_version_line() {
        let p = Path::new("x.txt");
        assert_eq!(strip_text_version(p, "a\nb").unwrap(), ("a\nb", 0));
        assert_eq!(strip_text_version(p, "# format_version 1\na").unwrap(), ("a", 1));
        assert!(matches!(strip_text_version(p, "# format_version 2\n"), Err(Error::FormatVersion { .. })));
    }
}
