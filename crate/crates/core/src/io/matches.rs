//! Line-oriented correspondence files and pixel masks.
//!
//! ```text
//! # format_version 1
//! pair <view_a> <view_b> <count>
//! u_a v_a u_b v_b
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, read_text, strip_text_version, version_line, write_json, write_text, FORMAT_VERSION};
use crate::geometry::Vec2;
use crate::localize::RawQueryMatch;
use crate::sfm::{MatchSet, PairMatches, PixelMask};
use crate::{Error, Result};

/// View id of the query image in match files.
pub const QUERY_VIEW: &str = "query";

pub fn format_matches(set: &MatchSet) -> String {
    let mut s = version_line();
    for p in &set.pairs {
        let _ = writeln!(s, "pair {} {} {}", p.view_a, p.view_b, p.matches.len());
        for (a, b) in &p.matches {
            let _ = writeln!(s, "{} {} {} {}", a.x, a.y, b.x, b.y);
        }
    }
    s
}

pub fn parse_matches(path: &Path, text: &str) -> Result<MatchSet> {
    let (body, skipped) = strip_text_version(path, text)?;
    let err = |line: usize, msg: String| Error::parse(path, format!("line {line}: {msg}"));
    let mut pairs = Vec::new();
    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1 + skipped, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#')).peekable();
    while let Some((ln, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.first() != Some(&"pair") || f.len() != 4 {
            return Err(err(ln, format!("expected `pair <view_a> <view_b> <count>`, got `{header}`")));
        }
        let count: usize = f[3]
            .parse()
            .map_err(|_| err(ln, format!("malformed count `{}` in pair header `{header}`", f[3])))?;
        let mut matches = Vec::with_capacity(count);
        for k in 0..count {
            let Some((ml, m)) = lines.next_if(|(_, l)| !l.starts_with("pair")) else {
                return Err(err(ln, format!("pair header `{header}` declares {count} matches but {k} follow")));
            };
            let v: Vec<f64> = m
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(ml, format!("malformed match line `{m}`")))?;
            if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
                return Err(err(ml, format!("expected four finite numbers, got `{m}`")));
            }
            matches.push((Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3])));
        }
        if let Some((ml, l)) = lines.peek() {
            if !l.starts_with("pair") {
                return Err(err(*ml, format!("pair header `{header}` at line {ln} declares {count} matches but more follow")));
            }
        }
        pairs.push(PairMatches {
            view_a: f[1].to_string(),
            view_b: f[2].to_string(),
            matches,
        });
    }
    Ok(MatchSet { pairs })
}

pub fn read_matches(path: &Path) -> Result<MatchSet> {
    parse_matches(path, &read_text(path)?)
}

pub fn write_matches(path: &Path, set: &MatchSet) -> Result<()> {
    write_text(path, &format_matches(set))
}

/// Reads and concatenates several match files in order.
pub fn read_match_files(paths: &[impl AsRef<Path>]) -> Result<MatchSet> {
    let mut out = MatchSet::default();
    for p in paths {
        out.pairs.extend(read_matches(p.as_ref())?.pairs);
    }
    Ok(out)
}

/// Query matches as `pair query <db_view> n` records, grouped by database view in first-seen order.
pub fn query_matches_to_set(raw: &[RawQueryMatch]) -> MatchSet {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<(Vec2, Vec2)>> = BTreeMap::new();
    for m in raw {
        let g = groups.entry(&m.db_view).or_insert_with(|| {
            order.push(&m.db_view);
            Vec::new()
        });
        g.push((m.query_pixel, m.db_pixel));
    }
    MatchSet {
        pairs: order
            .into_iter()
            .map(|v| PairMatches {
                view_a: QUERY_VIEW.to_string(),
                view_b: v.to_string(),
                matches: groups.remove(v).unwrap_or_default(),
            })
            .collect(),
    }
}

pub fn read_query_matches(path: &Path) -> Result<Vec<RawQueryMatch>> {
    let set = read_matches(path)?;
    let mut out = Vec::new();
    for p in set.pairs {
        let (db, flip) = match (p.view_a.as_str(), p.view_b.as_str()) {
            (QUERY_VIEW, QUERY_VIEW) => return Err(Error::parse(path, "pair links the query to itself")),
            (QUERY_VIEW, b) => (b.to_string(), false),
            (a, QUERY_VIEW) => (a.to_string(), true),
            (a, b) => return Err(Error::parse(path, format!("pair {a} {b} does not involve `{QUERY_VIEW}`"))),
        };
        for (a, b) in p.matches {
            let (q, d) = if flip { (b, a) } else { (a, b) };
            out.push(RawQueryMatch {
                query_pixel: q,
                db_view: db.clone(),
                db_pixel: d,
            });
        }
    }
    Ok(out)
}

pub fn write_query_matches(path: &Path, raw: &[RawQueryMatch]) -> Result<()> {
    write_matches(path, &query_matches_to_set(raw))
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    format_version: u32,
    /// `[u_min, v_min, u_max, v_max]` rectangles per view id.
    rects: BTreeMap<String, Vec<[f64; 4]>>,
}

pub fn read_mask(path: &Path) -> Result<PixelMask> {
    let f: MaskFile = read_json(path)?;
    for (v, rs) in &f.rects {
        if rs.iter().any(|r| !(r[0] <= r[2] && r[1] <= r[3])) {
            return Err(Error::validation(format!("mask for view {v} has an inverted rectangle")));
        }
    }
    Ok(PixelMask { rects: f.rects })
}

pub fn write_mask(path: &Path, mask: &PixelMask) -> Result<()> {
    write_json(
        path,
        &MaskFile {
            format_version: FORMAT_VERSION,
            rects: mask.rects.clone(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("m.txt")
    }

    #[test]
    fn empty_and_malformed() {
        assert_eq!(parse_matches(p(), "").unwrap(), MatchSet::default());
        assert_eq!(parse_matches(p(), &format_matches(&MatchSet::default())).unwrap(), MatchSet::default());
        let e = parse_matches(p(), "pair a#0 b#1 x\n").unwrap_err().to_string();
        assert!(e.contains("pair a#0 b#1 x") && e.contains("line 1"), "{e}");
        let e = parse_matches(p(), "pair a#0 b#1 2\n1 2 3 4\n").unwrap_err().to_string();
        assert!(e.contains("declares 2"), "{e}");
        let e = parse_matches(p(), "pair a#0 b#1 1\n1 2 3 4\n5 6 7 8\n").unwrap_err().to_string();
        assert!(e.contains("more follow"), "{e}");
        assert!(parse_matches(p(), "pair a#0 b#1 1\n1 2 3\n").is_err());
    }

    #[test]
    fn query_orientation() {
        let raw = vec![RawQueryMatch {
            query_pixel: Vec2::new(1.0, 2.0),
            db_view: "p#0".into(),
            db_pixel: Vec2::new(3.0, 4.0),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.txt");
        write_query_matches(&path, &raw).unwrap();
        assert_eq!(read_query_matches(&path).unwrap(), raw);
        write_text(&path, "pair p#0 query 1\n3 4 1 2\n").unwrap();
        assert_eq!(read_query_matches(&path).unwrap(), raw);
        write_text(&path, "pair p#0 p#1 1\n3 4 1 2\n").unwrap();
        assert!(read_query_matches(&path).is_err());
    }

    #[test]
    fn mask_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.json");
        let mut m = PixelMask::default();
        m.rects.insert("p#0".into(), vec![[0.0, 0.0, 10.5, 20.0]]);
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    fn pixel() -> impl Strategy<Value = Vec2> {
        (-1e4..1e4f64, -1e4..1e4f64).prop_map(|(u, v)| Vec2::new(u, v))
    }

    proptest! {
        #[test]
        fn text_round_trip(pairs in prop::collection::vec(
            ("[a-z]{1,5}", 0usize..12, "[a-z]{1,5}", 0usize..12, prop::collection::vec((pixel(), pixel()), 0..6)),
            0..5,
        )) {
            let set = MatchSet {
                pairs: pairs
                    .into_iter()
                    .map(|(a, i, b, j, matches)| PairMatches { view_a: format!("{a}#{i}"), view_b: format!("{b}#{j}"), matches })
                    .collect(),
            };
            let text = format_matches(&set);
            let back = parse_matches(p(), &text).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(format_matches(&back), text);
        }
    }
}
