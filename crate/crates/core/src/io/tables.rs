//! CSV inputs: ground marks, image tracks, road-surface labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, strip_text_version, version_line, write_text};
use crate::geometry::Vec2;
use crate::groundplane::GroundMark;
use crate::traffic::ImageTrack;
use crate::{Error, Result};

fn parse_rows<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<Vec<T>> {
    let (body, skipped) = strip_text_version(path, text)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize + skipped);
                Error::parse(path, format!("line {line}: {e}"))
            })
        })
        .collect()
}

fn format_rows<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header.split(',')).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    let mut s = version_line();
    s.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(s)
}

#[derive(Serialize, Deserialize)]
struct MarkRow {
    u_a: f64,
    v_a: f64,
    u_b: f64,
    v_b: f64,
    gt_distance_m: Option<f64>,
}

pub fn format_marks(path: &Path, marks: &[GroundMark]) -> Result<String> {
    let rows: Vec<MarkRow> = marks
        .iter()
        .map(|m| MarkRow {
            u_a: m.pixel_a.x,
            v_a: m.pixel_a.y,
            u_b: m.pixel_b.x,
            v_b: m.pixel_b.y,
            gt_distance_m: m.gt_distance_m,
        })
        .collect();
    format_rows(path, &rows, "u_a,v_a,u_b,v_b,gt_distance_m")
}

pub fn parse_marks(path: &Path, text: &str) -> Result<Vec<GroundMark>> {
    parse_rows::<MarkRow>(path, text)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if let Some(g) = r.gt_distance_m {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::validation(format!("mark {i}: gt_distance_m must be positive, got {g}")));
                }
            }
            Ok(GroundMark {
                pixel_a: Vec2::new(r.u_a, r.v_a),
                pixel_b: Vec2::new(r.u_b, r.v_b),
                gt_distance_m: r.gt_distance_m,
            })
        })
        .collect()
}

pub fn read_marks(path: &Path) -> Result<Vec<GroundMark>> {
    parse_marks(path, &read_text(path)?)
}

pub fn write_marks(path: &Path, marks: &[GroundMark]) -> Result<()> {
    write_text(path, &format_marks(path, marks)?)
}

#[derive(Serialize, Deserialize)]
struct TrackRow {
    track_id: String,
    timestamp_s: f64,
    u: f64,
    v: f64,
}

pub fn format_tracks(path: &Path, tracks: &[ImageTrack]) -> Result<String> {
    let rows: Vec<TrackRow> = tracks
        .iter()
        .flat_map(|t| {
            t.samples.iter().map(|(ts, p)| TrackRow {
                track_id: t.track_id.clone(),
                timestamp_s: *ts,
                u: p.x,
                v: p.y,
            })
        })
        .collect();
    format_rows(path, &rows, "track_id,timestamp_s,u,v")
}

/// Groups rows by `track_id` in first-seen order and validates each track.
pub fn parse_tracks(path: &Path, text: &str) -> Result<Vec<ImageTrack>> {
    let mut tracks: Vec<ImageTrack> = Vec::new();
    for r in parse_rows::<TrackRow>(path, text)? {
        match tracks.iter_mut().find(|t| t.track_id == r.track_id) {
            Some(t) => t.samples.push((r.timestamp_s, Vec2::new(r.u, r.v))),
            None => tracks.push(ImageTrack {
                track_id: r.track_id,
                samples: vec![(r.timestamp_s, Vec2::new(r.u, r.v))],
            }),
        }
    }
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

pub fn read_tracks(path: &Path) -> Result<Vec<ImageTrack>> {
    parse_tracks(path, &read_text(path)?)
}

pub fn write_tracks(path: &Path, tracks: &[ImageTrack]) -> Result<()> {
    write_text(path, &format_tracks(path, tracks)?)
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    view_id: String,
    u: f64,
    v: f64,
}

/// Road-surface feature pixels as `view_id,u,v`.
pub fn read_road_labels(path: &Path) -> Result<Vec<(String, Vec2)>> {
    Ok(parse_rows::<LabelRow>(path, &read_text(path)?)?
        .into_iter()
        .map(|r| (r.view_id, Vec2::new(r.u, r.v)))
        .collect())
}

pub fn write_road_labels(path: &Path, labels: &[(String, Vec2)]) -> Result<()> {
    let rows: Vec<LabelRow> = labels
        .iter()
        .map(|(v, p)| LabelRow {
            view_id: v.clone(),
            u: p.x,
            v: p.y,
        })
        .collect();
    write_text(path, &format_rows(path, &rows, "view_id,u,v")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("t.csv")
    }

    #[test]
    fn marks_without_truth_and_errors() {
        let m = parse_marks(p(), "u_a,v_a,u_b,v_b,gt_distance_m\n1,2,3,4,\n5,6,7,8,2.5\n").unwrap();
        assert_eq!(m[0].gt_distance_m, None);
        assert_eq!(m[1].gt_distance_m, Some(2.5));
        let e = parse_marks(p(), "# format_version 1\nu_a,v_a,u_b,v_b,gt_distance_m\n1,2,x,4,1\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        assert!(matches!(parse_marks(p(), "u_a,v_a,u_b,v_b,gt_distance_m\n1,2,3,4,-1\n"), Err(Error::Validation(_))));
        assert_eq!(parse_marks(p(), &format_marks(p(), &[]).unwrap()).unwrap(), vec![]);
    }

    #[test]
    fn tracks_group_and_validate() {
        let t = parse_tracks(p(), "track_id,timestamp_s,u,v\na,0,1,1\nb,0,5,5\na,0.1,2,2\nb,0.1,6,6\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].samples.len(), 2);
        assert!(parse_tracks(p(), "track_id,timestamp_s,u,v\na,0.2,1,1\na,0.1,2,2\n").is_err());
    }

    proptest! {
        #[test]
        fn marks_round_trip(rows in prop::collection::vec((0.0..1920.0f64, 0.0..1080.0f64, 0.0..1920.0f64, 0.0..1080.0f64, prop::option::of(0.01..100.0f64)), 0..8)) {
            let marks: Vec<GroundMark> = rows
                .into_iter()
                .map(|(a, b, c, d, g)| GroundMark { pixel_a: Vec2::new(a, b), pixel_b: Vec2::new(c, d), gt_distance_m: g })
                .collect();
            let text = format_marks(p(), &marks).unwrap();
            prop_assert_eq!(parse_marks(p(), &text).unwrap(), marks);
        }

        #[test]
        fn tracks_round_trip(n in 2usize..20, dt in 0.01..1.0f64, u0 in 0.0..1000.0f64) {
            let tracks = vec![
                ImageTrack { track_id: "veh,1".into(), samples: (0..n).map(|i| (i as f64 * dt, Vec2::new(u0 + i as f64, 3.5))).collect() },
                ImageTrack { track_id: "b".into(), samples: vec![(0.0, Vec2::new(1.0, 2.0)), (dt, Vec2::new(2.0, 3.0))] },
            ];
            let text = format_tracks(p(), &tracks).unwrap();
            prop_assert_eq!(parse_tracks(p(), &text).unwrap(), tracks);
        }
    }
}
