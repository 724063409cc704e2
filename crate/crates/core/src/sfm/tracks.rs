//! Correspondence sets, pixel masks, and transitive track building.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::geometry::{CameraIntrinsics, Vec2};
use crate::{Error, Result};

/// Correspondences between two views, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMatches {
    pub view_a: String,
    pub view_b: String,
    pub matches: Vec<(Vec2, Vec2)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<PairMatches>,
}

impl MatchSet {
    /// Checks that views exist, differ within a pair, and that pixels are in bounds.
    pub fn validate(&self, intrinsics_of: impl Fn(&str) -> Option<CameraIntrinsics>) -> Result<()> {
        for (k, pair) in self.pairs.iter().enumerate() {
            if pair.view_a == pair.view_b {
                return Err(Error::validation(format!(
                    "match pair {k} links view {} to itself",
                    pair.view_a
                )));
            }
            let ia = intrinsics_of(&pair.view_a)
                .ok_or_else(|| Error::validation(format!("match pair {k}: unknown view {}", pair.view_a)))?;
            let ib = intrinsics_of(&pair.view_b)
                .ok_or_else(|| Error::validation(format!("match pair {k}: unknown view {}", pair.view_b)))?;
            for (a, b) in &pair.matches {
                if !ia.contains(a) || !ib.contains(b) {
                    return Err(Error::validation(format!(
                        "match pair {k} ({} - {}): pixel ({}, {}) / ({}, {}) out of bounds",
                        pair.view_a, pair.view_b, a.x, a.y, b.x, b.y
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn correspondence_count(&self) -> usize {
        self.pairs.iter().map(|p| p.matches.len()).sum()
    }
}

/// Axis-aligned pixel rectangles per view whose correspondences are discarded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelMask {
    /// `(u_min, v_min, u_max, v_max)` per view id.
    pub rects: BTreeMap<String, Vec<[f64; 4]>>,
}

impl PixelMask {
    pub fn masks(&self, view: &str, px: &Vec2) -> bool {
        self.rects.get(view).is_some_and(|rs| {
            rs.iter()
                .any(|r| px.x >= r[0] && px.x <= r[2] && px.y >= r[1] && px.y <= r[3])
        })
    }

    /// Copy of `matches` without correspondences that fall in a masked region.
    pub fn apply(&self, matches: &MatchSet) -> MatchSet {
        MatchSet {
            pairs: matches
                .pairs
                .iter()
                .map(|p| PairMatches {
                    view_a: p.view_a.clone(),
                    view_b: p.view_b.clone(),
                    matches: p
                        .matches
                        .iter()
                        .filter(|(a, b)| !self.masks(&p.view_a, a) && !self.masks(&p.view_b, b))
                        .copied()
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Exact key of a feature observation.
pub fn pixel_key(view: usize, px: &Vec2) -> (usize, u64, u64) {
    (view, px.x.to_bits(), px.y.to_bits())
}

/// Set of labelled feature observations (for example road surface pixels).
#[derive(Clone, Debug, Default)]
pub struct PixelLabels {
    keys: HashSet<(usize, u64, u64)>,
}

impl PixelLabels {
    pub fn new(labels: &[(String, Vec2)], lookup: &BTreeMap<&str, usize>) -> Self {
        PixelLabels {
            keys: labels
                .iter()
                .filter_map(|(v, px)| lookup.get(v.as_str()).map(|&i| pixel_key(i, px)))
                .collect(),
        }
    }

    pub fn contains(&self, view: usize, px: &Vec2) -> bool {
        self.keys.contains(&pixel_key(view, px))
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// A feature seen in several views; at most one observation per view.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    /// `(view index, pixel)` sorted by view index.
    pub observations: Vec<(usize, Vec2)>,
}

struct UnionFind {
    parent: Vec<usize>,
    /// Views present in each root's component, sorted.
    views: Vec<Vec<usize>>,
}

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges unless the components share a view; returns whether merged.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        let (va, vb) = (&self.views[ra], &self.views[rb]);
        let (mut i, mut j) = (0, 0);
        while i < va.len() && j < vb.len() {
            match va[i].cmp(&vb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        let (keep, drop) = if va.len() >= vb.len() { (ra, rb) } else { (rb, ra) };
        let moved = std::mem::take(&mut self.views[drop]);
        let target = &mut self.views[keep];
        target.extend(moved);
        target.sort_unstable();
        self.parent[drop] = keep;
        true
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackStats {
    pub links: usize,
    pub conflicting_links: usize,
    pub unknown_views: usize,
}

/// Links correspondences transitively into tracks, processing pairs in order.
///
/// A link that would put two different pixels of one view into the same track is dropped.
pub fn build_tracks(matches: &MatchSet, lookup: &BTreeMap<&str, usize>) -> (Vec<Track>, TrackStats) {
    let mut node_of: HashMap<(usize, u64, u64), usize> = HashMap::new();
    let mut nodes: Vec<(usize, Vec2)> = Vec::new();
    let mut uf = UnionFind {
        parent: Vec::new(),
        views: Vec::new(),
    };
    let mut stats = TrackStats::default();
    let mut node = |view: usize, px: Vec2, uf: &mut UnionFind| -> usize {
        *node_of.entry(pixel_key(view, &px)).or_insert_with(|| {
            nodes.push((view, px));
            uf.parent.push(nodes.len() - 1);
            uf.views.push(vec![view]);
            nodes.len() - 1
        })
    };
    for pair in &matches.pairs {
        let (Some(&va), Some(&vb)) = (lookup.get(pair.view_a.as_str()), lookup.get(pair.view_b.as_str())) else {
            stats.unknown_views += 1;
            continue;
        };
        if va == vb {
            continue;
        }
        for (a, b) in &pair.matches {
            let na = node(va, *a, &mut uf);
            let nb = node(vb, *b, &mut uf);
            stats.links += 1;
            if !uf.union(na, nb) {
                stats.conflicting_links += 1;
            }
        }
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut first_of_root: HashMap<usize, usize> = HashMap::new();
    for i in 0..nodes.len() {
        let r = uf.find(i);
        let first = *first_of_root.entry(r).or_insert(i);
        by_root.entry(first).or_default().push(i);
    }
    let tracks = by_root
        .into_values()
        .filter(|members| members.len() >= 2)
        .map(|members| {
            let mut observations: Vec<(usize, Vec2)> = members.iter().map(|&i| nodes[i]).collect();
            observations.sort_by_key(|o| o.0);
            Track { observations }
        })
        .collect();
    (tracks, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(u: f64, v: f64) -> Vec2 {
        Vec2::new(u, v)
    }

    fn lookup() -> BTreeMap<&'static str, usize> {
        [("a", 0), ("b", 1), ("c", 2)].into_iter().collect()
    }

    #[test]
    fn transitive_links_form_one_track() {
        let m = MatchSet {
            pairs: vec![
                PairMatches {
                    view_a: "a".into(),
                    view_b: "b".into(),
                    matches: vec![(px(1.0, 1.0), px(2.0, 2.0))],
                },
                PairMatches {
                    view_a: "b".into(),
                    view_b: "c".into(),
                    matches: vec![(px(2.0, 2.0), px(3.0, 3.0))],
                },
            ],
        };
        let (tracks, stats) = build_tracks(&m, &lookup());
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].observations.len(), 3);
        assert_eq!(stats.conflicting_links, 0);
    }

    #[test]
    fn conflicting_link_is_dropped() {
        let m = MatchSet {
            pairs: vec![
                PairMatches {
                    view_a: "a".into(),
                    view_b: "b".into(),
                    matches: vec![(px(1.0, 1.0), px(2.0, 2.0)), (px(5.0, 5.0), px(6.0, 6.0))],
                },
                PairMatches {
                    view_a: "a".into(),
                    view_b: "c".into(),
                    matches: vec![(px(1.0, 1.0), px(3.0, 3.0)), (px(5.0, 5.0), px(3.0, 3.0))],
                },
            ],
        };
        let (tracks, stats) = build_tracks(&m, &lookup());
        assert_eq!(stats.conflicting_links, 1);
        for t in &tracks {
            let mut views: Vec<_> = t.observations.iter().map(|o| o.0).collect();
            views.dedup();
            assert_eq!(views.len(), t.observations.len());
        }
        assert_eq!(tracks[0].observations.len(), 3);
        assert_eq!(tracks[1].observations.len(), 2);
    }

    #[test]
    fn mask_removes_correspondences() {
        let m = MatchSet {
            pairs: vec![PairMatches {
                view_a: "a".into(),
                view_b: "b".into(),
                matches: vec![(px(1.0, 1.0), px(2.0, 2.0)), (px(50.0, 50.0), px(6.0, 6.0))],
            }],
        };
        let mask = PixelMask {
            rects: [("a".to_string(), vec![[40.0, 40.0, 60.0, 60.0]])].into(),
        };
        let out = mask.apply(&m);
        assert_eq!(out.pairs[0].matches.len(), 1);
    }

    #[test]
    fn validation_catches_bad_pairs() {
        let intr = CameraIntrinsics::pinhole(10.0, 10.0, 5.0, 5.0, 10, 10);
        let get = |v: &str| (v != "zz").then_some(intr);
        let bad = MatchSet {
            pairs: vec![PairMatches {
                view_a: "a".into(),
                view_b: "a".into(),
                matches: vec![],
            }],
        };
        assert!(bad.validate(get).is_err());
        let oob = MatchSet {
            pairs: vec![PairMatches {
                view_a: "a".into(),
                view_b: "b".into(),
                matches: vec![(px(1.0, 1.0), px(20.0, 2.0))],
            }],
        };
        assert!(oob.validate(get).is_err());
    }
}
