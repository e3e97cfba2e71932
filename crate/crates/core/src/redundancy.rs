// SPDX-License-Identifier: Apache-2.0

//! Spare-row sharing schemes for 8x8 tiles and repair assignment.

use rayon::prelude::*;
use serde::Serialize;

use crate::defects::FaultMap;
use crate::error::{Error, Result};
use crate::model::ArrayGeometry;

/// Tile edge in CLBs.
pub const TILE_SIZE: usize = 8;

/// (tiles, spares) per group for schemes 0..=7.
const SCHEMES: [(usize, usize); 8] = [(1, 1), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (4, 5), (5, 4)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SharingScheme {
    pub scheme_id: u8,
    pub tiles_per_group: usize,
    pub spare_rows_per_group: usize,
    pub tile_size: (usize, usize),
}

impl SharingScheme {
    pub fn get(id: u8) -> Result<Self> {
        let &(t, s) = SCHEMES
            .get(id as usize)
            .ok_or_else(|| Error::Param(format!("unknown sharing scheme {id} (valid: 0-7)")))?;
        Ok(Self {
            scheme_id: id,
            tiles_per_group: t,
            spare_rows_per_group: s,
            tile_size: (TILE_SIZE, TILE_SIZE),
        })
    }

    pub fn all() -> Vec<Self> {
        (0..SCHEMES.len() as u8).map(|i| Self::get(i).expect("table id")).collect()
    }
}

/// Consecutive tiles of one tile-row band sharing a pool of spare rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileGroup {
    pub band: usize,
    pub first_tile: usize,
    pub n_tiles: usize,
    pub spares: usize,
}

/// Partitions the array (cropped to whole tiles) into groups of tiles
/// adjacent along the tile row; a trailing partial group gets
/// `floor(spares * n / tiles_per_group)` spares.
pub fn group_tiles(geometry: &ArrayGeometry, scheme: &SharingScheme) -> Result<Vec<TileGroup>> {
    let bands = geometry.n_rows / TILE_SIZE;
    let per_band = geometry.n_cols / TILE_SIZE;
    if bands == 0 || per_band == 0 {
        return Err(Error::TooSmall(format!(
            "{}x{} array is smaller than one {TILE_SIZE}x{TILE_SIZE} tile",
            geometry.n_rows, geometry.n_cols
        )));
    }
    let t = scheme.tiles_per_group;
    let mut out = Vec::new();
    for band in 0..bands {
        for first_tile in (0..per_band).step_by(t) {
            let n_tiles = t.min(per_band - first_tile);
            out.push(TileGroup {
                band,
                first_tile,
                n_tiles,
                spares: scheme.spare_rows_per_group * n_tiles / t,
            });
        }
    }
    Ok(out)
}

/// A faulty tile row; `span == 2` continues into the next tile of the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FaultyRow {
    pub tile_index_in_group: usize,
    pub row_index: usize,
    pub span: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FaultySegmentSet {
    pub groups: Vec<TileGroup>,
    pub rows: Vec<Vec<FaultyRow>>,
}

impl FaultySegmentSet {
    pub fn total(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Collects the faulty tile rows of every group, merging a row fault that
/// crosses into the next tile of the same group into one span-2 entry.
pub fn extract_faulty_rows(map: &FaultMap, groups: &[TileGroup]) -> FaultySegmentSet {
    let rows = groups
        .iter()
        .map(|g| {
            let row0 = g.band * TILE_SIZE;
            let faulty_in = |t: usize, r: usize| {
                let c0 = (g.first_tile + t) * TILE_SIZE;
                (c0..c0 + TILE_SIZE).any(|c| map.is_faulty(row0 + r, c))
            };
            let mut out = Vec::new();
            for r in 0..TILE_SIZE {
                let mut t = 0;
                while t < g.n_tiles {
                    if !faulty_in(t, r) {
                        t += 1;
                        continue;
                    }
                    let edge = (g.first_tile + t + 1) * TILE_SIZE;
                    let crosses = t + 1 < g.n_tiles && map.is_faulty(row0 + r, edge - 1) && map.is_faulty(row0 + r, edge);
                    out.push(FaultyRow {
                        tile_index_in_group: t,
                        row_index: r,
                        span: if crosses { 2 } else { 1 },
                    });
                    t += if crosses { 2 } else { 1 };
                }
            }
            out.sort_by_key(|f| (f.tile_index_in_group, f.row_index));
            out
        })
        .collect();
    FaultySegmentSet {
        groups: groups.to_vec(),
        rows,
    }
}

/// Maximum bipartite matching (augmenting paths); `adj[l]` lists the right
/// vertices left vertex `l` may use. Returns the match of each left vertex.
pub fn max_bipartite_matching(n_right: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    fn augment(l: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &r in &adj[l] {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            if owner[r].map_or(true, |o| augment(o, adj, seen, owner)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    for l in 0..adj.len() {
        let mut seen = vec![false; n_right];
        augment(l, adj, &mut seen, &mut owner);
    }
    let mut out = vec![None; adj.len()];
    for (r, o) in owner.iter().enumerate() {
        if let Some(l) = o {
            out[*l] = Some(r);
        }
    }
    out
}

/// Reference to a faulty row: (group index, entry index).
pub type RowRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepairPlan {
    /// Faulty row to (group, spare id within the group).
    pub assignments: Vec<(RowRef, usize)>,
    pub unrepaired: Vec<RowRef>,
    pub repaired_fraction: f64,
}

impl RepairPlan {
    pub fn repaired(&self) -> usize {
        self.assignments.len()
    }
}

/// Matches faulty rows to spare rows group by group.
pub fn assign_repairs(segments: &FaultySegmentSet) -> RepairPlan {
    let mut assignments = Vec::new();
    let mut unrepaired = Vec::new();
    for (gi, (g, rows)) in segments.groups.iter().zip(&segments.rows).enumerate() {
        let adj: Vec<Vec<usize>> = rows.iter().map(|_| (0..g.spares).collect()).collect();
        for (ri, m) in max_bipartite_matching(g.spares, &adj).into_iter().enumerate() {
            match m {
                Some(s) => assignments.push(((gi, ri), s)),
                None => unrepaired.push((gi, ri)),
            }
        }
    }
    let total = assignments.len() + unrepaired.len();
    let repaired_fraction = if total == 0 { 1.0 } else { assignments.len() as f64 / total as f64 };
    RepairPlan {
        assignments,
        unrepaired,
        repaired_fraction,
    }
}

/// Spare rows per tile and that value as a percentage of scheme 2's 1.5.
pub fn scheme_overhead(scheme: &SharingScheme) -> (f64, f64) {
    let max = SCHEMES.iter().map(|&(t, s)| s as f64 / t as f64).fold(0.0, f64::max);
    let rpt = scheme.spare_rows_per_group as f64 / scheme.tiles_per_group as f64;
    (rpt, rpt / max * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRepair {
    pub faulty_rows: usize,
    pub repaired: usize,
}

impl SampleRepair {
    pub fn rate(&self) -> f64 {
        if self.faulty_rows == 0 {
            1.0
        } else {
            self.repaired as f64 / self.faulty_rows as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeResult {
    pub scheme: SharingScheme,
    /// Mean of per-sample repair fractions.
    pub repair_rate: f64,
    pub rows_per_tile: f64,
    pub normalized_pct: f64,
    pub samples: Vec<SampleRepair>,
}

/// Repair statistics of each scheme over a set of fault maps.
pub fn evaluate_schemes(geometry: &ArrayGeometry, maps: &[FaultMap], schemes: &[SharingScheme]) -> Result<Vec<SchemeResult>> {
    if maps.is_empty() {
        return Err(Error::Param("evaluate_schemes needs at least one sample".into()));
    }
    schemes
        .iter()
        .map(|s| {
            let groups = group_tiles(geometry, s)?;
            let samples: Vec<SampleRepair> = maps
                .par_iter()
                .map(|m| {
                    let set = extract_faulty_rows(m, &groups);
                    let plan = assign_repairs(&set);
                    SampleRepair {
                        faulty_rows: set.total(),
                        repaired: plan.repaired(),
                    }
                })
                .collect();
            let repair_rate = samples.iter().map(SampleRepair::rate).sum::<f64>() / samples.len() as f64;
            let (rows_per_tile, normalized_pct) = scheme_overhead(s);
            Ok(SchemeResult {
                scheme: *s,
                repair_rate,
                rows_per_tile,
                normalized_pct,
                samples,
            })
        })
        .collect()
}
