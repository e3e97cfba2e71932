// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use cntfpga::defects::FaultMap;
use cntfpga::redundancy::{
    assign_repairs, extract_faulty_rows, group_tiles, max_bipartite_matching, FaultyRow, FaultySegmentSet, SharingScheme,
    TileGroup, TILE_SIZE,
};
use cntfpga::{ArrayGeometry, FaultKind, LutSite};
use proptest::prelude::*;

/// Maximum matching size by trying every choice for every left vertex.
fn brute_force_matching(n_right: usize, adj: &[Vec<usize>]) -> usize {
    fn go(l: usize, adj: &[Vec<usize>], used: &mut Vec<bool>) -> usize {
        if l == adj.len() {
            return 0;
        }
        let mut best = go(l + 1, adj, used);
        for &r in &adj[l] {
            if !used[r] {
                used[r] = true;
                best = best.max(1 + go(l + 1, adj, used));
                used[r] = false;
            }
        }
        best
    }
    go(0, adj, &mut vec![false; n_right])
}

fn bipartite() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
    (1usize..=6).prop_flat_map(|n_right| {
        let edges = prop::collection::btree_set(0..n_right, 0..=n_right).prop_map(|s| s.into_iter().collect::<Vec<_>>());
        (Just(n_right), prop::collection::vec(edges, 0..=10))
    })
}

fn segment_set(groups: Vec<(usize, usize)>) -> FaultySegmentSet {
    let mut gs = Vec::new();
    let mut rows = Vec::new();
    for (i, (spares, n_rows)) in groups.into_iter().enumerate() {
        gs.push(TileGroup {
            band: 0,
            first_tile: i * 2,
            n_tiles: 2,
            spares,
        });
        rows.push(
            (0..n_rows)
                .map(|r| FaultyRow {
                    tile_index_in_group: r % 2,
                    row_index: r % TILE_SIZE,
                    span: 1,
                })
                .collect(),
        );
    }
    FaultySegmentSet { groups: gs, rows }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matching_is_maximum_and_valid((n_right, adj) in bipartite()) {
        let m = max_bipartite_matching(n_right, &adj);
        prop_assert_eq!(m.len(), adj.len());
        let mut used = BTreeSet::new();
        for (l, r) in m.iter().enumerate() {
            if let Some(r) = r {
                prop_assert!(adj[l].contains(r));
                prop_assert!(used.insert(*r));
            }
        }
        prop_assert_eq!(used.len(), brute_force_matching(n_right, &adj));
    }

    #[test]
    fn repairs_conserve_rows_and_respect_spares(groups in prop::collection::vec((0usize..5, 0usize..10), 1..6)) {
        let set = segment_set(groups.clone());
        let plan = assign_repairs(&set);
        prop_assert_eq!(plan.assignments.len() + plan.unrepaired.len(), set.total());
        for (gi, &(spares, n)) in groups.iter().enumerate() {
            let used: Vec<usize> = plan.assignments.iter().filter(|(r, _)| r.0 == gi).map(|&(_, s)| s).collect();
            let distinct: BTreeSet<_> = used.iter().copied().collect();
            prop_assert_eq!(distinct.len(), used.len());
            prop_assert!(used.iter().all(|&s| s < spares));
            prop_assert_eq!(used.len(), spares.min(n));
        }
    }

    #[test]
    fn more_spares_never_repair_less(groups in prop::collection::vec((0usize..5, 0usize..10), 1..6), which in 0usize..6) {
        let before = assign_repairs(&segment_set(groups.clone())).repaired();
        let mut more = groups.clone();
        let i = which % more.len();
        more[i].0 += 1;
        prop_assert!(assign_repairs(&segment_set(more)).repaired() >= before);
    }

    #[test]
    fn every_faulty_tile_row_is_covered_once(
        cells in prop::collection::btree_set((0usize..16, 0usize..48), 0..60),
        scheme_id in 0u8..8,
    ) {
        let g = ArrayGeometry::new(16, 48);
        let mut map = FaultMap::new(&g);
        for &(r, c) in &cells {
            map.insert(LutSite::new(r, c, 0), FaultKind::StuckAt0).unwrap();
        }
        let scheme = SharingScheme::get(scheme_id).unwrap();
        let groups = group_tiles(&g, &scheme).unwrap();
        let set = extract_faulty_rows(&map, &groups);
        // (band, absolute tile, row in tile) holding at least one faulty CLB.
        let truth: BTreeSet<_> = cells.iter().map(|&(r, c)| (r / TILE_SIZE, c / TILE_SIZE, r % TILE_SIZE)).collect();
        let mut covered = Vec::new();
        for (grp, rows) in set.groups.iter().zip(&set.rows) {
            for f in rows {
                for k in 0..f.span as usize {
                    covered.push((grp.band, grp.first_tile + f.tile_index_in_group + k, f.row_index));
                }
            }
        }
        let distinct: BTreeSet<_> = covered.iter().copied().collect();
        prop_assert_eq!(distinct.len(), covered.len());
        prop_assert!(truth.is_subset(&distinct));
        prop_assert!(covered.iter().all(|t| truth.contains(t)));
    }
}

#[test]
fn groups_tile_the_array() {
    let g = ArrayGeometry::new(391, 391);
    for scheme in SharingScheme::all() {
        let groups = group_tiles(&g, &scheme).unwrap();
        let n_tiles: usize = groups.iter().map(|x| x.n_tiles).sum();
        assert_eq!(n_tiles, 48 * 48, "scheme {}", scheme.scheme_id);
        assert!(groups.iter().all(|x| x.n_tiles <= scheme.tiles_per_group));
    }
}
