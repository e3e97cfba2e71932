// SPDX-License-Identifier: Apache-2.0

use cntfpga::array_test::{fixed_step_line, recursive_jump_line, run_array_test, KeyMode, TestMethod, VecLine};
use cntfpga::defects::FaultMap;
use cntfpga::{ArrayGeometry, FaultKind, LutSite};
use proptest::prelude::*;

/// Maximal runs of `true`, found by scanning every position.
fn exhaustive_segments(truth: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in truth.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, truth.len() - 1));
    }
    out
}

fn pow2_step() -> impl Strategy<Value = usize> {
    (1u32..=5).prop_map(|e| 1usize << e)
}

/// Line of `n <= 64` positions with one faulty run at least `step` long.
fn single_segment_line() -> impl Strategy<Value = (usize, Vec<bool>)> {
    pow2_step().prop_flat_map(|step| {
        (step..=64usize).prop_flat_map(move |n| {
            (step..=n).prop_flat_map(move |len| (0..=n - len).prop_map(move |s| (step, (0..n).map(|i| i >= s && i < s + len).collect())))
        })
    })
}

/// Runs of length >= step separated by gaps of length >= step.
fn separated_segments_line() -> impl Strategy<Value = (usize, Vec<bool>)> {
    pow2_step().prop_flat_map(|step| {
        (any::<bool>(), prop::collection::vec(step..step + 12, 1..8)).prop_map(move |(first, runs)| {
            let mut v = Vec::new();
            let mut f = first;
            for r in runs {
                v.extend(std::iter::repeat(f).take(r));
                f = !f;
            }
            (step, v)
        })
    })
}

fn map_from(rows: &[Vec<bool>]) -> FaultMap {
    let g = ArrayGeometry::new(rows.len(), rows[0].len());
    let mut m = FaultMap::new(&g);
    for (r, row) in rows.iter().enumerate() {
        for (c, &f) in row.iter().enumerate() {
            if f {
                m.insert(LutSite::new(r, c, 0), FaultKind::StuckAt0).unwrap();
            }
        }
    }
    m
}

fn random_grid() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (1usize..10, 2usize..60, 0.0f64..0.6).prop_flat_map(|(rows, cols, density)| {
        prop::collection::vec(prop::collection::vec(prop::bool::weighted(density), cols), rows)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn single_long_segment_is_located_exactly((step, truth) in single_segment_line()) {
        let mut line = VecLine::new(truth.clone());
        let got = recursive_jump_line(&mut line, step, KeyMode::Prose).unwrap();
        prop_assert_eq!(got, exhaustive_segments(&truth));
        prop_assert!(line.probes as usize <= truth.len());
        if truth.len() >= 4 * step {
            prop_assert!((line.probes as usize) < truth.len());
        }
    }

    #[test]
    fn well_separated_segments_are_located_exactly((step, truth) in separated_segments_line()) {
        let mut line = VecLine::new(truth.clone());
        prop_assert_eq!(recursive_jump_line(&mut line, step, KeyMode::Prose).unwrap(), exhaustive_segments(&truth));
    }

    #[test]
    fn no_position_is_probed_twice(truth in prop::collection::vec(any::<bool>(), 1..80), half in 1usize..12) {
        let mut line = VecLine::new(truth.clone());
        recursive_jump_line(&mut line, 2 * half, KeyMode::Prose).unwrap();
        let mut t = line.trace.clone();
        t.sort_unstable();
        t.dedup();
        prop_assert_eq!(t.len(), line.trace.len());
    }

    #[test]
    fn recursive_dominates_fixed_step(grid in random_grid(), half in 1usize..11) {
        let step = 2 * half;
        let map = map_from(&grid);
        let rec = run_array_test(&map, TestMethod::Recursive, step, None).unwrap();
        let fix = run_array_test(&map, TestMethod::FixedStep, step, None).unwrap();
        prop_assert!(rec.coverage >= fix.coverage - 1e-12, "{} < {}", rec.coverage, fix.coverage);
        prop_assert!(rec.overhead <= 1.0 + 1e-12);
        prop_assert!(rec.probes >= fix.probes);
    }

    #[test]
    fn fixed_step_probes_every_lattice_point(grid in random_grid(), step in 1usize..20) {
        let map = map_from(&grid);
        let rep = run_array_test(&map, TestMethod::FixedStep, step, None).unwrap();
        let n = grid[0].len();
        let per_row = n.div_ceil(step) as u64;
        prop_assert_eq!(rep.probes, per_row * grid.len() as u64);
        prop_assert!((rep.overhead - per_row as f64 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn single_step_is_exact(grid in random_grid()) {
        let map = map_from(&grid);
        let rep = run_array_test(&map, TestMethod::SingleStep, 1, None).unwrap();
        prop_assert_eq!(rep.coverage, 1.0);
        prop_assert_eq!(rep.overhead, 1.0);
        let marked = grid.iter().flatten().filter(|&&f| f).count();
        prop_assert_eq!(rep.identified.len(), marked);
    }

    #[test]
    fn recursive_trace_is_deterministic(truth in prop::collection::vec(any::<bool>(), 1..80), half in 1usize..12) {
        let run = || {
            let mut line = VecLine::new(truth.clone());
            let segs = recursive_jump_line(&mut line, 2 * half, KeyMode::Prose).unwrap();
            (segs, line.trace)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn fixed_step_marks_runs_of_failing_probes(truth in prop::collection::vec(any::<bool>(), 1..80), step in 1usize..10) {
        let mut line = VecLine::new(truth.clone());
        let segs = fixed_step_line(&mut line, step).unwrap();
        let lattice: Vec<bool> = truth.iter().copied().step_by(step).collect();
        let expect: Vec<_> = exhaustive_segments(&lattice).into_iter().map(|(s, e)| (s * step, e * step)).collect();
        prop_assert_eq!(segs, expect);
    }
}

#[test]
fn odd_steps_are_rejected() {
    let mut line = VecLine::new(vec![false; 10]);
    assert!(recursive_jump_line(&mut line, 3, KeyMode::Prose).is_err());
    assert!(recursive_jump_line(&mut line, 0, KeyMode::Prose).is_err());
}
