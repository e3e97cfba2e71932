// SPDX-License-Identifier: Apache-2.0

//! Metallic-CNT defects: sampling over the floorplan, imperfect removal,
//! rasterization onto CLB footprints, mapping to LUT fault models, and
//! direct LUT-level fault injection.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArrayGeometry, Clb, FaultKind, FpgaArray, LutSite};
use crate::seed::{derive_seed, rng_from_seed};

/// Axis along which CNTs grow. Defects run along it and the four LUT bands
/// of a CLB are stacked along it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GrowthAxis {
    /// Along a tile row (increasing column index).
    #[default]
    Rows,
    /// Along a tile column (increasing row index).
    Columns,
}

/// Defect-generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefectParams {
    pub p_m: f64,
    pub p_rm: f64,
    /// Mean CNT length in μm.
    pub l_mu: f64,
    pub l_sigma: f64,
    pub p_mis: f64,
    /// Misalignment spread in degrees.
    pub angle_sigma: f64,
    pub p_open: f64,
    /// Candidate CNT sites per CLB footprint.
    pub cnt_per_clb: u32,
    pub growth_axis: GrowthAxis,
}

impl Default for DefectParams {
    fn default() -> Self {
        Self {
            p_m: 1e-4,
            p_rm: 0.0,
            l_mu: 55.0,
            l_sigma: 22.0,
            p_mis: 0.1,
            angle_sigma: 2.0,
            p_open: 0.0,
            cnt_per_clb: 8,
            growth_axis: GrowthAxis::Rows,
        }
    }
}

impl DefectParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_m", self.p_m),
            ("p_rm", self.p_rm),
            ("p_mis", self.p_mis),
            ("p_open", self.p_open),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Param(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.l_mu > 0.0) {
            return Err(Error::Param(format!("l_mu must be positive, got {}", self.l_mu)));
        }
        if !(self.l_sigma >= 0.0) || !(self.angle_sigma >= 0.0) {
            return Err(Error::Param("l_sigma and angle_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// One metallic CNT as a line segment in floorplan μm: `x` along columns,
/// `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCntDefect {
    pub start: (f64, f64),
    pub length: f64,
    /// Degrees from the growth axis.
    pub angle: f64,
    pub axis: GrowthAxis,
    pub removed: bool,
    pub opened: bool,
}

impl MCntDefect {
    pub fn aligned(start: (f64, f64), length: f64, axis: GrowthAxis) -> Self {
        Self {
            start,
            length,
            angle: 0.0,
            axis,
            removed: false,
            opened: false,
        }
    }

    /// Unit direction vector `(dx, dy)`.
    pub fn direction(&self) -> (f64, f64) {
        let a = self.angle.to_radians();
        match self.axis {
            GrowthAxis::Rows => (a.cos(), a.sin()),
            GrowthAxis::Columns => (a.sin(), a.cos()),
        }
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (dx, dy) = self.direction();
        (self.start.0 + t * dx, self.start.1 + t * dy)
    }

    /// Whether the defect leaves electrical damage behind.
    pub fn is_active(&self) -> bool {
        !self.removed || self.opened
    }
}

/// Parametric sub-interval `[t0, t1]` of the segment inside an axis-aligned
/// rectangle (Liang–Barsky), if non-empty.
pub fn clip_to_rect(d: &MCntDefect, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<(f64, f64)> {
    let (dx, dy) = d.direction();
    let (px, py) = d.start;
    let mut t0 = 0.0f64;
    let mut t1 = d.length;
    for (p, q) in [
        (-dx, px - x0),
        (dx, x1 - px),
        (-dy, py - y0),
        (dy, y1 - py),
    ] {
        if p.abs() < 1e-15 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// A positive-length piece of a defect inside one tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilePiece {
    pub row: usize,
    pub col: usize,
    pub t0: f64,
    pub t1: f64,
}

const OVERLAP_EPS: f64 = 1e-9;

/// Tiles whose footprint the segment crosses with positive length, in
/// increasing row-major order.
pub fn rasterize(d: &MCntDefect, geometry: &ArrayGeometry) -> Vec<TilePiece> {
    let p = geometry.pitch();
    let (w, h) = (geometry.n_cols as f64 * p, geometry.n_rows as f64 * p);
    let Some((a, b)) = clip_to_rect(d, 0.0, 0.0, w, h) else {
        return Vec::new();
    };
    if b - a <= OVERLAP_EPS {
        return Vec::new();
    }
    let (xa, ya) = d.point_at(a);
    let (xb, yb) = d.point_at(b);
    let idx = |v: f64, n: usize| ((v / p).floor().max(0.0) as usize).min(n - 1);
    let (c0, c1) = (idx(xa.min(xb), geometry.n_cols), idx(xa.max(xb), geometry.n_cols));
    let (r0, r1) = (idx(ya.min(yb), geometry.n_rows), idx(ya.max(yb), geometry.n_rows));
    let mut out = Vec::new();
    for row in r0..=r1 {
        for col in c0..=c1 {
            let (x0, y0) = (col as f64 * p, row as f64 * p);
            if let Some((t0, t1)) = clip_to_rect(d, x0, y0, x0 + p, y0 + p) {
                if t1 - t0 > OVERLAP_EPS {
                    out.push(TilePiece { row, col, t0, t1 });
                }
            }
        }
    }
    out
}

/// Per-tile and per-LUT fault assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultMap {
    pub n_rows: usize,
    pub n_cols: usize,
    pub luts_per_clb: usize,
    lut_faults: BTreeMap<LutSite, FaultKind>,
    carry_faults: BTreeMap<LutSite, (FaultKind, FaultKind)>,
    tile_faulty: Vec<bool>,
}

impl FaultMap {
    pub fn new(geometry: &ArrayGeometry) -> Self {
        Self {
            n_rows: geometry.n_rows,
            n_cols: geometry.n_cols,
            luts_per_clb: geometry.luts_per_clb,
            lut_faults: BTreeMap::new(),
            carry_faults: BTreeMap::new(),
            tile_faulty: vec![false; geometry.n_tiles()],
        }
    }

    fn check(&self, site: LutSite) -> Result<()> {
        if site.row < self.n_rows && site.col < self.n_cols && site.lut < self.luts_per_clb {
            Ok(())
        } else {
            Err(Error::Param(format!("site {site:?} outside the array")))
        }
    }

    /// Records a LUT fault unless the site already carries one. Returns
    /// whether the fault was recorded.
    pub fn insert(&mut self, site: LutSite, kind: FaultKind) -> Result<bool> {
        self.check(site)?;
        if kind.is_none() || self.lut_faults.contains_key(&site) {
            return Ok(false);
        }
        self.lut_faults.insert(site, kind);
        self.tile_faulty[site.row * self.n_cols + site.col] = true;
        Ok(true)
    }

    /// Records stuck-at faults on the MUX and XOR of carry stage `site.lut`.
    pub fn insert_carry(&mut self, site: LutSite, mux: FaultKind, xor: FaultKind) -> Result<()> {
        self.check(site)?;
        for f in [mux, xor] {
            if !matches!(f, FaultKind::None | FaultKind::StuckAt0 | FaultKind::StuckAt1) {
                return Err(Error::Param(format!("carry gates accept stuck-at only, got {f:?}")));
            }
        }
        if mux.is_none() && xor.is_none() {
            return Ok(());
        }
        self.carry_faults.insert(site, (mux, xor));
        self.tile_faulty[site.row * self.n_cols + site.col] = true;
        Ok(())
    }

    pub fn get(&self, site: LutSite) -> FaultKind {
        self.lut_faults.get(&site).copied().unwrap_or(FaultKind::None)
    }

    pub fn is_faulty(&self, row: usize, col: usize) -> bool {
        self.tile_faulty[row * self.n_cols + col]
    }

    pub fn n_faulty_tiles(&self) -> usize {
        self.tile_faulty.iter().filter(|&&f| f).count()
    }

    pub fn faulty_tiles(&self) -> Vec<(usize, usize)> {
        (0..self.n_rows)
            .flat_map(|r| (0..self.n_cols).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_faulty(r, c))
            .collect()
    }

    pub fn n_lut_faults(&self) -> usize {
        self.lut_faults.len()
    }

    pub fn is_clean(&self) -> bool {
        self.lut_faults.is_empty() && self.carry_faults.is_empty()
    }

    pub fn lut_faults(&self) -> impl Iterator<Item = (LutSite, FaultKind)> + '_ {
        self.lut_faults.iter().map(|(s, k)| (*s, *k))
    }

    /// The CLB at `(row, col)` of `array` with this map's faults applied.
    pub fn faulty_clb(&self, array: &FpgaArray, row: usize, col: usize) -> Clb {
        let mut clb = array.clb(row, col).clone();
        for (l, lut) in clb.luts.iter_mut().enumerate() {
            lut.fault = self.get(LutSite::new(row, col, l));
        }
        for (i, st) in clb.carry.iter_mut().enumerate() {
            if let Some(&(m, x)) = self.carry_faults.get(&LutSite::new(row, col, i)) {
                st.mux_fault = m;
                st.xor_fault = x;
            }
        }
        clb
    }

    /// Writes the fault state into the array's LUTs and carry stages.
    pub fn apply_to(&self, array: &mut FpgaArray) -> Result<()> {
        if (array.geometry.n_rows, array.geometry.n_cols) != (self.n_rows, self.n_cols) {
            return Err(Error::Param("fault map shape does not match the array".into()));
        }
        for (&site, &kind) in &self.lut_faults {
            array.lut_mut(site).fault = kind;
        }
        for (&site, &(m, x)) in &self.carry_faults {
            let st = &mut array.clb_mut(site.row, site.col).carry[site.lut];
            st.mux_fault = m;
            st.xor_fault = x;
        }
        Ok(())
    }

    /// CSV rows `(row, col, lut, kind)` for every faulty LUT.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["row", "col", "lut", "kind"])?;
        for (s, k) in self.lut_faults() {
            wr.write_record([
                s.row.to_string(),
                s.col.to_string(),
                s.lut.to_string(),
                k.code().to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn positive_normal<R: Rng>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu;
    }
    let n = Normal::new(mu, sigma).expect("finite normal parameters");
    loop {
        let v = n.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Samples the metallic CNTs of one array.
///
/// Every candidate site draws one uniform from the master stream; a site is
/// metallic when it falls below `p_m`, and its geometry and removal outcome
/// come from a stream keyed by the site index. Raising `p_m` therefore only
/// adds defects.
pub fn sample_defects(params: &DefectParams, geometry: &ArrayGeometry, seed: u64) -> Result<Vec<MCntDefect>> {
    params.validate()?;
    geometry.validate()?;
    let p = geometry.pitch();
    let (w, h) = (geometry.n_cols as f64 * p, geometry.n_rows as f64 * p);
    let n_sites = geometry.n_tiles() as u64 * params.cnt_per_clb as u64;
    let mut master = rng_from_seed(seed);
    let angle = Normal::new(0.0, params.angle_sigma.max(f64::MIN_POSITIVE)).expect("valid");
    let mut out = Vec::new();
    for site in 0..n_sites {
        let u: f64 = master.gen();
        if u >= params.p_m {
            continue;
        }
        let mut r = rng_from_seed(derive_seed(seed, site));
        let start = (r.gen::<f64>() * w, r.gen::<f64>() * h);
        let length = positive_normal(&mut r, params.l_mu, params.l_sigma);
        let misaligned = r.gen::<f64>() < params.p_mis;
        let mut a = 0.0;
        if misaligned && params.angle_sigma > 0.0 {
            loop {
                a = angle.sample(&mut r);
                if a.abs() < 89.0 {
                    break;
                }
            }
        }
        let removed = r.gen::<f64>() < params.p_rm;
        let opened = removed && r.gen::<f64>() < params.p_open;
        out.push(MCntDefect {
            start,
            length,
            angle: a,
            axis: params.growth_axis,
            removed,
            opened,
        });
    }
    Ok(out)
}

/// Fraction of a band that counts as a graze.
const GRAZE_FRACTION: f64 = 0.1;

/// Maps surviving defects onto LUT faults.
///
/// Each CLB is split into `luts_per_clb` equal bands stacked along the
/// defect's growth axis, band `i` belonging to LUT `i`. A band covered over
/// its whole length gets `MuxAlwaysSelect(0)`; a graze of at most a tenth of
/// the band gives a stuck-at whose polarity follows the tile-row parity;
/// anything in between shorts a sibling SRAM pair chosen by the cross-axis
/// position, as a wired-AND or wired-OR picked by a seeded coin. Opened
/// defects leave `Open` on every band they touch.
pub fn map_defects_to_faults(defects: &[MCntDefect], array: &FpgaArray) -> FaultMap {
    let g = &array.geometry;
    let p = g.pitch();
    let bands = g.luts_per_clb;
    let band_len = p / bands as f64;
    let half = 1usize << (g.lut_inputs - 1);
    let mut map = FaultMap::new(g);
    for (di, d) in defects.iter().enumerate() {
        if !d.is_active() {
            continue;
        }
        let (dx, dy) = d.direction();
        for piece in rasterize(d, g) {
            let (xa, ya) = d.point_at(piece.t0);
            let (xb, yb) = d.point_at(piece.t1);
            // Growth-axis and cross-axis coordinates relative to the tile.
            let (ga, gb, ca, cb) = match d.axis {
                GrowthAxis::Rows => {
                    let o = piece.col as f64 * p;
                    let q = piece.row as f64 * p;
                    (xa - o, xb - o, ya - q, yb - q)
                }
                GrowthAxis::Columns => {
                    let o = piece.row as f64 * p;
                    let q = piece.col as f64 * p;
                    (ya - o, yb - o, xa - q, xb - q)
                }
            };
            let (glo, ghi) = (ga.min(gb), ga.max(gb));
            let along = match d.axis {
                GrowthAxis::Rows => dx,
                GrowthAxis::Columns => dy,
            };
            for band in 0..bands {
                let b0 = band as f64 * band_len;
                let b1 = b0 + band_len;
                let overlap = ghi.min(b1) - glo.max(b0);
                if overlap <= OVERLAP_EPS {
                    continue;
                }
                let frac = overlap / band_len;
                let site = LutSite::new(piece.row, piece.col, band);
                let kind = if d.opened {
                    FaultKind::Open
                } else if frac >= 1.0 - 1e-9 {
                    FaultKind::MuxAlwaysSelect(0)
                } else if frac <= GRAZE_FRACTION {
                    if piece.row % 2 == 0 {
                        FaultKind::StuckAt0
                    } else {
                        FaultKind::StuckAt1
                    }
                } else {
                    // Cross-axis position at the middle of the band overlap.
                    let gm = 0.5 * (ghi.min(b1) + glo.max(b0));
                    let t = if along.abs() > 1e-12 { (gm - ga) / (gb - ga) } else { 0.5 };
                    let cm = ca + t.clamp(0.0, 1.0) * (cb - ca);
                    let m = ((cm / p * half as f64).floor().max(0.0) as usize).min(half - 1);
                    let (a, b) = (2 * m as u16, 2 * m as u16 + 1);
                    let coin = derive_seed(array.rng_seed ^ di as u64, (site.row * g.n_cols + site.col) as u64 * bands as u64 + band as u64);
                    if coin & 1 == 0 {
                        FaultKind::WiredAnd(a, b)
                    } else {
                        FaultKind::WiredOr(a, b)
                    }
                };
                map.insert(site, kind).expect("rasterized sites lie inside the array");
            }
        }
    }
    map
}

/// Spatial arrangement of directly injected faults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InjectionPattern {
    /// Uniform over LUT sites without replacement.
    Random,
    /// Square clusters grown ring by ring around `centers` seed tiles.
    Clustered { centers: usize },
    /// A `clustered_fraction` share placed in clusters, the rest random.
    Mixed { centers: usize, clustered_fraction: f64 },
}

/// Number of faults to inject per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InjectionCounts {
    pub stuck_at0: usize,
    pub stuck_at1: usize,
    pub mux: usize,
}

impl InjectionCounts {
    pub fn total(&self) -> usize {
        self.stuck_at0 + self.stuck_at1 + self.mux
    }
}

fn cluster_sites<R: Rng>(
    g: &ArrayGeometry,
    used: &mut HashSet<LutSite>,
    count: usize,
    centers: usize,
    rng: &mut R,
) -> Result<Vec<LutSite>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let centers = centers.clamp(1, count.min(g.n_tiles()));
    let picks = index::sample(rng, g.n_tiles(), centers).into_vec();
    let mut out = Vec::with_capacity(count);
    let reach = g.n_rows.max(g.n_cols) as isize;
    for (ci, tile) in picks.into_iter().enumerate() {
        let quota = count / centers + usize::from(ci < count % centers);
        let (r0, c0) = ((tile / g.n_cols) as isize, (tile % g.n_cols) as isize);
        let mut placed = 0;
        'grow: for d in 0..=reach {
            for r in (r0 - d)..=(r0 + d) {
                for c in (c0 - d)..=(c0 + d) {
                    if (r - r0).abs().max((c - c0).abs()) != d {
                        continue;
                    }
                    if r < 0 || c < 0 || r >= g.n_rows as isize || c >= g.n_cols as isize {
                        continue;
                    }
                    for l in 0..g.luts_per_clb {
                        if placed == quota {
                            break 'grow;
                        }
                        let s = LutSite::new(r as usize, c as usize, l);
                        if used.insert(s) {
                            out.push(s);
                            placed += 1;
                        }
                    }
                }
            }
        }
        if placed < quota {
            return Err(Error::Oversubscribed("cluster could not be filled".into()));
        }
    }
    Ok(out)
}

/// Injects LUT-level faults directly.
pub fn inject_faults(
    geometry: &ArrayGeometry,
    pattern: InjectionPattern,
    counts: InjectionCounts,
    seed: u64,
) -> Result<FaultMap> {
    geometry.validate()?;
    let total = counts.total();
    let n = geometry.n_luts();
    if total > n {
        return Err(Error::Oversubscribed(format!(
            "{total} faults requested for {n} LUT sites"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let (n_clustered, centers) = match pattern {
        InjectionPattern::Random => (0, 0),
        InjectionPattern::Clustered { centers } => (total, centers),
        InjectionPattern::Mixed { centers, clustered_fraction } => {
            if !(0.0..=1.0).contains(&clustered_fraction) {
                return Err(Error::Param("clustered_fraction must lie in [0, 1]".into()));
            }
            ((total as f64 * clustered_fraction).round() as usize, centers)
        }
    };
    let mut used = HashSet::new();
    let mut sites = cluster_sites(geometry, &mut used, n_clustered, centers, &mut rng)?;
    let rest = total - sites.len();
    if rest > 0 {
        let l = geometry.luts_per_clb;
        let site_of = |i: usize| LutSite::new(i / (geometry.n_cols * l), (i / l) % geometry.n_cols, i % l);
        if used.is_empty() {
            sites.extend(index::sample(&mut rng, n, rest).into_iter().map(site_of));
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !used.contains(&site_of(i))).collect();
            sites.extend(index::sample(&mut rng, free.len(), rest).into_iter().map(|j| site_of(free[j])));
        }
    }
    let mut kinds: Vec<u8> = std::iter::repeat(0u8)
        .take(counts.stuck_at0)
        .chain(std::iter::repeat(1).take(counts.stuck_at1))
        .chain(std::iter::repeat(2).take(counts.mux))
        .collect();
    kinds.shuffle(&mut rng);
    let n_cells = 1u16 << geometry.lut_inputs.min(15);
    let mut map = FaultMap::new(geometry);
    for (s, k) in sites.into_iter().zip(kinds) {
        let kind = match k {
            0 => FaultKind::StuckAt0,
            1 => FaultKind::StuckAt1,
            _ => FaultKind::MuxOverride(rng.gen_range(0..n_cells)),
        };
        map.insert(s, kind)?;
    }
    Ok(map)
}
