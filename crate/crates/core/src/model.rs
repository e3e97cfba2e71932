// SPDX-License-Identifier: Apache-2.0

//! Logical and physical model of the simulated FPGA: tile grid, CLBs, LUTs
//! and the carry chain, with fault-aware evaluation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tile grid and CLB floorplan parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_rows: usize,
    pub n_cols: usize,
    pub luts_per_clb: usize,
    pub lut_inputs: usize,
    /// CLB footprint in transistor units.
    pub clb_area: f64,
    /// Area of one transistor unit in μm².
    pub t_area: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            n_rows: 49,
            n_cols: 49,
            luts_per_clb: 4,
            lut_inputs: 6,
            clb_area: 27698.0,
            t_area: 2.2e-3,
        }
    }
}

impl ArrayGeometry {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            ..Self::default()
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.lut_inputs = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::Geometry(format!(
                "grid must be non-empty, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !(2..=8).contains(&self.lut_inputs) {
            return Err(Error::Geometry(format!(
                "lut_inputs must be in [2, 8], got {}",
                self.lut_inputs
            )));
        }
        if self.luts_per_clb == 0 {
            return Err(Error::Geometry("luts_per_clb must be >= 1".into()));
        }
        clb_pitch(self)?;
        Ok(())
    }

    pub fn n_tiles(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn n_luts(&self) -> usize {
        self.n_tiles() * self.luts_per_clb
    }

    /// Side of the square CLB footprint in μm.
    pub fn pitch(&self) -> f64 {
        (self.clb_area * self.t_area).sqrt()
    }

    pub fn clb_pitch_x(&self) -> f64 {
        self.pitch()
    }

    pub fn clb_pitch_y(&self) -> f64 {
        self.pitch()
    }
}

/// Side of the square CLB footprint: `sqrt(clb_area * t_area)` μm.
pub fn clb_pitch(geometry: &ArrayGeometry) -> Result<f64> {
    let (a, t) = (geometry.clb_area, geometry.t_area);
    if !(a > 0.0 && a.is_finite()) || !(t > 0.0 && t.is_finite()) {
        return Err(Error::Geometry(format!(
            "clb_area and t_area must be positive, got {a} and {t}"
        )));
    }
    Ok((a * t).sqrt())
}

/// Truth table of up to 2^8 configuration bits, bit 0 first.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TruthTable {
    words: [u64; 4],
    k: u8,
}

impl TruthTable {
    pub fn zeros(k: usize) -> Self {
        assert!((1..=8).contains(&k), "k out of range: {k}");
        Self {
            words: [0; 4],
            k: k as u8,
        }
    }

    pub fn ones(k: usize) -> Self {
        Self::from_fn(k, |_| true)
    }

    pub fn from_fn(k: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut t = Self::zeros(k);
        for i in 0..t.len() {
            t.set(i, f(i));
        }
        t
    }

    /// Parses a string of `0`/`1` characters, character `i` being bit `i`.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let n = s.len();
        if !n.is_power_of_two() || !(2..=256).contains(&n) {
            return Err(Error::Param(format!("bit string length {n} is not 2^k")));
        }
        let k = n.trailing_zeros() as usize;
        let mut t = Self::zeros(k);
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => t.set(i, true),
                _ => return Err(Error::Param(format!("invalid bit character {c:?}"))),
            }
        }
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn len(&self) -> usize {
        1 << self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len());
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len(), "bit index {i} out of range");
        let m = 1u64 << (i & 63);
        if v {
            self.words[i >> 6] |= m;
        } else {
            self.words[i >> 6] &= !m;
        }
    }

    pub fn complement(&self) -> Self {
        Self::from_fn(self.k(), |i| !self.get(i))
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len())
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for TruthTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TruthTable({})", self.to_bit_string())
    }
}

impl Serialize for TruthTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for TruthTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TruthTable::from_bit_str(&s).map_err(serde::de::Error::custom)
    }
}

/// Root pass devices of the split LUT multiplexer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PassTransistor {
    /// Root device of the lower half network (NW1).
    TA,
    /// Root device of the upper half network (NW2).
    TB,
}

/// Fault model attached to a LUT or carry-chain gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultKind {
    None,
    StuckAt0,
    StuckAt1,
    MuxOverride(u16),
    MuxAlwaysSelect(u16),
    WiredAnd(u16, u16),
    WiredOr(u16, u16),
    StuckOn(PassTransistor),
    Open,
    /// A single SRAM cell permanently holding `value`.
    CellStuckAt { cell: u16, value: bool },
}

impl FaultKind {
    pub fn is_none(&self) -> bool {
        matches!(self, FaultKind::None)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let n = 1usize << k;
        let check = |i: u16| {
            if (i as usize) < n {
                Ok(())
            } else {
                Err(Error::Param(format!("{self:?}: index {i} >= 2^{k}")))
            }
        };
        match *self {
            FaultKind::MuxOverride(j) | FaultKind::MuxAlwaysSelect(j) => check(j),
            FaultKind::CellStuckAt { cell, .. } => check(cell),
            FaultKind::WiredAnd(a, b) | FaultKind::WiredOr(a, b) => {
                check(a)?;
                check(b)?;
                if a == b {
                    Err(Error::Param(format!("{self:?}: wired pair must be distinct")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Short code used in fault-map CSV files.
    pub fn code(&self) -> &'static str {
        match self {
            FaultKind::None => "-",
            FaultKind::StuckAt0 => "0",
            FaultKind::StuckAt1 => "1",
            FaultKind::MuxOverride(_) | FaultKind::MuxAlwaysSelect(_) => "M",
            FaultKind::WiredAnd(..) => "WA",
            FaultKind::WiredOr(..) => "WO",
            FaultKind::StuckOn(_) => "SO",
            FaultKind::Open => "OP",
            FaultKind::CellStuckAt { value: false, .. } => "C0",
            FaultKind::CellStuckAt { value: true, .. } => "C1",
        }
    }
}

/// One LUT: 2^k configuration bits plus its fault state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LutInstance {
    pub config_bits: TruthTable,
    pub fault: FaultKind,
}

impl LutInstance {
    pub fn new(k: usize) -> Self {
        Self {
            config_bits: TruthTable::zeros(k),
            fault: FaultKind::None,
        }
    }

    pub fn with_config(config_bits: TruthTable) -> Self {
        Self {
            config_bits,
            fault: FaultKind::None,
        }
    }

    pub fn with_fault(mut self, fault: FaultKind) -> Self {
        self.fault = fault;
        self
    }

    pub fn k(&self) -> usize {
        self.config_bits.k()
    }

    fn half(&self) -> usize {
        self.config_bits.len() / 2
    }

    fn cell(&self, i: usize) -> bool {
        match self.fault {
            FaultKind::CellStuckAt { cell, value } if cell as usize == i => value,
            _ => self.config_bits.get(i),
        }
    }

    /// Normal-mode output for select index `sel`.
    pub fn eval_index(&self, sel: usize) -> bool {
        let half = self.half();
        match self.fault {
            FaultKind::None | FaultKind::CellStuckAt { .. } => self.cell(sel),
            FaultKind::StuckAt0 | FaultKind::Open => false,
            FaultKind::StuckAt1 => true,
            FaultKind::MuxOverride(j) | FaultKind::MuxAlwaysSelect(j) => self.cell(j as usize),
            FaultKind::WiredAnd(a, b) => {
                let (a, b) = (a as usize, b as usize);
                if sel == a || sel == b {
                    self.cell(a) && self.cell(b)
                } else {
                    self.cell(sel)
                }
            }
            FaultKind::WiredOr(a, b) => {
                let (a, b) = (a as usize, b as usize);
                if sel == a || sel == b {
                    self.cell(a) || self.cell(b)
                } else {
                    self.cell(sel)
                }
            }
            // A conducting root device of the deselected network wires its
            // path onto the output.
            FaultKind::StuckOn(PassTransistor::TA) if sel >= half => {
                self.cell(sel) || self.cell(sel - half)
            }
            FaultKind::StuckOn(PassTransistor::TB) if sel < half => {
                self.cell(sel) || self.cell(sel + half)
            }
            FaultKind::StuckOn(_) => self.cell(sel),
        }
    }

    /// Value driven by the half network that owns cell `idx`.
    fn network_value(&self, idx: usize) -> bool {
        let half = self.half();
        match self.fault {
            FaultKind::MuxOverride(j) | FaultKind::MuxAlwaysSelect(j)
                if (j as usize >= half) == (idx >= half) =>
            {
                self.cell(j as usize)
            }
            FaultKind::WiredAnd(a, b) if idx == a as usize || idx == b as usize => {
                self.cell(a as usize) && self.cell(b as usize)
            }
            FaultKind::WiredOr(a, b) if idx == a as usize || idx == b as usize => {
                self.cell(a as usize) || self.cell(b as usize)
            }
            _ => self.cell(idx),
        }
    }

    /// Test-mode outputs `(O2, O2')` of the split multiplexer.
    ///
    /// `lower` is the select index within a half network. With
    /// `roots_off == false` both root devices conduct, so NW1 path `lower`
    /// and NW2 path `lower + 2^(k-1)` are observed in parallel. With
    /// `roots_off == true` both devices must block and only a stuck-on
    /// device lets its network through.
    pub fn eval_split(&self, lower: usize, roots_off: bool) -> (bool, bool) {
        let half = self.half();
        debug_assert!(lower < half);
        match self.fault {
            FaultKind::StuckAt0 | FaultKind::Open => return (false, false),
            FaultKind::StuckAt1 => return (true, true),
            _ => {}
        }
        if !roots_off {
            return (self.network_value(lower), self.network_value(lower + half));
        }
        let o2 = self.fault == FaultKind::StuckOn(PassTransistor::TA) && self.network_value(lower);
        let o2p = self.fault == FaultKind::StuckOn(PassTransistor::TB)
            && self.network_value(lower + half);
        (o2, o2p)
    }
}

/// Truth-table index of an input vector, `inputs[i]` being `I_i`.
pub fn input_index(inputs: &[bool]) -> usize {
    inputs
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | ((b as usize) << i))
}

/// Evaluates a LUT in normal mode.
pub fn lut_eval(lut: &LutInstance, inputs: &[bool]) -> Result<bool> {
    if inputs.len() != lut.k() {
        return Err(Error::Length {
            expected: lut.k(),
            got: inputs.len(),
        });
    }
    Ok(lut.eval_index(input_index(inputs)))
}

/// One carry-chain stage: a select MUX and a sum XOR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarryChainStage {
    pub mux_fault: FaultKind,
    pub xor_fault: FaultKind,
    pub lut_ref: usize,
}

impl CarryChainStage {
    pub fn new(lut_ref: usize) -> Self {
        Self {
            mux_fault: FaultKind::None,
            xor_fault: FaultKind::None,
            lut_ref,
        }
    }
}

fn gate_out(fault: FaultKind, v: bool) -> Result<bool> {
    match fault {
        FaultKind::None => Ok(v),
        FaultKind::StuckAt0 => Ok(false),
        FaultKind::StuckAt1 => Ok(true),
        other => Err(Error::Param(format!(
            "carry-chain gates accept only stuck-at faults, got {other:?}"
        ))),
    }
}

/// Evaluates the carry chain. Stage `i` selects the previous carry when
/// `lut_outputs[i]` is 1 and `external[i]` otherwise; its sum is
/// `carry XOR external[i]`.
pub fn carry_chain_eval(
    stages: &[CarryChainStage],
    lut_outputs: &[bool],
    carry_in: bool,
    external: &[bool],
) -> Result<(Vec<bool>, bool)> {
    for len in [lut_outputs.len(), external.len()] {
        if len != stages.len() {
            return Err(Error::Length {
                expected: stages.len(),
                got: len,
            });
        }
    }
    let mut carry = carry_in;
    let mut sums = Vec::with_capacity(stages.len());
    for (i, st) in stages.iter().enumerate() {
        sums.push(gate_out(st.xor_fault, carry ^ external[i])?);
        let mux = if lut_outputs[i] { carry } else { external[i] };
        carry = gate_out(st.mux_fault, mux)?;
    }
    Ok((sums, carry))
}

/// One CLB: its LUTs and carry-chain stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clb {
    pub luts: Vec<LutInstance>,
    pub carry: Vec<CarryChainStage>,
}

impl Clb {
    pub fn new(luts_per_clb: usize, k: usize) -> Self {
        Self {
            luts: vec![LutInstance::new(k); luts_per_clb],
            carry: (0..luts_per_clb).map(CarryChainStage::new).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.luts.first().map_or(0, LutInstance::k)
    }

    pub fn is_faulty(&self) -> bool {
        self.luts.iter().any(|l| !l.fault.is_none())
            || self
                .carry
                .iter()
                .any(|c| !c.mux_fault.is_none() || !c.xor_fault.is_none())
    }

    /// Copy of this CLB with every fault cleared.
    pub fn fault_free(&self) -> Self {
        let mut c = self.clone();
        for l in &mut c.luts {
            l.fault = FaultKind::None;
        }
        for s in &mut c.carry {
            s.mux_fault = FaultKind::None;
            s.xor_fault = FaultKind::None;
        }
        c
    }
}

/// Address of one LUT in the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LutSite {
    pub row: usize,
    pub col: usize,
    pub lut: usize,
}

impl LutSite {
    pub fn new(row: usize, col: usize, lut: usize) -> Self {
        Self { row, col, lut }
    }
}

/// The tile grid, one CLB per tile, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpgaArray {
    pub geometry: ArrayGeometry,
    pub tiles: Vec<Clb>,
    pub rng_seed: u64,
}

impl FpgaArray {
    pub fn clb(&self, row: usize, col: usize) -> &Clb {
        &self.tiles[row * self.geometry.n_cols + col]
    }

    pub fn clb_mut(&mut self, row: usize, col: usize) -> &mut Clb {
        let n = self.geometry.n_cols;
        &mut self.tiles[row * n + col]
    }

    pub fn lut(&self, site: LutSite) -> &LutInstance {
        &self.clb(site.row, site.col).luts[site.lut]
    }

    pub fn lut_mut(&mut self, site: LutSite) -> &mut LutInstance {
        &mut self.clb_mut(site.row, site.col).luts[site.lut]
    }

    /// All LUT sites in row-major order (tile row, tile column, LUT).
    pub fn lut_sites(&self) -> impl Iterator<Item = LutSite> + '_ {
        let g = &self.geometry;
        (0..g.n_rows).flat_map(move |r| {
            (0..g.n_cols).flat_map(move |c| (0..g.luts_per_clb).map(move |l| LutSite::new(r, c, l)))
        })
    }
}

/// Builds a fault-free array with all-zero configuration bits.
pub fn build_array(geometry: &ArrayGeometry, seed: u64) -> Result<FpgaArray> {
    geometry.validate()?;
    let clb = Clb::new(geometry.luts_per_clb, geometry.lut_inputs);
    Ok(FpgaArray {
        geometry: geometry.clone(),
        tiles: vec![clb; geometry.n_tiles()],
        rng_seed: seed,
    })
}
