// SPDX-License-Identifier: Apache-2.0

//! Test sessions for a single CLB: the walking-basis LUT session, its
//! carry-chain extension and the split-multiplexer session, plus a
//! simulator and a parametric test-time model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{carry_chain_eval, Clb, TruthTable};

/// Session flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStyle {
    Traditional,
    WithCarryChain,
    Improved,
}

impl SessionStyle {
    pub fn name(&self) -> &'static str {
        match self {
            SessionStyle::Traditional => "traditional",
            SessionStyle::WithCarryChain => "with-carry-chain",
            SessionStyle::Improved => "improved",
        }
    }
}

/// One of the two carry-chain configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CarryConfig {
    /// Carry-in 0, externals 1, selects 1: MUX outputs 0, sums 1.
    First,
    /// Carry-in 1, externals 1, selects 0: MUX outputs 1, sums 0.
    Second,
}

impl CarryConfig {
    pub fn carry_in(&self) -> bool {
        matches!(self, CarryConfig::Second)
    }

    pub fn external(&self, _stage: usize) -> bool {
        true
    }

    pub fn select(&self, _stage: usize) -> bool {
        matches!(self, CarryConfig::First)
    }

    /// Expected `(mux_out, sum)` of every stage.
    pub fn expected_stage(&self) -> (bool, bool) {
        match self {
            CarryConfig::First => (false, true),
            CarryConfig::Second => (true, false),
        }
    }
}

/// One programming of the CLB under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfiguration {
    pub config_id: usize,
    pub lut_config_bits: TruthTable,
    /// Test-enable of the split multiplexer; the split test mode is active
    /// when this is `false`.
    pub et_mode: bool,
    pub carry_chain_settings: Option<CarryConfig>,
}

/// Ordered list of configurations, each with its input-pattern sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSession {
    pub k: usize,
    pub style: SessionStyle,
    pub configurations: Vec<TestConfiguration>,
    /// Per configuration, the applied input vectors as truth-table indices.
    pub patterns: Vec<Vec<u16>>,
}

impl TestSession {
    pub fn n_configurations(&self) -> usize {
        self.configurations.len()
    }

    pub fn n_patterns(&self) -> usize {
        self.patterns.iter().map(Vec::len).sum()
    }
}

fn check_k(k: usize) -> Result<()> {
    if (2..=8).contains(&k) {
        Ok(())
    } else {
        Err(Error::Param(format!("session k must be in [2, 8], got {k}")))
    }
}

/// Walking-basis configurations: `C_i` stores address bit `i-1`, the last
/// one stores the complement of address bit 0.
pub fn traditional_configs(k: usize) -> Vec<TruthTable> {
    let mut v: Vec<TruthTable> = (0..k)
        .map(|i| TruthTable::from_fn(k, |b| (b >> i) & 1 == 1))
        .collect();
    v.push(TruthTable::from_fn(k, |b| b & 1 == 0));
    v
}

/// The two complementary configurations of the split session.
pub fn improved_configs(k: usize) -> [TruthTable; 2] {
    let c1 = TruthTable::from_fn(k, |b| b & 1 == 0);
    [c1, c1.complement()]
}

/// The two carry-chain configurations.
pub fn gen_carry_chain_configs(k: usize) -> [TestConfiguration; 2] {
    [CarryConfig::First, CarryConfig::Second].map(|cc| TestConfiguration {
        config_id: 0,
        lut_config_bits: if cc.select(0) {
            TruthTable::ones(k)
        } else {
            TruthTable::zeros(k)
        },
        et_mode: true,
        carry_chain_settings: Some(cc),
    })
}

/// Builds a session; the split session includes its extra pattern.
pub fn gen_session(k: usize, style: SessionStyle) -> Result<TestSession> {
    gen_session_with(k, style, true)
}

/// Builds a session, optionally omitting the split session's extra
/// all-ones pattern.
pub fn gen_session_with(k: usize, style: SessionStyle, extra_pattern: bool) -> Result<TestSession> {
    check_k(k)?;
    let n = 1u16 << k;
    let half = n / 2;
    let mut configurations = Vec::new();
    let mut patterns = Vec::new();
    match style {
        SessionStyle::Traditional | SessionStyle::WithCarryChain => {
            for cfg in traditional_configs(k) {
                configurations.push(TestConfiguration {
                    config_id: 0,
                    lut_config_bits: cfg,
                    et_mode: true,
                    carry_chain_settings: None,
                });
                patterns.push((0..n).collect());
            }
            if style == SessionStyle::WithCarryChain {
                for c in gen_carry_chain_configs(k) {
                    configurations.push(c);
                    patterns.push(vec![0]);
                }
            }
        }
        SessionStyle::Improved => {
            for (i, cfg) in improved_configs(k).into_iter().enumerate() {
                configurations.push(TestConfiguration {
                    config_id: 0,
                    lut_config_bits: cfg,
                    et_mode: false,
                    carry_chain_settings: None,
                });
                let mut p: Vec<u16> = (0..half).collect();
                if i == 1 && extra_pattern {
                    p.push(n - 1);
                }
                patterns.push(p);
            }
        }
    }
    for (i, c) in configurations.iter_mut().enumerate() {
        c.config_id = i;
    }
    Ok(TestSession {
        k,
        style,
        configurations,
        patterns,
    })
}

/// Observation point where a mismatch was seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectedSite {
    Lut(usize),
    CarrySum(usize),
    CarryOut,
}

/// Result of running a session against one CLB.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SessionOutcome {
    pub pass: bool,
    pub detected: BTreeSet<DetectedSite>,
}

#[derive(PartialEq)]
enum Observation {
    Luts(Vec<(bool, bool)>),
    Carry(Vec<bool>, bool),
}

fn observe(clb: &Clb, cfg: &TestConfiguration, pattern: u16, k: usize) -> Result<Observation> {
    let half = 1usize << (k - 1);
    let p = pattern as usize;
    let program = |i: usize| {
        let mut l = clb.luts[i];
        l.config_bits = cfg.lut_config_bits;
        l
    };
    if let Some(cc) = cfg.carry_chain_settings {
        let n = clb.carry.len();
        let selects: Vec<bool> = clb
            .carry
            .iter()
            .map(|st| program(st.lut_ref).eval_index(p))
            .collect();
        let ext: Vec<bool> = (0..n).map(|i| cc.external(i)).collect();
        let (sums, cout) = carry_chain_eval(&clb.carry, &selects, cc.carry_in(), &ext)?;
        return Ok(Observation::Carry(sums, cout));
    }
    let outs = (0..clb.luts.len())
        .map(|i| {
            let l = program(i);
            if cfg.et_mode {
                let v = l.eval_index(p);
                (v, v)
            } else {
                l.eval_split(p & (half - 1), p >= half)
            }
        })
        .collect();
    Ok(Observation::Luts(outs))
}

/// Runs every (configuration, pattern) pair and compares with the
/// responses of a fault-free copy of the CLB.
pub fn simulate_session(clb: &Clb, session: &TestSession) -> Result<SessionOutcome> {
    if clb.k() != session.k {
        return Err(Error::Param(format!(
            "session k = {} does not match CLB k = {}",
            session.k,
            clb.k()
        )));
    }
    let golden_clb = clb.fault_free();
    let mut detected = BTreeSet::new();
    for (cfg, pats) in session.configurations.iter().zip(&session.patterns) {
        for &p in pats {
            let got = observe(clb, cfg, p, session.k)?;
            let want = observe(&golden_clb, cfg, p, session.k)?;
            match (got, want) {
                (Observation::Luts(g), Observation::Luts(w)) => {
                    for (i, (a, b)) in g.iter().zip(&w).enumerate() {
                        if a != b {
                            detected.insert(DetectedSite::Lut(i));
                        }
                    }
                }
                (Observation::Carry(gs, gc), Observation::Carry(ws, wc)) => {
                    for (i, (a, b)) in gs.iter().zip(&ws).enumerate() {
                        if a != b {
                            detected.insert(DetectedSite::CarrySum(i));
                        }
                    }
                    if gc != wc {
                        detected.insert(DetectedSite::CarryOut);
                    }
                }
                _ => unreachable!("observation shape depends only on the configuration"),
            }
        }
    }
    Ok(SessionOutcome {
        pass: detected.is_empty(),
        detected,
    })
}

/// Per-configuration load time and per-pattern application time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub t_config: f64,
    pub t_pattern: f64,
}

impl Default for TimingParams {
    /// One configuration frame load of 10 μs, patterns at 100 MHz.
    fn default() -> Self {
        Self {
            t_config: 10e-6,
            t_pattern: 10e-9,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_config > 0.0 && self.t_pattern > 0.0 {
            Ok(())
        } else {
            Err(Error::Param("t_config and t_pattern must be positive".into()))
        }
    }
}

/// `n_configurations * t_config + n_patterns * t_pattern`. A split-session
/// pattern observes both half networks at once and counts once.
pub fn estimate_test_time(session: &TestSession, timing: &TimingParams) -> f64 {
    session.n_configurations() as f64 * timing.t_config
        + session.n_patterns() as f64 * timing.t_pattern
}

/// Relative time saved by the split session against the walking session.
pub fn improved_reduction(k: usize, timing: &TimingParams) -> Result<f64> {
    let t = estimate_test_time(&gen_session(k, SessionStyle::Traditional)?, timing);
    let i = estimate_test_time(&gen_session(k, SessionStyle::Improved)?, timing);
    Ok(1.0 - i / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CarryChainStage, FaultKind, LutInstance, PassTransistor};

    fn clb_with(k: usize, lut: usize, fault: FaultKind) -> Clb {
        let mut c = Clb::new(4, k);
        c.luts[lut].fault = fault;
        c
    }

    #[test]
    fn session_sizes() {
        let t = gen_session(3, SessionStyle::Traditional).unwrap();
        assert_eq!(t.n_configurations(), 4);
        assert!(t.patterns.iter().all(|p| p.len() == 8));
        let i = gen_session(3, SessionStyle::Improved).unwrap();
        assert_eq!(i.n_configurations(), 2);
        assert_eq!(i.patterns[0].len(), 4);
        assert_eq!(i.patterns[1].len(), 5);
        assert_eq!(*i.patterns[1].last().unwrap(), 0b111);
        let c = gen_session(6, SessionStyle::WithCarryChain).unwrap();
        assert_eq!(c.n_configurations(), 9);
        assert!(gen_session(9, SessionStyle::Traditional).is_err());
        assert!(gen_session(1, SessionStyle::Improved).is_err());
    }

    #[test]
    fn session_sizes_follow_formula() {
        for k in 2..=8 {
            let t = gen_session(k, SessionStyle::Traditional).unwrap();
            assert_eq!(t.n_configurations(), k + 1);
            assert!(t.patterns.iter().all(|p| p.len() == 1 << k));
            let c = gen_session(k, SessionStyle::WithCarryChain).unwrap();
            assert_eq!(c.n_configurations(), k + 3);
            let i = gen_session(k, SessionStyle::Improved).unwrap();
            assert_eq!(i.n_patterns(), (1 << k) + 1);
        }
    }

    #[test]
    fn traditional_configs_match_k3_figure() {
        let c = traditional_configs(3);
        assert_eq!(c[0].to_bit_string(), "01010101");
        assert_eq!(c[1].to_bit_string(), "00110011");
        assert_eq!(c[2].to_bit_string(), "00001111");
        assert_eq!(c[3].to_bit_string(), "10101010");
        let [i1, i2] = improved_configs(3);
        assert_eq!(i1.to_bit_string(), "10101010");
        assert_eq!(i2.to_bit_string(), "01010101");
        // The extra pattern reads SRAM-3 and SRAM-7, both 1 in C2.
        assert!(i2.get(3) && i2.get(7));
    }

    #[test]
    fn carry_configs_expected_values() {
        let [c1, c2] = gen_carry_chain_configs(6);
        let cc1 = c1.carry_chain_settings.unwrap();
        let cc2 = c2.carry_chain_settings.unwrap();
        for n in 1..=16 {
            let stages: Vec<_> = (0..n).map(CarryChainStage::new).collect();
            for cc in [cc1, cc2] {
                let sel: Vec<bool> = (0..n).map(|i| cc.select(i)).collect();
                let ext: Vec<bool> = (0..n).map(|i| cc.external(i)).collect();
                let (sums, cout) = carry_chain_eval(&stages, &sel, cc.carry_in(), &ext).unwrap();
                let (m, s) = cc.expected_stage();
                assert!(sums.iter().all(|&x| x == s));
                assert_eq!(cout, m);
                // Each stage computes XNOR(external, incoming carry).
                let mut carry = cc.carry_in();
                for i in 0..n {
                    let xnor = !(ext[i] ^ carry);
                    let mux = if sel[i] { carry } else { ext[i] };
                    assert_eq!(mux, xnor);
                    carry = mux;
                }
            }
            assert_ne!(cc1.expected_stage(), cc2.expected_stage());
        }
        // First stage of config 1 with carry-in 0: MUX 0, XOR 1.
        let st = [CarryChainStage::new(0)];
        let (s, c) = carry_chain_eval(&st, &[cc1.select(0)], cc1.carry_in(), &[cc1.external(0)]).unwrap();
        assert!(!cc1.carry_in());
        assert_eq!((c, s[0]), (false, true));
    }

    #[test]
    fn carry_xor_stuck_at_one_is_detected() {
        let [c1, c2] = gen_carry_chain_configs(6);
        let mut stages: Vec<_> = (0..4).map(CarryChainStage::new).collect();
        stages[2].xor_fault = FaultKind::StuckAt1;
        let run = |cc: CarryConfig| {
            let sel: Vec<bool> = (0..4).map(|i| cc.select(i)).collect();
            let ext = vec![true; 4];
            carry_chain_eval(&stages, &sel, cc.carry_in(), &ext).unwrap().0
        };
        let s1 = run(c1.carry_chain_settings.unwrap());
        let s2 = run(c2.carry_chain_settings.unwrap());
        assert!(s1[2] && s2[2]);
        assert!(!c2.carry_chain_settings.unwrap().expected_stage().1);
    }

    #[test]
    fn fault_free_passes_every_style() {
        for k in 2..=6 {
            let clb = Clb::new(4, k);
            for style in [SessionStyle::Traditional, SessionStyle::WithCarryChain, SessionStyle::Improved] {
                let out = simulate_session(&clb, &gen_session(k, style).unwrap()).unwrap();
                assert!(out.pass, "k={k} {style:?}");
            }
        }
    }

    #[test]
    fn cell_stuck_at_one_detected_by_traditional() {
        for k in 2..=6 {
            let s = gen_session(k, SessionStyle::Traditional).unwrap();
            for cell in 0..(1u16 << k) {
                let clb = clb_with(k, 1, FaultKind::CellStuckAt { cell, value: true });
                let out = simulate_session(&clb, &s).unwrap();
                assert!(out.detected.contains(&DetectedSite::Lut(1)), "k={k} cell={cell}");
                assert_eq!(out.detected.len(), 1);
            }
        }
    }

    #[test]
    fn stuck_on_needs_extra_pattern() {
        let with = gen_session_with(3, SessionStyle::Improved, true).unwrap();
        let without = gen_session_with(3, SessionStyle::Improved, false).unwrap();
        for t in [PassTransistor::TA, PassTransistor::TB] {
            let clb = clb_with(3, 0, FaultKind::StuckOn(t));
            assert!(simulate_session(&clb, &without).unwrap().pass);
            assert!(!simulate_session(&clb, &with).unwrap().pass);
        }
    }

    #[test]
    fn session_k_mismatch_rejected() {
        let s = gen_session(4, SessionStyle::Traditional).unwrap();
        assert!(simulate_session(&Clb::new(4, 3), &s).is_err());
    }

    #[test]
    fn test_time_limits() {
        let tm = TimingParams {
            t_config: 1.0,
            t_pattern: 1e-30,
        };
        for k in 3..=6 {
            let r = improved_reduction(k, &tm).unwrap();
            assert!((1.0 - r - 2.0 / (k as f64 + 1.0)).abs() < 1e-9);
        }
        let s = gen_session(3, SessionStyle::Traditional).unwrap();
        let tm = TimingParams {
            t_config: 2.0,
            t_pattern: 0.5,
        };
        assert_eq!(estimate_test_time(&s, &tm), 4.0 * 2.0 + 32.0 * 0.5);
    }

    #[test]
    fn improved_programming_is_used() {
        // In split mode a MUX override on NW2 is seen on O2' only.
        let mut clb = Clb::new(1, 3);
        clb.luts[0] = LutInstance::new(3).with_fault(FaultKind::MuxAlwaysSelect(4));
        let s = gen_session(3, SessionStyle::Improved).unwrap();
        assert!(!simulate_session(&clb, &s).unwrap().pass);
    }
}
