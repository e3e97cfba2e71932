// SPDX-License-Identifier: Apache-2.0

//! JSON run configuration and its validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array_test::{TestMethod, TileMask};
use crate::clb_test::{SessionStyle, TimingParams};
use crate::defects::{DefectParams, InjectionCounts, InjectionPattern};
use crate::delay::DelayModelParams;
use crate::error::{Error, Result};
use crate::model::ArrayGeometry;
use crate::redundancy::SharingScheme;

/// Experiment pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Delay,
    RoTest,
    ClbTest,
    ArrayTest,
    Inject,
    Repair,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Delay,
        Experiment::RoTest,
        Experiment::ClbTest,
        Experiment::ArrayTest,
        Experiment::Inject,
        Experiment::Repair,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Delay => "delay",
            Experiment::RoTest => "ro-test",
            Experiment::ClbTest => "clb-test",
            Experiment::ArrayTest => "array-test",
            Experiment::Inject => "inject",
            Experiment::Repair => "repair",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(Experiment::name).collect();
                Error::Config(format!("unknown experiment {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Interconnect delay and ring-oscillator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayBlock {
    pub mu_d_nm: f64,
    pub sigma_d_nm: f64,
    pub p_metal: f64,
    /// Chirality values compared by the delay experiment.
    pub p_metal_compare: Vec<f64>,
    /// Fixed outer diameters of the d_max sweep.
    pub d_max_sweep_nm: Vec<f64>,
    pub d_max_sweep_samples: usize,
    /// Adjacent-CLB hop length; the CLB pitch when absent.
    pub hop_length_um: Option<f64>,
    pub stage_count: usize,
    pub threshold_sigmas: f64,
    pub noise_pct: f64,
    /// Fit the calibration scale to `target_loop_delay_ns` before running.
    pub calibrate: bool,
    pub target_loop_delay_ns: f64,
    pub model: DelayModelParams,
}

impl Default for DelayBlock {
    fn default() -> Self {
        Self {
            mu_d_nm: 11.0,
            sigma_d_nm: 1.65,
            p_metal: 1.0 / 3.0,
            p_metal_compare: vec![0.33, 0.53],
            d_max_sweep_nm: vec![6.0, 8.0, 10.0, 11.0, 12.0, 14.0, 16.0],
            d_max_sweep_samples: 2000,
            hop_length_um: None,
            stage_count: 7,
            threshold_sigmas: 3.0,
            noise_pct: 1.0,
            calibrate: true,
            target_loop_delay_ns: 2.70,
            model: DelayModelParams::default(),
        }
    }
}

/// CLB and array test settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestBlock {
    pub styles: Vec<SessionStyle>,
    pub k_values: Vec<usize>,
    pub timing: TimingParams,
    pub methods: Vec<TestMethod>,
    pub initial_steps: Vec<usize>,
    pub p_m_sweep: Vec<f64>,
    /// Tile-usage mask file for application-dependent testing.
    pub mask: Option<PathBuf>,
    /// Synthetic mask utilization, used when no mask file is given.
    pub mask_utilization: Option<f64>,
}

impl Default for TestBlock {
    fn default() -> Self {
        Self {
            styles: vec![SessionStyle::Traditional, SessionStyle::WithCarryChain, SessionStyle::Improved],
            k_values: vec![3, 4, 5, 6],
            timing: TimingParams::default(),
            methods: vec![TestMethod::Recursive, TestMethod::FixedStep, TestMethod::SingleStep],
            initial_steps: vec![4, 8, 12, 16, 20],
            p_m_sweep: vec![1e-4, 2e-4, 3e-4, 4e-4, 5e-4],
            mask: None,
            mask_utilization: None,
        }
    }
}

/// Direct LUT-level fault injection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectionBlock {
    pub geometry: ArrayGeometry,
    pub pattern: InjectionPattern,
    pub counts: InjectionCounts,
    /// Width in tiles of the blocks the row procedures run over.
    pub block_width: usize,
    pub initial_step: usize,
    pub methods: Vec<TestMethod>,
}

impl Default for InjectionBlock {
    fn default() -> Self {
        Self {
            geometry: ArrayGeometry::new(391, 391),
            pattern: InjectionPattern::Mixed {
                centers: 175,
                clustered_fraction: 0.83,
            },
            counts: InjectionCounts {
                stuck_at0: 22_121,
                stuck_at1: 14_764,
                mux: 14_693,
            },
            block_width: 49,
            initial_step: 4,
            methods: vec![TestMethod::Recursive, TestMethod::FixedStep, TestMethod::SingleStep],
        }
    }
}

/// Spare-row repair settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedundancyBlock {
    pub schemes: Vec<u8>,
    pub geometry: ArrayGeometry,
    /// Metallic-CNT probability for the repair population.
    pub p_m: f64,
}

impl Default for RedundancyBlock {
    fn default() -> Self {
        Self {
            schemes: (0..8).collect(),
            geometry: ArrayGeometry::new(391, 391),
            p_m: 1.5e-4,
        }
    }
}

fn default_samples() -> usize {
    1000
}

fn default_seed() -> u64 {
    2024
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub defects: DefectParams,
    #[serde(default)]
    pub delay: DelayBlock,
    #[serde(default)]
    pub test: TestBlock,
    #[serde(default)]
    pub injection: InjectionBlock,
    #[serde(default)]
    pub redundancy: RedundancyBlock,
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            samples: default_samples(),
            master_seed: default_seed(),
            output_dir: default_output_dir(),
            workers: None,
            geometry: ArrayGeometry::default(),
            defects: DefectParams::default(),
            delay: DelayBlock::default(),
            test: TestBlock::default(),
            injection: InjectionBlock::default(),
            redundancy: RedundancyBlock::default(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative mask paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(m), Some(dir)) = (&c.test.mask, path.parent()) {
            if m.is_relative() {
                c.test.mask = Some(dir.join(m));
            }
        }
        Ok(c)
    }

    /// SHA-256 over the canonical JSON of every field that affects results
    /// (everything except the output directory and worker count).
    pub fn semantic_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
            o.remove("workers");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn mask(&self, geometry: &ArrayGeometry) -> Result<Option<TileMask>> {
        if let Some(p) = &self.test.mask {
            return TileMask::load(p).map(Some);
        }
        match self.test.mask_utilization {
            Some(u) => TileMask::synthetic(geometry.n_rows, geometry.n_cols, u, self.master_seed).map(Some),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{s}: {}: {}", self.field, self.message)
    }
}

pub fn has_errors(d: &[Diagnostic]) -> bool {
    d.iter().any(|x| x.severity == Severity::Error)
}

struct Diags(Vec<Diagnostic>);

impl Diags {
    fn err(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, field: &str, r: Result<()>) {
        if let Err(e) = r {
            self.err(field, e.to_string());
        }
    }

    fn prob(&mut self, field: &str, p: f64) {
        if !(0.0..=1.0).contains(&p) {
            self.err(field, format!("must lie in [0, 1], got {p}"));
        }
    }
}

/// Checks a configuration without touching the filesystem beyond reading a
/// referenced mask.
pub fn validate(c: &RunConfig) -> Vec<Diagnostic> {
    let mut d = Diags(Vec::new());
    if c.samples == 0 {
        d.err("samples", "must be >= 1");
    }
    if c.workers == Some(0) {
        d.err("workers", "must be >= 1");
    }
    d.check("geometry", c.geometry.validate());
    d.check("defects", c.defects.validate());

    let dl = &c.delay;
    if !(dl.mu_d_nm > 0.0) {
        d.err("delay.mu_d_nm", format!("must be positive, got {}", dl.mu_d_nm));
    }
    if !(dl.sigma_d_nm >= 0.0) {
        d.err("delay.sigma_d_nm", format!("must be >= 0, got {}", dl.sigma_d_nm));
    }
    d.prob("delay.p_metal", dl.p_metal);
    for p in &dl.p_metal_compare {
        d.prob("delay.p_metal_compare", *p);
    }
    if dl.p_metal_compare.is_empty() {
        d.err("delay.p_metal_compare", "needs at least one value");
    }
    if dl.d_max_sweep_nm.iter().any(|x| !(*x > 0.0)) {
        d.err("delay.d_max_sweep_nm", "diameters must be positive");
    }
    if dl.stage_count == 0 || dl.stage_count % 2 == 0 {
        d.err("delay.stage_count", format!("must be odd, got {}", dl.stage_count));
    }
    if !(dl.threshold_sigmas >= 0.0) {
        d.err("delay.threshold_sigmas", "must be >= 0");
    }
    if !(dl.noise_pct >= 0.0) {
        d.err("delay.noise_pct", "must be >= 0");
    }
    if dl.hop_length_um.is_some_and(|l| !(l > 0.0)) {
        d.err("delay.hop_length_um", "must be positive");
    }
    if !(dl.target_loop_delay_ns > 0.0) {
        d.err("delay.target_loop_delay_ns", "must be positive");
    }
    d.check("delay.model", dl.model.validate());

    let t = &c.test;
    d.check("test.timing", t.timing.validate());
    if t.k_values.iter().any(|k| !(2..=8).contains(k)) {
        d.err("test.k_values", "k must lie in [2, 8]");
    }
    if t.initial_steps.is_empty() {
        d.err("test.initial_steps", "needs at least one step");
    }
    let recursive = t.methods.contains(&TestMethod::Recursive);
    for &s in &t.initial_steps {
        if s == 0 {
            d.err("test.initial_steps", "steps must be >= 1");
        } else if recursive && (s < 2 || s % 2 == 1) {
            d.err("test.initial_steps", format!("recursive jump test needs an even initial step >= 2, got {s}"));
        }
    }
    if t.methods.is_empty() {
        d.err("test.methods", "needs at least one method");
    }
    for p in &t.p_m_sweep {
        d.prob("test.p_m_sweep", *p);
    }
    if let Some(u) = t.mask_utilization {
        d.prob("test.mask_utilization", u);
    }
    if let Some(p) = &t.mask {
        if !p.exists() {
            d.err("test.mask", format!("mask file {} does not exist", p.display()));
        } else {
            match TileMask::load(p) {
                Ok(m) if (m.n_rows, m.n_cols) != (c.geometry.n_rows, c.geometry.n_cols) => d.err(
                    "test.mask",
                    format!(
                        "mask {} is {}x{} but the geometry is {}x{}",
                        p.display(),
                        m.n_rows,
                        m.n_cols,
                        c.geometry.n_rows,
                        c.geometry.n_cols
                    ),
                ),
                Ok(_) => {}
                Err(e) => d.err("test.mask", format!("{}: {e}", p.display())),
            }
        }
        if t.mask_utilization.is_some() {
            d.warn("test.mask_utilization", "ignored because a mask file is given");
        }
    }

    let inj = &c.injection;
    d.check("injection.geometry", inj.geometry.validate());
    if inj.counts.total() > inj.geometry.n_luts() {
        d.err(
            "injection.counts",
            format!("{} faults exceed {} LUT sites", inj.counts.total(), inj.geometry.n_luts()),
        );
    }
    if let InjectionPattern::Mixed { clustered_fraction, .. } = inj.pattern {
        d.prob("injection.pattern.clustered_fraction", clustered_fraction);
    }
    if inj.block_width == 0 {
        d.err("injection.block_width", "must be >= 1");
    }
    if inj.methods.contains(&TestMethod::Recursive) && (inj.initial_step < 2 || inj.initial_step % 2 == 1) {
        d.err(
            "injection.initial_step",
            format!("recursive jump test needs an even initial step >= 2, got {}", inj.initial_step),
        );
    }

    let r = &c.redundancy;
    for &s in &r.schemes {
        d.check("redundancy.schemes", SharingScheme::get(s).map(|_| ()));
    }
    if r.schemes.is_empty() {
        d.err("redundancy.schemes", "needs at least one scheme");
    }
    d.prob("redundancy.p_m", r.p_m);
    d.check("redundancy.geometry", r.geometry.validate());
    if r.geometry.n_rows < 8 || r.geometry.n_cols < 8 {
        d.err("redundancy.geometry", "array must hold at least one 8x8 tile");
    }

    if c.experiment == Experiment::ClbTest && c.samples > 1 {
        d.warn("samples", "clb-test is exhaustive; samples is ignored");
    }
    d.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(c: &RunConfig) -> Vec<String> {
        validate(c)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.field)
            .collect()
    }

    #[test]
    fn defaults_validate_clean() {
        for e in Experiment::ALL {
            assert!(errors(&RunConfig::new(e)).is_empty(), "{e}");
        }
    }

    #[test]
    fn minimal_json_parses() {
        let c = RunConfig::from_json(r#"{"experiment": "repair", "samples": 3}"#).unwrap();
        assert_eq!(c.experiment, Experiment::Repair);
        assert_eq!(c.samples, 3);
        assert_eq!(c.redundancy.schemes.len(), 8);
        assert!(RunConfig::from_json(r#"{"experiment": "nope"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"experiment": "delay", "bogus": 1}"#).is_err());
        assert!(Experiment::parse("ro-test").is_ok());
        assert!(Experiment::parse("x").is_err());
    }

    #[test]
    fn diagnostics() {
        let mut c = RunConfig::new(Experiment::ArrayTest);
        c.test.initial_steps = vec![4, 7];
        assert_eq!(errors(&c), vec!["test.initial_steps"]);
        let mut c = RunConfig::new(Experiment::Delay);
        c.delay.p_metal = 1.2;
        assert_eq!(errors(&c), vec!["delay.p_metal"]);
        let mut c = RunConfig::new(Experiment::ArrayTest);
        c.test.mask = Some(PathBuf::from("/nonexistent/mask.txt"));
        let d = validate(&c);
        assert!(d.iter().any(|x| x.message.contains("/nonexistent/mask.txt")));
        let mut c = RunConfig::new(Experiment::Repair);
        c.samples = 0;
        c.redundancy.schemes = vec![9];
        assert_eq!(errors(&c), vec!["samples", "redundancy.schemes"]);
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let a = RunConfig::new(Experiment::Repair);
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        b.workers = Some(3);
        assert_eq!(a.semantic_hash(), b.semantic_hash());
        b.redundancy.p_m = 2e-4;
        assert_ne!(a.semantic_hash(), b.semantic_hash());
        let mut c = a.clone();
        c.master_seed += 1;
        assert_ne!(a.semantic_hash(), c.semantic_hash());
    }
}
