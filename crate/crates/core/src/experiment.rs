// SPDX-License-Identifier: Apache-2.0

//! Experiment pipelines and their CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::array_test::{
    evaluate_fault_injection, run_array_test, InjectionTable, KindClass, TestMethod, TestReport, TileMask,
};
use crate::clb_test::{estimate_test_time, gen_session, gen_session_with, simulate_session, SessionStyle, TestSession};
use crate::config::{has_errors, validate, Experiment, RunConfig};
use crate::defects::{inject_faults, map_defects_to_faults, sample_defects, DefectParams, FaultMap};
use crate::delay::{
    build_ro_partition, calibrate_scale, detect_delay_faults, detect_delay_faults_robust, hop_stats, mean_std,
    measure_ro, nominal_segment_delay, sample_hop_delays, segment_delay, DelayModelParams, HopStats, MwcntSpec,
    MwcntVariation, RoMeasurement,
};
use crate::error::{Error, Result};
use crate::model::{build_array, clb_pitch, Clb, FaultKind, PassTransistor};
use crate::redundancy::{assign_repairs, extract_faulty_rows, group_tiles, scheme_overhead, SampleRepair, SchemeResult, SharingScheme};
use crate::seed::{derive_seed, rng_from_seed};

/// A named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Provenance record written next to the outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub master_seed: u64,
    pub samples: usize,
    pub config_hash: String,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Runs the configured experiment inside a worker pool and writes its
/// artifacts plus `manifest.json` to the output directory.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let diags = validate(config);
    if has_errors(&diags) {
        let msg: Vec<String> = diags.iter().map(ToString::to_string).collect();
        return Err(Error::Config(msg.join("; ")));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let mut artifacts = pool.install(|| artifacts(config))?;
    artifacts.push(Artifact {
        name: "config.json".into(),
        bytes: json_bytes(config)?,
    });
    write_outputs(config, &config.output_dir, artifacts)
}

fn write_outputs(config: &RunConfig, dir: &Path, artifacts: Vec<Artifact>) -> Result<RunOutput> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for a in &artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
        entries.push(ArtifactEntry {
            file: a.name.clone(),
            sha256: hex::encode(Sha256::digest(&a.bytes)),
            bytes: a.bytes.len(),
        });
    }
    let manifest = Manifest {
        tool: "cntfpga".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: config.experiment.name().into(),
        master_seed: config.master_seed,
        samples: config.samples,
        config_hash: config.semantic_hash(),
        artifacts: entries,
    };
    std::fs::write(dir.join("manifest.json"), json_bytes(&manifest)?)?;
    Ok(RunOutput {
        output_dir: dir.to_path_buf(),
        manifest,
    })
}

/// Computes the artifacts of the configured experiment without writing.
pub fn artifacts(c: &RunConfig) -> Result<Vec<Artifact>> {
    match c.experiment {
        Experiment::Delay => delay_artifacts(&delay_experiment(c)?),
        Experiment::RoTest => ro_artifacts(&ro_experiment(c)?),
        Experiment::ClbTest => clb_artifacts(&clb_experiment(c)?),
        Experiment::ArrayTest => array_artifacts(&array_experiment(c)?),
        Experiment::Inject => inject_artifacts(&inject_experiment(c)?),
        Experiment::Repair => repair_artifacts(&repair_experiment(c)?),
    }
}

// ---------------------------------------------------------------- delay

fn variation(c: &RunConfig, p_metal: f64) -> MwcntVariation {
    MwcntVariation {
        mu_d: c.delay.mu_d_nm,
        sigma_d: c.delay.sigma_d_nm,
        p_metal,
    }
}

/// Delay model with the calibration scale applied (when enabled) and the
/// adjacent-CLB hop length.
pub fn calibrated_model(c: &RunConfig) -> Result<(DelayModelParams, f64)> {
    let length = match c.delay.hop_length_um {
        Some(l) => l,
        None => clb_pitch(&c.geometry)?,
    };
    let mut m = c.delay.model;
    if c.delay.calibrate {
        m.calibration_scale = calibrate_scale(
            &variation(c, c.delay.p_metal),
            length,
            &m,
            c.delay.stage_count,
            c.delay.target_loop_delay_ns * 1e-9,
        )?;
    }
    Ok((m, length))
}

#[derive(Debug, Clone, Serialize)]
pub struct DmaxPoint {
    pub d_max_nm: f64,
    pub p_metal: f64,
    pub n_conducting: usize,
    pub mean_delay: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DelayResults {
    pub calibration_scale: f64,
    pub hop_length_um: f64,
    pub nominal_hop_delay: f64,
    pub nominal_loop_delay: f64,
    pub chirality: Vec<(f64, HopStats)>,
    pub sweep: Vec<DmaxPoint>,
}

impl DelayResults {
    /// Relative drop of the conducting-hop mean from the first to the last
    /// compared chirality.
    pub fn chirality_reduction(&self) -> f64 {
        match (self.chirality.first(), self.chirality.last()) {
            (Some(a), Some(b)) => 1.0 - b.1.mean_conducting / a.1.mean_conducting,
            _ => 0.0,
        }
    }
}

pub fn delay_experiment(c: &RunConfig) -> Result<DelayResults> {
    let (model, length) = calibrated_model(c)?;
    let nominal_hop = nominal_segment_delay(&variation(c, c.delay.p_metal), length, &model);
    let chirality = c
        .delay
        .p_metal_compare
        .iter()
        .map(|&p| Ok((p, hop_stats(&sample_hop_delays(&variation(c, p), length, &model, c.samples, c.master_seed)?))))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (i, &d) in c.delay.d_max_sweep_nm.iter().enumerate() {
        for &p in &c.delay.p_metal_compare {
            jobs.push((i, d, p));
        }
    }
    let sweep = jobs
        .par_iter()
        .map(|&(i, d, p)| {
            let n_shells = MwcntSpec::shell_diameters_for(d).len();
            let mut rng = rng_from_seed(derive_seed(c.master_seed ^ 0xd3a7, i as u64));
            let mut v = Vec::new();
            for _ in 0..c.delay.d_max_sweep_samples {
                let pattern: Vec<bool> = (0..n_shells).map(|_| rng.gen::<f64>() < p).collect();
                let sd = segment_delay(&MwcntSpec::with_pattern(d, pattern), length, &model)?;
                if !sd.high_resistance {
                    v.push(sd.delay);
                }
            }
            Ok(DmaxPoint {
                d_max_nm: d,
                p_metal: p,
                n_conducting: v.len(),
                mean_delay: mean_std(&v).0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DelayResults {
        calibration_scale: model.calibration_scale,
        hop_length_um: length,
        nominal_hop_delay: nominal_hop,
        nominal_loop_delay: c.delay.stage_count as f64 * (model.lut_stage_delay + nominal_hop),
        chirality,
        sweep,
    })
}

fn delay_artifacts(r: &DelayResults) -> Result<Vec<Artifact>> {
    let base = r.chirality.first().map(|x| x.1.mean_conducting).unwrap_or(0.0);
    let summary = csv_bytes(
        &["p_metal", "n", "n_high_resistance", "mean_conducting_ps", "std_conducting_ps", "mean_all_ps", "reduction_pct", "calibration_scale"],
        r.chirality.iter().map(|(p, s)| {
            vec![
                f6(*p),
                s.n.to_string(),
                s.n_high_resistance.to_string(),
                f6(s.mean_conducting * 1e12),
                f6(s.std_conducting * 1e12),
                f6(s.mean_all * 1e12),
                f6((1.0 - s.mean_conducting / base) * 100.0),
                f6(r.calibration_scale),
            ]
        }),
    )?;
    let sweep = csv_bytes(
        &["d_max_nm", "p_metal", "n_conducting", "mean_delay_ps"],
        r.sweep
            .iter()
            .map(|p| vec![f6(p.d_max_nm), f6(p.p_metal), p.n_conducting.to_string(), f6(p.mean_delay * 1e12)]),
    )?;
    Ok(vec![
        Artifact {
            name: "delay_summary.csv".into(),
            bytes: summary,
        },
        Artifact {
            name: "dmax_sweep.csv".into(),
            bytes: sweep,
        },
    ])
}

// ---------------------------------------------------------------- ro-test

#[derive(Debug, Clone, Serialize)]
pub struct Spread {
    pub n: usize,
    pub mean_ns: f64,
    pub std_ps: f64,
    pub min_ns: f64,
    pub max_ns: f64,
    pub range_ps: f64,
}

impl Spread {
    fn of(v: &[f64]) -> Self {
        let (m, s) = mean_std(v);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (min, max) = if v.is_empty() { (0.0, 0.0) } else { (min, max) };
        Self {
            n: v.len(),
            mean_ns: m * 1e9,
            std_ps: s * 1e12,
            min_ns: min * 1e9,
            max_ns: max * 1e9,
            range_ps: (max - min) * 1e12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoSample {
    pub sample: usize,
    pub n_flagged: usize,
    pub n_flagged_mean_sigma: usize,
    pub n_high_resistance_rings: usize,
    pub all: Spread,
    pub unflagged: Spread,
    #[serde(skip)]
    pub measurements: Vec<(RoMeasurement, bool)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoResults {
    pub calibration_scale: f64,
    pub nominal_loop_delay_ns: f64,
    pub samples: Vec<RoSample>,
}

pub fn ro_experiment(c: &RunConfig) -> Result<RoResults> {
    let (model, length) = calibrated_model(c)?;
    let var = variation(c, c.delay.p_metal);
    let nominal = c.delay.stage_count as f64 * (model.lut_stage_delay + nominal_segment_delay(&var, length, &model));
    let samples = (0..c.samples)
        .map(|s| {
            let seed = derive_seed(c.master_seed, s as u64);
            let mut array = build_array(&c.geometry, seed)?;
            let ros = build_ro_partition(&mut array, c.delay.stage_count, &var, length, derive_seed(seed, 1))?;
            let noise_seed = derive_seed(seed, 2);
            let mut ms = ros
                .par_iter()
                .map(|ro| measure_ro(ro, &model, c.delay.noise_pct / 100.0, derive_seed(noise_seed, ro.ro_id as u64)))
                .collect::<Result<Vec<_>>>()?;
            let robust = detect_delay_faults_robust(&ms, c.delay.threshold_sigmas)?;
            let plain = detect_delay_faults(&ms, c.delay.threshold_sigmas)?;
            for id in &robust {
                ms[*id].flagged = true;
            }
            let mut by_plain = vec![false; ms.len()];
            for id in &plain {
                by_plain[*id] = true;
            }
            let all: Vec<f64> = ms.iter().map(|m| m.loop_delay).collect();
            let unflagged: Vec<f64> = ms.iter().filter(|m| !m.flagged).map(|m| m.loop_delay).collect();
            Ok(RoSample {
                sample: s,
                n_flagged: robust.len(),
                n_flagged_mean_sigma: plain.len(),
                n_high_resistance_rings: ms.iter().filter(|m| m.high_resistance_hops > 0).count(),
                all: Spread::of(&all),
                unflagged: Spread::of(&unflagged),
                measurements: ms.into_iter().zip(by_plain).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RoResults {
        calibration_scale: model.calibration_scale,
        nominal_loop_delay_ns: nominal * 1e9,
        samples,
    })
}

fn ro_artifacts(r: &RoResults) -> Result<Vec<Artifact>> {
    let rows = r.samples.iter().flat_map(|s| {
        s.measurements.iter().map(move |(m, plain)| {
            vec![
                s.sample.to_string(),
                m.ro_id.to_string(),
                f6(m.loop_delay * 1e9),
                f6(m.period() * 1e9),
                m.flagged.to_string(),
                plain.to_string(),
                m.high_resistance_hops.to_string(),
            ]
        })
    });
    let csv = csv_bytes(
        &["sample", "ro_id", "loop_delay_ns", "period_ns", "flagged", "flagged_mean_sigma", "high_resistance_hops"],
        rows,
    )?;
    Ok(vec![
        Artifact {
            name: "ro_delays.csv".into(),
            bytes: csv,
        },
        Artifact {
            name: "ro_summary.json".into(),
            bytes: json_bytes(r)?,
        },
    ])
}

// ---------------------------------------------------------------- clb-test

/// Exhaustive single-fault classes of one k-input LUT.
pub fn lut_fault_classes(k: usize) -> Vec<(&'static str, Vec<FaultKind>)> {
    let n = 1u16 << k;
    let pairs = |sibling: bool| {
        let mut v = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if !sibling || b == a ^ 1 {
                    v.push((a, b));
                }
            }
        }
        v
    };
    vec![
        ("stuck-at-0", vec![FaultKind::StuckAt0]),
        ("stuck-at-1", vec![FaultKind::StuckAt1]),
        ("open", vec![FaultKind::Open]),
        ("mux-always-select", (0..n).map(FaultKind::MuxAlwaysSelect).collect()),
        ("mux-override", (0..n).map(FaultKind::MuxOverride).collect()),
        (
            "cell-stuck-at",
            (0..n)
                .flat_map(|cell| [false, true].map(|value| FaultKind::CellStuckAt { cell, value }))
                .collect(),
        ),
        ("wired-and-sibling", pairs(true).into_iter().map(|(a, b)| FaultKind::WiredAnd(a, b)).collect()),
        ("wired-or-sibling", pairs(true).into_iter().map(|(a, b)| FaultKind::WiredOr(a, b)).collect()),
        ("wired-and", pairs(false).into_iter().map(|(a, b)| FaultKind::WiredAnd(a, b)).collect()),
        ("wired-or", pairs(false).into_iter().map(|(a, b)| FaultKind::WiredOr(a, b)).collect()),
        ("stuck-on", vec![FaultKind::StuckOn(PassTransistor::TA), FaultKind::StuckOn(PassTransistor::TB)]),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageRow {
    pub k: usize,
    pub session: String,
    pub fault_class: String,
    pub n_faults: usize,
    pub n_detected: usize,
}

impl CoverageRow {
    pub fn coverage(&self) -> f64 {
        if self.n_faults == 0 {
            1.0
        } else {
            self.n_detected as f64 / self.n_faults as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeRow {
    pub k: usize,
    pub style: SessionStyle,
    pub n_configurations: usize,
    pub n_patterns: usize,
    pub test_time_s: f64,
    pub reduction_vs_traditional: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClbResults {
    pub coverage: Vec<CoverageRow>,
    pub times: Vec<TimeRow>,
    pub sessions: Vec<TestSession>,
}

fn session_coverage(k: usize, luts: usize, name: &str, session: &TestSession, with_carry: bool) -> Result<Vec<CoverageRow>> {
    let mut classes = lut_fault_classes(k);
    let mut rows = Vec::new();
    for (class, faults) in classes.drain(..) {
        let detected = faults
            .par_iter()
            .map(|&f| {
                let mut clb = Clb::new(luts, k);
                clb.luts[0].fault = f;
                Ok(!simulate_session(&clb, session)?.pass)
            })
            .collect::<Result<Vec<bool>>>()?;
        rows.push(CoverageRow {
            k,
            session: name.into(),
            fault_class: class.into(),
            n_faults: faults.len(),
            n_detected: detected.iter().filter(|&&d| d).count(),
        });
    }
    if with_carry {
        for (class, is_mux) in [("carry-mux-stuck-at", true), ("carry-xor-stuck-at", false)] {
            let mut n = 0;
            let mut hit = 0;
            for stage in 0..luts {
                for f in [FaultKind::StuckAt0, FaultKind::StuckAt1] {
                    let mut clb = Clb::new(luts, k);
                    if is_mux {
                        clb.carry[stage].mux_fault = f;
                    } else {
                        clb.carry[stage].xor_fault = f;
                    }
                    n += 1;
                    hit += usize::from(!simulate_session(&clb, session)?.pass);
                }
            }
            rows.push(CoverageRow {
                k,
                session: name.into(),
                fault_class: class.into(),
                n_faults: n,
                n_detected: hit,
            });
        }
    }
    Ok(rows)
}

pub fn clb_experiment(c: &RunConfig) -> Result<ClbResults> {
    let luts = c.geometry.luts_per_clb;
    let mut coverage = Vec::new();
    let mut times = Vec::new();
    let mut sessions = Vec::new();
    for &k in &c.test.k_values {
        let trad = estimate_test_time(&gen_session(k, SessionStyle::Traditional)?, &c.test.timing);
        for &style in &c.test.styles {
            let s = gen_session(k, style)?;
            let t = estimate_test_time(&s, &c.test.timing);
            times.push(TimeRow {
                k,
                style,
                n_configurations: s.n_configurations(),
                n_patterns: s.n_patterns(),
                test_time_s: t,
                reduction_vs_traditional: 1.0 - t / trad,
            });
            coverage.extend(session_coverage(k, luts, style.name(), &s, style == SessionStyle::WithCarryChain)?);
            if style == SessionStyle::Improved {
                let bare = gen_session_with(k, style, false)?;
                coverage.extend(session_coverage(k, luts, "improved-no-extra", &bare, false)?);
            }
            sessions.push(s);
        }
    }
    Ok(ClbResults {
        coverage,
        times,
        sessions,
    })
}

fn clb_artifacts(r: &ClbResults) -> Result<Vec<Artifact>> {
    let report = csv_bytes(
        &["k", "session", "fault_class", "n_faults", "n_detected", "coverage"],
        r.coverage.iter().map(|x| {
            vec![
                x.k.to_string(),
                x.session.clone(),
                x.fault_class.clone(),
                x.n_faults.to_string(),
                x.n_detected.to_string(),
                f6(x.coverage()),
            ]
        }),
    )?;
    let times = csv_bytes(
        &["k", "style", "n_configurations", "n_patterns", "test_time_s", "reduction_vs_traditional_pct"],
        r.times.iter().map(|t| {
            vec![
                t.k.to_string(),
                t.style.name().into(),
                t.n_configurations.to_string(),
                t.n_patterns.to_string(),
                format!("{:.9e}", t.test_time_s),
                f6(t.reduction_vs_traditional * 100.0),
            ]
        }),
    )?;
    Ok(vec![
        Artifact {
            name: "clb_test_report.csv".into(),
            bytes: report,
        },
        Artifact {
            name: "test_time.csv".into(),
            bytes: times,
        },
        Artifact {
            name: "sessions.json".into(),
            bytes: json_bytes(&r.sessions)?,
        },
    ])
}

// ---------------------------------------------------------------- array-test

#[derive(Debug, Clone, Serialize)]
pub struct ArrayRow {
    pub p_m: f64,
    pub sample: usize,
    pub report: TestReport,
}

/// (method, step) pairs run by the array test; single-step runs once.
pub fn method_steps(methods: &[TestMethod], steps: &[usize]) -> Vec<(TestMethod, usize)> {
    let mut v = Vec::new();
    for &m in methods {
        if m == TestMethod::SingleStep {
            v.push((m, 1));
        } else {
            v.extend(steps.iter().map(|&s| (m, s)));
        }
    }
    v
}

/// Fault map of sample `s` of a defect population.
pub fn sample_fault_map(params: &DefectParams, array: &crate::model::FpgaArray, master_seed: u64, s: usize) -> Result<FaultMap> {
    let d = sample_defects(params, &array.geometry, derive_seed(master_seed, s as u64))?;
    Ok(map_defects_to_faults(&d, array))
}

pub fn array_experiment(c: &RunConfig) -> Result<Vec<ArrayRow>> {
    let array = build_array(&c.geometry, c.master_seed)?;
    let mask: Option<TileMask> = c.mask(&c.geometry)?;
    let ms = method_steps(&c.test.methods, &c.test.initial_steps);
    let mut rows = Vec::new();
    for &p_m in &c.test.p_m_sweep {
        let params = DefectParams { p_m, ..c.defects.clone() };
        let per_sample = (0..c.samples)
            .into_par_iter()
            .map(|s| {
                let map = sample_fault_map(&params, &array, c.master_seed, s)?;
                ms.iter()
                    .map(|&(m, step)| {
                        Ok(ArrayRow {
                            p_m,
                            sample: s,
                            report: run_array_test(&map, m, step, mask.as_ref())?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(per_sample.into_iter().flatten());
    }
    Ok(rows)
}

/// Mean coverage, mean overhead and total probes per (p_m, method, step).
#[derive(Debug, Clone, Serialize)]
pub struct ArraySummary {
    pub p_m: f64,
    pub method: TestMethod,
    pub step: usize,
    pub samples: usize,
    pub mean_coverage: f64,
    pub mean_overhead: f64,
    pub total_probes: u64,
}

pub fn summarize_array(rows: &[ArrayRow]) -> Vec<ArraySummary> {
    let mut acc: BTreeMap<(u64, TestMethod, usize), (usize, f64, f64, u64, f64)> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry((r.p_m.to_bits(), r.report.method, r.report.initial_step))
            .or_insert((0, 0.0, 0.0, 0, r.p_m));
        e.0 += 1;
        e.1 += r.report.coverage;
        e.2 += r.report.overhead;
        e.3 += r.report.probes;
    }
    acc.into_iter()
        .map(|((_, method, step), (n, cov, ovh, probes, p_m))| ArraySummary {
            p_m,
            method,
            step,
            samples: n,
            mean_coverage: cov / n as f64,
            mean_overhead: ovh / n as f64,
            total_probes: probes,
        })
        .collect()
}

fn array_artifacts(rows: &[ArrayRow]) -> Result<Vec<Artifact>> {
    let report = csv_bytes(
        &["p_m", "sample", "method", "step", "coverage", "overhead", "probes", "single_step_probes", "truly_faulty", "identified_faulty", "segments"],
        rows.iter().map(|r| {
            let t = &r.report;
            vec![
                format!("{:e}", r.p_m),
                r.sample.to_string(),
                t.method.name().into(),
                t.initial_step.to_string(),
                f6(t.coverage),
                f6(t.overhead),
                t.probes.to_string(),
                t.single_step_probes.to_string(),
                t.truly_faulty.to_string(),
                t.identified_faulty.to_string(),
                t.n_segments().to_string(),
            ]
        }),
    )?;
    let summary = csv_bytes(
        &["p_m", "method", "step", "samples", "mean_coverage", "mean_overhead", "total_probes"],
        summarize_array(rows).into_iter().map(|s| {
            vec![
                format!("{:e}", s.p_m),
                s.method.name().into(),
                s.step.to_string(),
                s.samples.to_string(),
                f6(s.mean_coverage),
                f6(s.mean_overhead),
                s.total_probes.to_string(),
            ]
        }),
    )?;
    Ok(vec![
        Artifact {
            name: "array_test_report.csv".into(),
            bytes: report,
        },
        Artifact {
            name: "array_test_summary.csv".into(),
            bytes: summary,
        },
    ])
}

// ---------------------------------------------------------------- inject

pub struct InjectResults {
    pub tables: Vec<InjectionTable>,
    pub first_map: FaultMap,
}

pub fn inject_experiment(c: &RunConfig) -> Result<InjectResults> {
    let inj = &c.injection;
    let array = build_array(&inj.geometry, c.master_seed)?;
    let ms = method_steps(&inj.methods, &[inj.initial_step]);
    let mut tables = Vec::new();
    let mut first_map = None;
    for s in 0..c.samples {
        let map = inject_faults(&inj.geometry, inj.pattern, inj.counts, derive_seed(c.master_seed, s as u64))?;
        tables.push(evaluate_fault_injection(&array, &map, &ms, inj.block_width)?);
        if first_map.is_none() {
            first_map = Some(map);
        }
    }
    Ok(InjectResults {
        tables,
        first_map: first_map.expect("samples >= 1"),
    })
}

fn inject_artifacts(r: &InjectResults) -> Result<Vec<Artifact>> {
    let mut rows = Vec::new();
    for (s, t) in r.tables.iter().enumerate() {
        for m in &t.methods {
            let mut push = |kind: &str, inj: usize, det: usize| {
                let pct = if inj == 0 { 100.0 } else { det as f64 / inj as f64 * 100.0 };
                rows.push(vec![
                    s.to_string(),
                    m.method.name().into(),
                    m.initial_step.to_string(),
                    kind.into(),
                    inj.to_string(),
                    det.to_string(),
                    f6(pct),
                ]);
            };
            for (k, &n) in &t.injected {
                push(k.name(), n, m.detected.get(k).copied().unwrap_or(0));
            }
            push("total", t.total_injected(), m.total());
        }
    }
    let table = csv_bytes(&["sample", "method", "step", "kind", "injected", "detected", "detected_pct"], rows)?;
    let mut map = Vec::new();
    r.first_map.write_csv(&mut map)?;
    Ok(vec![
        Artifact {
            name: "injection_table.csv".into(),
            bytes: table,
        },
        Artifact {
            name: "fault_map.csv".into(),
            bytes: map,
        },
    ])
}

/// Tables summed over samples.
pub fn pooled_injection(tables: &[InjectionTable]) -> Option<InjectionTable> {
    let mut it = tables.iter();
    let mut acc = it.next()?.clone();
    for t in it {
        for (k, n) in &t.injected {
            *acc.injected.entry(*k).or_insert(0) += n;
        }
        for (a, b) in acc.methods.iter_mut().zip(&t.methods) {
            for (k, n) in &b.detected {
                *a.detected.entry(*k).or_insert(0) += n;
            }
            a.probes += b.probes;
        }
    }
    Some(acc)
}

/// Detected count of `kind` for method row `i`.
pub fn detected_of(t: &InjectionTable, i: usize, kind: KindClass) -> usize {
    t.methods[i].detected.get(&kind).copied().unwrap_or(0)
}

// ---------------------------------------------------------------- repair

pub fn repair_experiment(c: &RunConfig) -> Result<Vec<SchemeResult>> {
    let r = &c.redundancy;
    let schemes = r.schemes.iter().map(|&s| SharingScheme::get(s)).collect::<Result<Vec<_>>>()?;
    let groups = schemes.iter().map(|s| group_tiles(&r.geometry, s)).collect::<Result<Vec<_>>>()?;
    let array = build_array(&r.geometry, c.master_seed)?;
    let params = DefectParams { p_m: r.p_m, ..c.defects.clone() };
    let per_sample = (0..c.samples)
        .into_par_iter()
        .map(|s| {
            let map = sample_fault_map(&params, &array, c.master_seed, s)?;
            Ok(groups
                .iter()
                .map(|g| {
                    let set = extract_faulty_rows(&map, g);
                    SampleRepair {
                        faulty_rows: set.total(),
                        repaired: assign_repairs(&set).repaired(),
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(schemes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let samples: Vec<SampleRepair> = per_sample.iter().map(|v| v[i]).collect();
            let repair_rate = samples.iter().map(SampleRepair::rate).sum::<f64>() / samples.len() as f64;
            let (rows_per_tile, normalized_pct) = scheme_overhead(s);
            SchemeResult {
                scheme: *s,
                repair_rate,
                rows_per_tile,
                normalized_pct,
                samples,
            }
        })
        .collect())
}

/// Rows of the scheme table: id, tiles, spares, rows/tile, overhead %.
pub fn scheme_table_rows() -> Vec<Vec<String>> {
    SharingScheme::all()
        .iter()
        .map(|s| {
            let (rpt, pct) = scheme_overhead(s);
            vec![
                s.scheme_id.to_string(),
                s.tiles_per_group.to_string(),
                s.spare_rows_per_group.to_string(),
                format!("{rpt:.4}"),
                format!("{pct:.1}"),
            ]
        })
        .collect()
}

fn repair_artifacts(res: &[SchemeResult]) -> Result<Vec<Artifact>> {
    let report = csv_bytes(
        &["scheme", "sample", "faulty_rows", "repaired", "repair_rate", "rows_per_tile", "normalized_overhead_pct"],
        res.iter().flat_map(|r| {
            r.samples.iter().enumerate().map(move |(i, s)| {
                vec![
                    r.scheme.scheme_id.to_string(),
                    i.to_string(),
                    s.faulty_rows.to_string(),
                    s.repaired.to_string(),
                    f6(s.rate()),
                    format!("{:.4}", r.rows_per_tile),
                    format!("{:.1}", r.normalized_pct),
                ]
            })
        }),
    )?;
    let table = csv_bytes(
        &["scheme", "tiles_per_group", "spare_rows_per_group", "rows_per_tile", "normalized_overhead_pct", "repair_rate_pct"],
        res.iter().map(|r| {
            vec![
                r.scheme.scheme_id.to_string(),
                r.scheme.tiles_per_group.to_string(),
                r.scheme.spare_rows_per_group.to_string(),
                format!("{:.4}", r.rows_per_tile),
                format!("{:.1}", r.normalized_pct),
                format!("{:.2}", r.repair_rate * 100.0),
            ]
        }),
    )?;
    Ok(vec![
        Artifact {
            name: "repair_report.csv".into(),
            bytes: report,
        },
        Artifact {
            name: "scheme_table.csv".into(),
            bytes: table,
        },
    ])
}
