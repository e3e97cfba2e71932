// SPDX-License-Identifier: Apache-2.0

//! MWCNT interconnect delay under diameter and chirality variation, ring
//! oscillators mapped onto LUT chains, and delay-fault flagging.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FpgaArray, LutSite, TruthTable};
use crate::seed::{derive_seed, rng_from_seed, Rng as SimRng};

/// Quantum resistance h/4e² in ohms.
pub const QUANTUM_RESISTANCE: f64 = 6453.2;
/// Van der Waals spacing between shells, nm.
pub const SHELL_SPACING: f64 = 0.34;
/// Elmore coefficient of a single lumped RC stage.
const ELMORE: f64 = 0.69;
/// Conductance share left to a bundle without metallic shells.
const WORST_CASE_CONDUCTANCE: f64 = 0.01;

/// Shell structure of one multi-walled CNT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MwcntSpec {
    pub d_max: f64,
    pub shell_diameters: Vec<f64>,
    pub shell_is_metallic: Vec<bool>,
}

impl MwcntSpec {
    /// Shells laid inward from `d_max` in 0.68 nm steps down to `d_max / 2`.
    pub fn shell_diameters_for(d_max: f64) -> Vec<f64> {
        let step = 2.0 * SHELL_SPACING;
        let n = ((d_max / 2.0) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| d_max - step * i as f64).collect()
    }

    /// A spec with the given metallic pattern, outermost shell first.
    pub fn with_pattern(d_max: f64, metallic: Vec<bool>) -> Self {
        let step = 2.0 * SHELL_SPACING;
        Self {
            d_max,
            shell_diameters: (0..metallic.len()).map(|i| d_max - step * i as f64).collect(),
            shell_is_metallic: metallic,
        }
    }

    pub fn n_metallic(&self) -> usize {
        self.shell_is_metallic.iter().filter(|&&m| m).count()
    }
}

/// Process-variation distribution of the interconnect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwcntVariation {
    pub mu_d: f64,
    pub sigma_d: f64,
    pub p_metal: f64,
}

impl Default for MwcntVariation {
    fn default() -> Self {
        Self {
            mu_d: 11.0,
            sigma_d: 1.65,
            p_metal: 1.0 / 3.0,
        }
    }
}

impl MwcntVariation {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_d > 0.0) || !(self.sigma_d >= 0.0) {
            return Err(Error::Param("mu_d must be > 0 and sigma_d >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.p_metal) {
            return Err(Error::Param(format!("p_metal must lie in [0, 1], got {}", self.p_metal)));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> MwcntSpec {
        let d_max = if self.sigma_d == 0.0 {
            self.mu_d
        } else {
            let n = Normal::new(self.mu_d, self.sigma_d).expect("finite parameters");
            loop {
                let d = n.sample(rng);
                if d > 0.0 {
                    break d;
                }
            }
        };
        let shell_diameters = MwcntSpec::shell_diameters_for(d_max);
        let shell_is_metallic = shell_diameters
            .iter()
            .map(|_| rng.gen::<f64>() < self.p_metal)
            .collect();
        MwcntSpec {
            d_max,
            shell_diameters,
            shell_is_metallic,
        }
    }
}

/// Samples one MWCNT.
pub fn sample_mwcnt(seed: u64, mu_d: f64, sigma_d: f64, p_metal: f64) -> MwcntSpec {
    MwcntVariation { mu_d, sigma_d, p_metal }.sample(&mut rng_from_seed(seed))
}

/// Electrical constants of the delay model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModelParams {
    /// Mean free path per nm of shell diameter, μm.
    pub mfp_per_diameter: f64,
    /// Contact resistance per shell, Ω.
    pub contact_resistance: f64,
    /// F per μm.
    pub capacitance_per_length: f64,
    pub driver_resistance: f64,
    pub load_capacitance: f64,
    /// Intrinsic delay of one LUT stage, s.
    pub lut_stage_delay: f64,
    pub calibration_scale: f64,
}

impl Default for DelayModelParams {
    fn default() -> Self {
        Self {
            mfp_per_diameter: 1.0,
            contact_resistance: 3000.0,
            capacitance_per_length: 1e-16,
            driver_resistance: 450.0,
            load_capacitance: 1e-16,
            lut_stage_delay: 380e-12,
            calibration_scale: 1.0,
        }
    }
}

impl DelayModelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mfp_per_diameter,
            self.contact_resistance,
            self.capacitance_per_length,
            self.driver_resistance,
            self.load_capacitance,
            self.lut_stage_delay,
            self.calibration_scale,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Param("delay model parameters must be positive".into()))
        }
    }

    fn shell_resistance(&self, diameter: f64, length: f64) -> f64 {
        self.contact_resistance + QUANTUM_RESISTANCE * length / (self.mfp_per_diameter * diameter)
    }

    fn rc_delay(&self, bundle_resistance: f64, length: f64) -> f64 {
        self.calibration_scale
            * ELMORE
            * (self.driver_resistance + bundle_resistance)
            * (self.capacitance_per_length * length + self.load_capacitance)
    }
}

/// Delay of one interconnect hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentDelay {
    pub delay: f64,
    /// No metallic shell: evaluated as the outer shell at 1% conductance.
    pub high_resistance: bool,
}

/// Parallel-shell bundle resistance followed by a lumped Elmore delay.
pub fn segment_delay(spec: &MwcntSpec, length: f64, params: &DelayModelParams) -> Result<SegmentDelay> {
    if !(length > 0.0) {
        return Err(Error::Param(format!("length must be positive, got {length}")));
    }
    if spec.shell_diameters.is_empty() || spec.shell_diameters.len() != spec.shell_is_metallic.len() {
        return Err(Error::Param("shell lists must be non-empty and of equal length".into()));
    }
    let g: f64 = spec
        .shell_diameters
        .iter()
        .zip(&spec.shell_is_metallic)
        .filter(|(_, &m)| m)
        .map(|(&d, _)| 1.0 / params.shell_resistance(d, length))
        .sum();
    let (g, high_resistance) = if g > 0.0 {
        (g, false)
    } else {
        let outer = spec.shell_diameters[0];
        (WORST_CASE_CONDUCTANCE / params.shell_resistance(outer, length), true)
    };
    Ok(SegmentDelay {
        delay: params.rc_delay(1.0 / g, length),
        high_resistance,
    })
}

/// Hop delay of the mean-field interconnect: `d_max = mu_d` with every
/// shell's conductance weighted by `p_metal`.
pub fn nominal_segment_delay(variation: &MwcntVariation, length: f64, params: &DelayModelParams) -> f64 {
    let g: f64 = MwcntSpec::shell_diameters_for(variation.mu_d)
        .iter()
        .map(|&d| variation.p_metal / params.shell_resistance(d, length))
        .sum();
    params.rc_delay(1.0 / g, length)
}

/// Scale that puts the nominal `stage_count`-stage loop at `target` seconds.
pub fn calibrate_scale(
    variation: &MwcntVariation,
    length: f64,
    params: &DelayModelParams,
    stage_count: usize,
    target: f64,
) -> Result<f64> {
    let per_stage = target / stage_count as f64 - params.lut_stage_delay;
    if !(per_stage > 0.0) {
        return Err(Error::Param(format!(
            "LUT stage delay {} s leaves no room for interconnect in a {target} s loop",
            params.lut_stage_delay
        )));
    }
    let unit = DelayModelParams {
        calibration_scale: 1.0,
        ..*params
    };
    Ok(per_stage / nominal_segment_delay(variation, length, &unit))
}

/// Sample statistics of hop delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopStats {
    pub n: usize,
    pub n_high_resistance: usize,
    /// Mean over hops with at least one metallic shell.
    pub mean_conducting: f64,
    pub std_conducting: f64,
    pub mean_all: f64,
}

/// Hop delays of `n_samples` interconnects; sample `i` uses its own stream.
pub fn sample_hop_delays(
    variation: &MwcntVariation,
    length: f64,
    params: &DelayModelParams,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(MwcntSpec, SegmentDelay)>> {
    (0..n_samples)
        .map(|i| {
            let spec = variation.sample(&mut rng_from_seed(derive_seed(seed, i as u64)));
            let d = segment_delay(&spec, length, params)?;
            Ok((spec, d))
        })
        .collect()
}

pub fn hop_stats(samples: &[(MwcntSpec, SegmentDelay)]) -> HopStats {
    let cond: Vec<f64> = samples
        .iter()
        .filter(|(_, d)| !d.high_resistance)
        .map(|(_, d)| d.delay)
        .collect();
    let (mean_conducting, std_conducting) = mean_std(&cond);
    let all: Vec<f64> = samples.iter().map(|(_, d)| d.delay).collect();
    HopStats {
        n: samples.len(),
        n_high_resistance: samples.len() - cond.len(),
        mean_conducting,
        std_conducting,
        mean_all: mean_std(&all).0,
    }
}

/// Population mean and standard deviation (0 for empty input).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// A closed chain of inverting LUT stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoCell {
    pub ro_id: usize,
    pub stage_count: usize,
    pub lut_refs: Vec<LutSite>,
    /// Hop `i` connects stage `i` to stage `(i + 1) % stage_count`.
    pub interconnect_specs: Vec<MwcntSpec>,
    pub hop_length: f64,
}

/// Truth table of `I0 XNOR 0`: the output inverts `I0` whatever the
/// remaining pins hold.
pub fn ro_lut_config(k: usize) -> TruthTable {
    TruthTable::from_fn(k, |i| i & 1 == 0)
}

/// Cuts the LUT sites, in row-major order, into consecutive closed chains
/// of `stage_count` stages, programs them as inverters and samples each
/// hop's interconnect from `variation`.
pub fn build_ro_partition(
    array: &mut FpgaArray,
    stage_count: usize,
    variation: &MwcntVariation,
    hop_length: f64,
    seed: u64,
) -> Result<Vec<RoCell>> {
    if stage_count == 0 || stage_count % 2 == 0 {
        return Err(Error::Param(format!("stage_count must be odd, got {stage_count}")));
    }
    variation.validate()?;
    let sites: Vec<LutSite> = array.lut_sites().collect();
    if sites.len() < stage_count {
        return Err(Error::TooSmall(format!(
            "{} LUT sites cannot hold a {stage_count}-stage ring",
            sites.len()
        )));
    }
    let cfg = ro_lut_config(array.geometry.lut_inputs);
    let n_ro = sites.len() / stage_count;
    let mut out = Vec::with_capacity(n_ro);
    for (ro_id, chunk) in sites.chunks_exact(stage_count).enumerate() {
        let mut rng: SimRng = rng_from_seed(derive_seed(seed, ro_id as u64));
        for &s in chunk {
            array.lut_mut(s).config_bits = cfg;
        }
        out.push(RoCell {
            ro_id,
            stage_count,
            lut_refs: chunk.to_vec(),
            interconnect_specs: (0..stage_count).map(|_| variation.sample(&mut rng)).collect(),
            hop_length,
        });
    }
    Ok(out)
}

/// Three-trial loop-delay measurement of one ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoMeasurement {
    pub ro_id: usize,
    /// Half period: mean of the trials.
    pub loop_delay: f64,
    pub trials: Vec<f64>,
    pub flagged: bool,
    pub high_resistance_hops: usize,
}

impl RoMeasurement {
    pub fn period(&self) -> f64 {
        2.0 * self.loop_delay
    }
}

pub const TRIALS: usize = 3;

/// Noise-free loop delay: sum of LUT stage and hop delays.
pub fn ro_loop_delay(ro: &RoCell, params: &DelayModelParams) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut high = 0;
    for spec in &ro.interconnect_specs {
        let d = segment_delay(spec, ro.hop_length, params)?;
        total += params.lut_stage_delay + d.delay;
        high += d.high_resistance as usize;
    }
    Ok((total, high))
}

/// Measures a ring three times with Gaussian noise of `noise_frac` of the
/// loop delay per trial.
pub fn measure_ro(ro: &RoCell, params: &DelayModelParams, noise_frac: f64, seed: u64) -> Result<RoMeasurement> {
    if ro.stage_count % 2 == 0
        || ro.lut_refs.len() != ro.stage_count
        || ro.interconnect_specs.len() != ro.stage_count
    {
        return Err(Error::Param(format!("ring {} is malformed", ro.ro_id)));
    }
    if !(noise_frac >= 0.0) {
        return Err(Error::Param("noise fraction must be >= 0".into()));
    }
    let (exact, high) = ro_loop_delay(ro, params)?;
    let mut rng = rng_from_seed(seed);
    let trials: Vec<f64> = if noise_frac == 0.0 {
        vec![exact; TRIALS]
    } else {
        let n = Normal::new(0.0, noise_frac * exact).expect("finite noise");
        (0..TRIALS).map(|_| exact + n.sample(&mut rng)).collect()
    };
    Ok(RoMeasurement {
        ro_id: ro.ro_id,
        loop_delay: trials.iter().sum::<f64>() / TRIALS as f64,
        trials,
        flagged: false,
        high_resistance_hops: high,
    })
}

/// Flags every ring slower than `mean + threshold_sigmas * std` of the
/// whole population.
pub fn detect_delay_faults(measurements: &[RoMeasurement], threshold_sigmas: f64) -> Result<Vec<usize>> {
    if measurements.len() < 2 {
        return Err(Error::TooSmall("need at least two measurements".into()));
    }
    let v: Vec<f64> = measurements.iter().map(|m| m.loop_delay).collect();
    let (mean, std) = mean_std(&v);
    if std == 0.0 {
        return Ok(Vec::new());
    }
    let limit = mean + threshold_sigmas * std;
    Ok(measurements
        .iter()
        .filter(|m| m.loop_delay > limit)
        .map(|m| m.ro_id)
        .collect())
}

/// Median of a non-empty slice.
fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Threshold rule with robust location and scale: flags rings slower than
/// `median + threshold_sigmas * 1.4826 * MAD`. Unlike the mean/std rule it
/// keeps working when a sizeable share of rings is slow.
pub fn detect_delay_faults_robust(measurements: &[RoMeasurement], threshold_sigmas: f64) -> Result<Vec<usize>> {
    if measurements.len() < 2 {
        return Err(Error::TooSmall("need at least two measurements".into()));
    }
    let mut v: Vec<f64> = measurements.iter().map(|m| m.loop_delay).collect();
    let med = median(&mut v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    let sigma = 1.4826 * median(&mut dev);
    if sigma == 0.0 {
        return Ok(Vec::new());
    }
    let limit = med + threshold_sigmas * sigma;
    Ok(measurements
        .iter()
        .filter(|m| m.loop_delay > limit)
        .map(|m| m.ro_id)
        .collect())
}
