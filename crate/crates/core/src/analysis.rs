//! Experiment harnesses and figure-of-merit extraction: the hidden
//! string algorithm end to end, single-qubit randomized benchmarking,
//! parity analysis of entangled pairs, and the multiplicative error
//! budget.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{
    compile_bv, compile_cascade_sequence, duration, CompileError, CompileOptions,
    DurationBreakdown,
};
use crate::device::DeviceModel;
use crate::gates::{clifford_group_1q, ion_layout, rotation, GateError, OracleSpec};
use crate::linalg::{
    identity, phase_invariant_distance, shannon_entropy, DensityMatrix, QuantumError, UnitaryOp,
};
use crate::program::ProgramCounts;
use crate::sim::{evolve_spin, NoiseConfig, SimError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// Measured basis-string counts with the chain metadata needed to
/// interpret them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: BTreeMap<String, u64>,
    pub shots: u64,
    pub n: usize,
    pub ancilla_index: usize,
}

impl Histogram {
    pub fn new(
        counts: BTreeMap<String, u64>,
        n: usize,
        ancilla_index: usize,
    ) -> Result<Self, AnalysisError> {
        let shots = counts.values().sum();
        let h = Self {
            counts,
            shots,
            n,
            ancilla_index,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.ancilla_index > self.n {
            return Err(AnalysisError::BadInput(format!(
                "ancilla {} outside a {}-ion chain",
                self.ancilla_index,
                self.n + 1
            )));
        }
        for key in self.counts.keys() {
            if key.len() != self.n + 1 || !key.chars().all(|c| c == '0' || c == '1') {
                return Err(AnalysisError::BadInput(format!(
                    "count key '{key}' is not a {}-bit string",
                    self.n + 1
                )));
            }
        }
        Ok(())
    }

    pub fn probability(&self, key: &str) -> f64 {
        if self.shots == 0 {
            return 0.0;
        }
        *self.counts.get(key).unwrap_or(&0) as f64 / self.shots as f64
    }

    /// Distribution over the data bits with the ancilla summed out,
    /// keyed by the secret-order bit string.
    pub fn data_marginal(&self) -> Result<BTreeMap<String, f64>, AnalysisError> {
        let layout = ion_layout(self.n, self.ancilla_index)?;
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for (key, &c) in &self.counts {
            let bits: Vec<char> = key.chars().collect();
            let mut data = vec!['0'; self.n];
            for (ion, slot) in layout.iter().enumerate() {
                if let Some(b) = slot {
                    data[*b] = bits[ion];
                }
            }
            *out.entry(data.into_iter().collect()).or_insert(0.0) +=
                c as f64 / self.shots.max(1) as f64;
        }
        Ok(out)
    }
}

/// Best single-query guessing strategy without interference: learn one
/// bit, guess the rest.
pub fn classical_baseline(n: usize) -> f64 {
    2f64.powi(1 - n as i32)
}

/// Probability that the data bits read back the hidden string, with the
/// ancilla bit ignored.
pub fn success_probability(h: &Histogram, secret: &str) -> Result<f64, AnalysisError> {
    h.validate()?;
    if secret.len() != h.n {
        return Err(AnalysisError::BadInput(format!(
            "secret '{secret}' does not have {} bits",
            h.n
        )));
    }
    Ok(h.data_marginal()?.get(secret).copied().unwrap_or(0.0))
}

/// One full run of the algorithm: compile, integrate, sample.
#[derive(Debug, Clone)]
pub struct BvRun {
    pub secret: String,
    pub histogram: Histogram,
    /// Shot-sampled success with readout errors folded in.
    pub success: f64,
    /// Infinite-shot success from the final-state populations.
    pub exact_success: f64,
    pub state_probabilities: Vec<f64>,
    pub fidelity_trace: Vec<(String, f64)>,
    pub duration: DurationBreakdown,
    pub counts: ProgramCounts,
}

pub fn run_bv(
    n: usize,
    s_value: usize,
    device: &DeviceModel,
    noise: &NoiseConfig,
    shots: u64,
    seed: u64,
) -> Result<BvRun, AnalysisError> {
    let spec = OracleSpec::new(n, s_value)?;
    let opts = CompileOptions {
        pad_to_reference: true,
        // the compensation the hardware would apply exists exactly when
        // the shifts it cancels are part of the physics
        compensate_light_shifts: noise.light_shifts_enabled,
    };
    let compiled = compile_bv(&spec, device, opts)?;
    let mut outcome = evolve_spin(&compiled.program, device, noise, seed)?;
    let probs = outcome.final_state.populations();
    let counts = outcome
        .sample(shots, seed.wrapping_mul(0x9e3779b9).wrapping_add(1), noise.spam_error)
        .clone();
    let histogram = Histogram::new(counts, n, compiled.program.ancilla_index)?;
    let exact = exact_success(&probs, n, compiled.program.ancilla_index, &spec.s_string())?;
    let success = success_probability(&histogram, &spec.s_string())?;
    Ok(BvRun {
        secret: spec.s_string(),
        histogram,
        success,
        exact_success: exact,
        state_probabilities: probs,
        fidelity_trace: outcome.fidelity_trace,
        duration: duration(&compiled.program, &device.timing),
        counts: compiled.program.counts(),
    })
}

fn exact_success(
    probs: &[f64],
    n: usize,
    ancilla_index: usize,
    secret: &str,
) -> Result<f64, AnalysisError> {
    let layout = ion_layout(n, ancilla_index)?;
    let s: Vec<u8> = secret.bytes().map(|b| b - b'0').collect();
    let total = n + 1;
    let mut p = 0.0;
    for (idx, pr) in probs.iter().enumerate() {
        let mut hit = true;
        for (ion, slot) in layout.iter().enumerate() {
            if let Some(b) = slot {
                let bit = (idx >> (total - 1 - ion)) & 1;
                if bit as u8 != s[*b] {
                    hit = false;
                    break;
                }
            }
        }
        if hit {
            p += pr;
        }
    }
    Ok(p)
}

/// I(S;X) in bits from the conditional output distributions, one per
/// secret, under the given prior (uniform when omitted).
pub fn mutual_information(
    conditionals: &[Vec<f64>],
    prior: Option<&[f64]>,
) -> Result<f64, AnalysisError> {
    if conditionals.is_empty() {
        return Err(AnalysisError::BadInput("no conditionals".into()));
    }
    let m = conditionals.len();
    let uniform = vec![1.0 / m as f64; m];
    let prior = prior.unwrap_or(&uniform);
    if prior.len() != m {
        return Err(AnalysisError::BadInput(format!(
            "prior has {} entries for {m} secrets",
            prior.len()
        )));
    }
    let check = |p: &[f64], what: &str| -> Result<(), AnalysisError> {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || p.iter().any(|x| *x < -1e-12) {
            return Err(AnalysisError::BadInput(format!(
                "{what} is not a distribution (sum {sum:.6})"
            )));
        }
        Ok(())
    };
    check(prior, "prior")?;
    let width = conditionals[0].len();
    let mut marginal = vec![0.0; width];
    let mut h_cond = 0.0;
    for (ps, cond) in prior.iter().zip(conditionals.iter()) {
        if cond.len() != width {
            return Err(AnalysisError::BadInput("ragged conditionals".into()));
        }
        check(cond, "conditional")?;
        for (mx, cx) in marginal.iter_mut().zip(cond.iter()) {
            *mx += ps * cx;
        }
        h_cond += ps * shannon_entropy(cond)?;
    }
    Ok((shannon_entropy(&marginal)? - h_cond).max(0.0))
}

/// Parity-method fidelity against the nearest Bell state:
/// F = (P00 + P11)/2 + A/2.
pub fn bell_fidelity(populations: [f64; 4], contrast: f64) -> Result<f64, AnalysisError> {
    let sum: f64 = populations.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || populations.iter().any(|p| *p < -1e-12) {
        return Err(AnalysisError::BadInput(format!(
            "populations sum to {sum:.6}"
        )));
    }
    if !(0.0..=1.0 + 1e-9).contains(&contrast) {
        return Err(AnalysisError::BadInput(format!(
            "contrast {contrast} outside [0, 1]"
        )));
    }
    Ok((populations[0] + populations[3]) / 2.0 + contrast / 2.0)
}

#[derive(Debug, Clone)]
pub struct ParityScan {
    pub phases: Vec<f64>,
    pub parity: Vec<f64>,
    /// Amplitude of the 2φ Fourier component.
    pub contrast: f64,
    pub warning: Option<String>,
}

/// Rotate both qubits of the pair by π/2 about an equatorial axis swept
/// over a phase grid and record the parity expectation at each point.
pub fn parity_scan(rho: &DensityMatrix, points: usize) -> Result<ParityScan, AnalysisError> {
    if rho.qubit_count < 2 {
        return Err(AnalysisError::BadInput(
            "parity analysis needs at least two qubits".into(),
        ));
    }
    let reduced = if rho.qubit_count > 2 {
        crate::linalg::partial_trace(rho, &[0, 1])?
    } else {
        rho.clone()
    };
    let points = points.max(4);
    let mut phases = Vec::with_capacity(points);
    let mut parity = Vec::with_capacity(points);
    let mut re = 0.0;
    let mut im = 0.0;
    for k in 0..points {
        let phi = 2.0 * PI * k as f64 / points as f64;
        let r = rotation(phi, PI / 2.0);
        let both = UnitaryOp::new_unchecked(
            crate::linalg::kron(&r.matrix, &r.matrix)?,
            "analysis",
        );
        let rotated = reduced.evolve(&both)?;
        let pops = rotated.populations();
        let p = pops[0] - pops[1] - pops[2] + pops[3];
        re += p * (2.0 * phi).cos();
        im += p * (2.0 * phi).sin();
        phases.push(phi);
        parity.push(p);
    }
    let contrast = 2.0 * (re * re + im * im).sqrt() / points as f64;
    let warning = if contrast < 1e-9 {
        Some("parity signal has no 2-phase component; contrast set to 0".into())
    } else {
        None
    };
    Ok(ParityScan {
        phases,
        parity,
        contrast: if warning.is_some() { 0.0 } else { contrast },
        warning,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RbConfig {
    pub sequence_count: usize,
    pub cliffords_per_ion: usize,
    pub seed: u64,
}

impl Default for RbConfig {
    fn default() -> Self {
        Self {
            sequence_count: 50,
            cliffords_per_ion: 15,
            seed: 7,
        }
    }
}

impl RbConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.sequence_count == 0 || self.cliffords_per_ion == 0 {
            return Err(AnalysisError::BadInput(
                "benchmarking needs positive sequence and gate counts".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RbResult {
    /// Mean ground-state survival per ion at the fixed sequence length.
    pub survival: Vec<f64>,
    /// Per-gate fidelity read off as survival^(1/length); a single-length
    /// estimate, so state-preparation errors are not separated out.
    pub per_gate_fidelity: Vec<f64>,
    pub sequence_count: usize,
    pub cliffords_per_ion: usize,
}

/// Fixed-length randomized benchmarking on a two-ion chain: random
/// single-qubit Clifford cascades with a final inversion step, compiled
/// through the transport scheduler and integrated under the given noise.
pub fn run_rb(
    device: &DeviceModel,
    noise: &NoiseConfig,
    cfg: &RbConfig,
) -> Result<RbResult, AnalysisError> {
    cfg.validate()?;
    let n = device.chain.ion_count;
    if n != 2 {
        return Err(AnalysisError::BadInput(format!(
            "benchmarking runs on a two-ion chain, got {n} ions"
        )));
    }
    let group = clifford_group_1q();
    let opts = CompileOptions {
        pad_to_reference: false,
        compensate_light_shifts: noise.light_shifts_enabled,
    };
    let mut survival = vec![0.0; n];
    for k in 0..cfg.sequence_count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        let mut nets = vec![identity(2); n];
        let mut cascades: Vec<Vec<crate::linalg::CMat>> = Vec::new();
        for _ in 0..cfg.cliffords_per_ion {
            let mut step = Vec::with_capacity(n);
            for net in nets.iter_mut() {
                let pick = &group[rng.gen_range(0..group.len())];
                *net = &pick.op.matrix * &*net;
                step.push(pick.op.matrix.clone());
            }
            cascades.push(step);
        }
        // close each ion's sequence with the group element nearest its
        // inverse
        let mut closing = Vec::with_capacity(n);
        for net in &nets {
            let target = net.adjoint();
            let inv = group
                .iter()
                .min_by(|a, b| {
                    phase_invariant_distance(&a.op.matrix, &target)
                        .total_cmp(&phase_invariant_distance(&b.op.matrix, &target))
                })
                .unwrap();
            closing.push(inv.op.matrix.clone());
        }
        cascades.push(closing);
        let (program, _) = compile_cascade_sequence(&cascades, device, opts)?;
        let outcome = evolve_spin(&program, device, noise, cfg.seed.wrapping_mul(31).wrapping_add(k as u64))?;
        let pops = outcome.final_state.populations();
        for ion in 0..n {
            let mut p0 = 0.0;
            for (idx, p) in pops.iter().enumerate() {
                if (idx >> (n - 1 - ion)) & 1 == 0 {
                    p0 += p;
                }
            }
            survival[ion] += p0;
        }
    }
    for s in survival.iter_mut() {
        *s /= cfg.sequence_count as f64;
    }
    let per_gate_fidelity = survival
        .iter()
        .map(|s| s.max(0.0).powf(1.0 / cfg.cliffords_per_ion as f64))
        .collect();
    Ok(RbResult {
        survival,
        per_gate_fidelity,
        sequence_count: cfg.sequence_count,
        cliffords_per_ion: cfg.cliffords_per_ion,
    })
}

/// A fidelity with a symmetric uncertainty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateFidelity {
    pub value: f64,
    pub uncertainty: f64,
}

impl GateFidelity {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            uncertainty: 0.0,
        }
    }
}

/// Multiplicative uncorrelated composition: F = f_pb1^a · f_ms^b with
/// linear propagation of the input uncertainties.
pub fn error_budget(
    pb1: GateFidelity,
    ms: GateFidelity,
    pb1_count: usize,
    ms_count: usize,
) -> Result<GateFidelity, AnalysisError> {
    for (f, what) in [(pb1, "single-qubit"), (ms, "entangling")] {
        if !(0.0..=1.0).contains(&f.value) || f.uncertainty < 0.0 {
            return Err(AnalysisError::BadInput(format!(
                "{what} fidelity {} ± {} out of range",
                f.value, f.uncertainty
            )));
        }
    }
    let value = pb1.value.powi(pb1_count as i32) * ms.value.powi(ms_count as i32);
    let rel = pb1_count as f64 * safe_rel(pb1) + ms_count as f64 * safe_rel(ms);
    Ok(GateFidelity {
        value,
        uncertainty: value * rel,
    })
}

fn safe_rel(f: GateFidelity) -> f64 {
    if f.value > 0.0 {
        f.uncertainty / f.value
    } else {
        0.0
    }
}

/// Per-pulse fidelity consistent with a measured product:
/// f^count · other = target.
pub fn solve_pulse_fidelity(
    target: f64,
    count: usize,
    other: f64,
) -> Result<f64, AnalysisError> {
    if count == 0 || target <= 0.0 || other <= 0.0 {
        return Err(AnalysisError::BadInput(
            "need positive target, factor and count".into(),
        ));
    }
    Ok((target / other).powf(1.0 / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::ms_unitary_phased;
    use crate::linalg::{cr, StateVector};

    fn histogram_single(key: &str, n: usize, ancilla: usize) -> Histogram {
        let mut counts = BTreeMap::new();
        counts.insert(key.to_string(), 1000);
        Histogram::new(counts, n, ancilla).unwrap()
    }

    #[test]
    fn classical_baseline_matches_the_formula() {
        assert_eq!(classical_baseline(1), 1.0);
        assert_eq!(classical_baseline(2), 0.5);
        assert_eq!(classical_baseline(3), 0.25);
    }

    #[test]
    fn success_ignores_the_ancilla() {
        // layout for n=2: ion0 = s0, ion1 = ancilla, ion2 = s1
        let h = histogram_single("110", 2, 1);
        assert_eq!(success_probability(&h, "10").unwrap(), 1.0);
        let mut counts = BTreeMap::new();
        counts.insert("100".into(), 500);
        counts.insert("110".into(), 500);
        let h = Histogram::new(counts, 2, 1).unwrap();
        assert_eq!(success_probability(&h, "10").unwrap(), 1.0);
    }

    #[test]
    fn uniform_histogram_scores_at_chance() {
        let mut counts = BTreeMap::new();
        for idx in 0..8u32 {
            counts.insert(format!("{idx:03b}"), 100);
        }
        let h = Histogram::new(counts, 2, 1).unwrap();
        for s in ["00", "01", "10", "11"] {
            assert!((success_probability(&h, s).unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_rejects_bad_keys() {
        let mut counts = BTreeMap::new();
        counts.insert("10".into(), 1);
        assert!(Histogram::new(counts, 2, 1).is_err());
        let mut counts = BTreeMap::new();
        counts.insert("10x".into(), 1);
        assert!(Histogram::new(counts, 2, 1).is_err());
    }

    #[test]
    fn mutual_information_reference_points() {
        // distinct deterministic outputs, two secret bits
        let dist = |i: usize| {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            v
        };
        let conds: Vec<Vec<f64>> = (0..4).map(dist).collect();
        assert!((mutual_information(&conds, None).unwrap() - 2.0).abs() < 1e-9);
        // output independent of the secret
        let flat = vec![vec![0.25; 4]; 4];
        assert!(mutual_information(&flat, None).unwrap() < 1e-9);
        // classical single query: first bit revealed, second guessed
        let classical: Vec<Vec<f64>> = (0..4)
            .map(|s| {
                let mut v = vec![0.0; 4];
                let b0 = s >> 1;
                v[b0 << 1] = 0.5;
                v[(b0 << 1) | 1] = 0.5;
                v
            })
            .collect();
        assert!((mutual_information(&classical, None).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mutual_information_respects_entropy_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let secrets = rng.gen_range(2..5usize);
            let outputs = rng.gen_range(2..6usize);
            let conds: Vec<Vec<f64>> = (0..secrets)
                .map(|_| {
                    let mut v: Vec<f64> = (0..outputs).map(|_| rng.gen::<f64>() + 1e-3).collect();
                    let s: f64 = v.iter().sum();
                    v.iter_mut().for_each(|x| *x /= s);
                    v
                })
                .collect();
            let mi = mutual_information(&conds, None).unwrap();
            let h_s = (secrets as f64).log2();
            let mut marginal = vec![0.0; outputs];
            for c in &conds {
                for (m, x) in marginal.iter_mut().zip(c) {
                    *m += x / secrets as f64;
                }
            }
            let h_x = shannon_entropy(&marginal).unwrap();
            assert!(mi >= -1e-12);
            assert!(mi <= h_s.min(h_x) + 1e-9);
        }
    }

    #[test]
    fn bell_fidelity_reference_points() {
        assert!((bell_fidelity([0.5, 0.0, 0.0, 0.5], 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((bell_fidelity([0.25; 4], 0.0).unwrap() - 0.25).abs() < 1e-12);
        assert!(bell_fidelity([0.5, 0.5, 0.5, 0.5], 0.0).is_err());
        assert!(bell_fidelity([0.25; 4], 1.5).is_err());
    }

    fn ms_output() -> DensityMatrix {
        let zero = StateVector::basis(2, 0);
        let u = UnitaryOp::new_unchecked(ms_unitary_phased(PI / 2.0, 0.0, 0.0), "ms");
        zero.apply(&u).unwrap().to_density()
    }

    #[test]
    fn parity_contrast_of_the_ideal_pair_is_one() {
        let scan = parity_scan(&ms_output(), 32).unwrap();
        assert!((scan.contrast - 1.0).abs() < 1e-6, "A = {}", scan.contrast);
        assert!(scan.warning.is_none());
        let f = bell_fidelity([0.5, 0.0, 0.0, 0.5], scan.contrast).unwrap();
        assert!(f > 1.0 - 1e-6);
    }

    #[test]
    fn product_state_has_no_parity_oscillation() {
        let rho = StateVector::basis(2, 0).to_density();
        let scan = parity_scan(&rho, 32).unwrap();
        assert_eq!(scan.contrast, 0.0);
        assert!(scan.warning.is_some());
    }

    #[test]
    fn werner_mixture_contrast_tracks_the_weight() {
        for p in [0.3, 0.7] {
            let bell = ms_output();
            let mixed = DensityMatrix::maximally_mixed(2);
            let rho = DensityMatrix::new(
                &bell.matrix * cr(p) + &mixed.matrix * cr(1.0 - p),
                2,
                1,
            )
            .unwrap();
            let scan = parity_scan(&rho, 64).unwrap();
            assert!((scan.contrast - p).abs() < 1e-9, "p={p} A={}", scan.contrast);
        }
    }

    #[test]
    fn parity_contrast_is_z_rotation_invariant() {
        let rho = ms_output();
        let z = crate::gates::rot_z(0.83);
        let both = UnitaryOp::new_unchecked(
            crate::linalg::kron(&z.matrix, &z.matrix).unwrap(),
            "zz",
        );
        let rotated = rho.evolve(&both).unwrap();
        let a0 = parity_scan(&rho, 64).unwrap().contrast;
        let a1 = parity_scan(&rotated, 64).unwrap().contrast;
        assert!((a0 - a1).abs() < 1e-9);
    }

    #[test]
    fn noiseless_algorithm_run_is_perfect() {
        let device = DeviceModel::default_chain(3).unwrap();
        let run = run_bv(2, 2, &device, &NoiseConfig::ideal(), 500, 5).unwrap();
        assert!(run.exact_success > 1.0 - 1e-9);
        assert_eq!(run.success, 1.0);
        assert_eq!(run.histogram.shots, 500);
        // s = 10 keeps one oracle block dark, so only three of the four
        // sections carry live pulses
        assert_eq!(run.counts.pb1, 27);
    }

    #[test]
    fn lasers_off_blocks_do_not_perturb_ideal_results() {
        let device = DeviceModel::default_chain(3).unwrap();
        // s = 0 disables both oracle blocks but keeps their slots
        let run = run_bv(2, 0, &device, &NoiseConfig::ideal(), 200, 5).unwrap();
        assert!(run.exact_success > 1.0 - 1e-9);
        assert_eq!(run.counts.ms, 0);
    }

    #[test]
    fn average_success_of_a_uniform_output_model_is_chance() {
        for n in [1usize, 2] {
            let ancilla = if n == 1 { 1 } else { 1 };
            let mut counts = BTreeMap::new();
            for idx in 0..(1u32 << (n + 1)) {
                counts.insert(
                    format!("{idx:0width$b}", width = n + 1),
                    16,
                );
            }
            let h = Histogram::new(counts, n, ancilla).unwrap();
            let mut mean = 0.0;
            for s in 0..(1usize << n) {
                let key = format!("{s:0width$b}", width = n);
                mean += success_probability(&h, &key).unwrap();
            }
            mean /= (1 << n) as f64;
            assert!((mean - 2f64.powi(-(n as i32))).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_benchmarking_survives_every_sequence() {
        let device = DeviceModel::default_chain(2).unwrap();
        let cfg = RbConfig {
            sequence_count: 5,
            cliffords_per_ion: 6,
            seed: 3,
        };
        let res = run_rb(&device, &NoiseConfig::ideal(), &cfg).unwrap();
        for (ion, s) in res.survival.iter().enumerate() {
            assert!(*s > 1.0 - 1e-9, "ion {ion} survival {s}");
        }
    }

    #[test]
    fn error_budget_reference_points() {
        let one = GateFidelity::exact(1.0);
        assert_eq!(error_budget(one, one, 15, 1).unwrap().value, 1.0);
        assert_eq!(
            error_budget(GateFidelity::exact(0.5), GateFidelity::exact(0.3), 0, 0)
                .unwrap()
                .value,
            1.0
        );
        let f = solve_pulse_fidelity(0.89, 15, 0.961).unwrap();
        assert!((f - 0.9949).abs() < 1e-4, "f = {f:.5}");
        let round =
            error_budget(GateFidelity::exact(f), GateFidelity::exact(0.961), 15, 1).unwrap();
        assert!((round.value - 0.89).abs() < 1e-9);
        let budget = error_budget(
            GateFidelity {
                value: 0.9955,
                uncertainty: 0.001,
            },
            GateFidelity {
                value: 0.961,
                uncertainty: 0.008,
            },
            15,
            1,
        )
        .unwrap();
        assert!(budget.uncertainty > 0.0);
        let rel = 15.0 * 0.001 / 0.9955 + 0.008 / 0.961;
        assert!((budget.uncertainty - budget.value * rel).abs() < 1e-12);
    }
}
