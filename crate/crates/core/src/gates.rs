//! Ideal gate constructors: equatorial rotations, the PB1 composite
//! expansion, the Mølmer-Sørensen gate and its echo variant, a
//! CNOT-from-MS template, the single-qubit Clifford group, and the
//! hidden-string oracle.
//!
//! Everything here is noise-free; coupling these shapes to hardware
//! imperfections is the simulator's job.

use crate::linalg::{
    self, c, cr, identity, kron, phase_invariant_distance, su2_exp, CMat, QuantumError, UnitaryOp,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const DEFAULT_T_PI2_US: f64 = 6.0;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("rotation angle {0} outside (0, pi]")]
    ThetaOutOfRange(f64),
    #[error("ions {0} and {1} are not adjacent")]
    NonAdjacentPair(usize, usize),
    #[error("secret string has {0} bits, expected {1}")]
    SecretLength(usize, usize),
    #[error("ancilla index {0} out of range for {1} ions")]
    BadAncilla(usize, usize),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

/// A physical π/2-class pulse about the equatorial axis cos φ X + sin φ Y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquatorialPulse {
    pub phi: f64,
    pub theta: f64,
    pub duration_us: f64,
}

impl EquatorialPulse {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self::with_t_pi2(phi, theta, DEFAULT_T_PI2_US)
    }

    pub fn with_t_pi2(phi: f64, theta: f64, t_pi2_us: f64) -> Self {
        Self {
            phi,
            theta,
            duration_us: theta.abs() / (PI / 2.0) * t_pi2_us,
        }
    }

    /// Unitary with the drive amplitude scaled by `rabi_scale` (1.0 ideal).
    pub fn unitary(&self, rabi_scale: f64) -> CMat {
        su2_exp(self.theta * rabi_scale, self.phi.cos(), self.phi.sin(), 0.0)
    }
}

/// R_φ(θ) = exp(−i θ/2 (cos φ X + sin φ Y)).
pub fn rotation(phi: f64, theta: f64) -> UnitaryOp {
    UnitaryOp::new_unchecked(
        su2_exp(theta, phi.cos(), phi.sin(), 0.0),
        format!("R({phi:.3},{theta:.3})"),
    )
}

/// R_z(φ) = exp(−i φ/2 Z); virtual in hardware, explicit here.
pub fn rot_z(phi: f64) -> UnitaryOp {
    UnitaryOp::new_unchecked(su2_exp(phi, 0.0, 0.0, 1.0), format!("Rz({phi:.3})"))
}

pub fn hadamard() -> UnitaryOp {
    let h = CMat::from_row_slice(2, 2, &[cr(1.0), cr(1.0), cr(1.0), cr(-1.0)]) / cr(2f64.sqrt());
    UnitaryOp::new_unchecked(h, "H")
}

/// PB1 passband composite: two 2π pulses bracketing the target pulse.
///
/// φ₁ solves 4π cos φ₁ + θ = 0, the first-order amplitude-error
/// cancellation condition for this pulse ordering; the flatness tests
/// below are the authoritative contract.
pub fn pb1_phi1(theta: f64) -> f64 {
    (-theta / (4.0 * PI)).acos()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pb1Sequence {
    pub pulses: Vec<EquatorialPulse>,
    pub target_theta: f64,
    pub target_phi: f64,
}

impl Pb1Sequence {
    /// Composite unitary with uniform Rabi scaling (1 + ε shows up as
    /// `rabi_scale` = 1 + ε on every pulse).
    pub fn composite(&self, rabi_scale: f64) -> CMat {
        let mut u = identity(2);
        for p in &self.pulses {
            u = p.unitary(rabi_scale) * u;
        }
        u
    }

    pub fn target_unitary(&self) -> CMat {
        su2_exp(
            self.target_theta,
            self.target_phi.cos(),
            self.target_phi.sin(),
            0.0,
        )
    }

    pub fn total_area(&self) -> f64 {
        self.pulses.iter().map(|p| p.theta.abs()).sum()
    }
}

/// Expand R_φ(θ) into its PB1-stabilized form: 2π at φ+φ₁, 2π at φ−φ₁,
/// then θ at φ.
pub fn pb1_expand(theta: f64, phi: f64) -> Result<Pb1Sequence, GateError> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(GateError::ThetaOutOfRange(theta));
    }
    let phi1 = pb1_phi1(theta);
    Ok(Pb1Sequence {
        pulses: vec![
            EquatorialPulse::new(phi + phi1, 2.0 * PI),
            EquatorialPulse::new(phi - phi1, 2.0 * PI),
            EquatorialPulse::new(phi, theta),
        ],
        target_theta: theta,
        target_phi: phi,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsGateSpec {
    pub target_pair: (usize, usize),
    pub theta: f64,
    pub echo: bool,
    /// Ions receiving the echo Y π-pulses (chain indices).
    pub echo_y_ions: Vec<usize>,
}

impl MsGateSpec {
    pub fn simple(a: usize, b: usize) -> Self {
        Self {
            target_pair: (a, b),
            theta: PI / 2.0,
            echo: false,
            echo_y_ions: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), GateError> {
        let (a, b) = self.target_pair;
        if a.abs_diff(b) != 1 {
            return Err(GateError::NonAdjacentPair(a, b));
        }
        if !(self.theta > 0.0 && self.theta <= PI) {
            return Err(GateError::ThetaOutOfRange(self.theta));
        }
        Ok(())
    }
}

/// exp(−i θ/2 X⊗X) on the target pair; the fully entangling θ = π/2 maps
/// |00⟩ to (|00⟩ − i|11⟩)/√2.
pub fn ms_unitary(spec: &MsGateSpec) -> Result<UnitaryOp, GateError> {
    spec.validate()?;
    let xx = kron(&linalg::pauli_x(), &linalg::pauli_x())?;
    let (s, co) = (spec.theta / 2.0).sin_cos();
    let m = identity(4) * cr(co) - xx * c(0.0, s);
    Ok(UnitaryOp::new(m, format!("MS({:.3})", spec.theta))?)
}

/// exp(−i θ/2 σ_{φa}⊗σ_{φb}) with σ_φ = cos φ X + sin φ Y: the
/// entangling drive in rotated per-ion spin frames. φa = φb = 0 is the
/// plain X⊗X gate.
pub fn ms_unitary_phased(theta: f64, phi_a: f64, phi_b: f64) -> CMat {
    let sigma = |phi: f64| {
        CMat::from_row_slice(
            2,
            2,
            &[cr(0.0), c(phi.cos(), -phi.sin()), c(phi.cos(), phi.sin()), cr(0.0)],
        )
    };
    let ss = sigma(phi_a).kronecker(&sigma(phi_b));
    let (s, co) = (theta / 2.0).sin_cos();
    identity(4) * cr(co) - ss * c(0.0, s)
}

/// One step of a compiled two-qubit template, time-ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GateStep {
    /// Physical equatorial pulse on one ion.
    Pulse { ion: usize, phi: f64, theta: f64 },
    /// Entangling gate on the template's pair.
    Ms { theta: f64 },
    /// Virtual z-rotation recorded in the frame ledger.
    FrameZ { ion: usize, phi: f64 },
}

/// CNOT built around one fully entangling MS gate:
/// Ry(π/2) on control and R_π(π/2) on target, MS(π/2), Ry(−π/2) on
/// control, and a tracked R_z(−π/2) frame on the control. Net unitary
/// equals CNOT up to global phase once the frame resolves.
pub fn cnot_template(control: usize, target: usize) -> Result<Vec<GateStep>, GateError> {
    if control.abs_diff(target) != 1 {
        return Err(GateError::NonAdjacentPair(control, target));
    }
    Ok(vec![
        GateStep::Pulse {
            ion: control,
            phi: PI / 2.0,
            theta: PI / 2.0,
        },
        GateStep::Pulse {
            ion: target,
            phi: PI,
            theta: PI / 2.0,
        },
        GateStep::Ms { theta: PI / 2.0 },
        GateStep::Pulse {
            ion: control,
            phi: 3.0 * PI / 2.0,
            theta: PI / 2.0,
        },
        GateStep::FrameZ {
            ion: control,
            phi: -PI / 2.0,
        },
    ])
}

/// Net unitary of a template on `qubit_count` ions, frame steps included
/// as explicit R_z.
pub fn template_unitary(
    steps: &[GateStep],
    pair: (usize, usize),
    qubit_count: usize,
) -> Result<UnitaryOp, GateError> {
    let mut u = UnitaryOp::new_unchecked(identity(1 << qubit_count), "template");
    for step in steps {
        let op = match step {
            GateStep::Pulse { ion, phi, theta } => {
                rotation(*phi, *theta).embed(&[*ion], qubit_count)?
            }
            GateStep::FrameZ { ion, phi } => rot_z(*phi).embed(&[*ion], qubit_count)?,
            GateStep::Ms { theta } => {
                let spec = MsGateSpec {
                    target_pair: pair,
                    theta: *theta,
                    echo: false,
                    echo_y_ions: vec![],
                };
                ms_unitary(&spec)?.embed(&[pair.0, pair.1], qubit_count)?
            }
        };
        u = u.then(&op)?;
    }
    Ok(u)
}

/// Echo expansion of an MS gate: two θ/2 halves, each followed by a Y
/// π-pulse on the configured ions. With Y pulses on both targeted ions
/// the net unitary is the full MS(θ).
pub fn ms_echo_steps(spec: &MsGateSpec) -> Result<Vec<GateStep>, GateError> {
    spec.validate()?;
    let mut steps = Vec::new();
    for _ in 0..2 {
        steps.push(GateStep::Ms {
            theta: spec.theta / 2.0,
        });
        for &ion in &spec.echo_y_ions {
            steps.push(GateStep::Pulse {
                ion,
                phi: PI / 2.0,
                theta: PI,
            });
        }
    }
    Ok(steps)
}

pub fn ideal_cnot() -> UnitaryOp {
    let mut m = CMat::zeros(4, 4);
    m[(0, 0)] = cr(1.0);
    m[(1, 1)] = cr(1.0);
    m[(2, 3)] = cr(1.0);
    m[(3, 2)] = cr(1.0);
    UnitaryOp::new_unchecked(m, "CNOT")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSpec {
    pub n: usize,
    /// Secret bits, index 0 first (= ion 0, the most significant data bit).
    pub s: Vec<u8>,
    /// Initial ancilla value assumed by the a ⊕ s·x update (default 1).
    pub a: u8,
}

impl OracleSpec {
    pub fn new(n: usize, s_value: usize) -> Result<Self, GateError> {
        if s_value >= 1 << n {
            return Err(GateError::SecretLength(s_value, n));
        }
        let s = (0..n).map(|i| ((s_value >> (n - 1 - i)) & 1) as u8).collect();
        Ok(Self { n, s, a: 1 })
    }

    pub fn from_bits(bits: &str) -> Result<Self, GateError> {
        let s: Vec<u8> = bits
            .chars()
            .map(|c| if c == '1' { 1 } else { 0 })
            .collect();
        let n = s.len();
        Ok(Self { n, s, a: 1 })
    }

    pub fn s_string(&self) -> String {
        self.s.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }

    pub fn validate(&self) -> Result<(), GateError> {
        if self.s.len() != self.n {
            return Err(GateError::SecretLength(self.s.len(), self.n));
        }
        Ok(())
    }
}

/// Ion layout of the compiled chain: data bits in ion order with the
/// ancilla spliced in at `ancilla_index`.
pub fn ion_layout(n: usize, ancilla_index: usize) -> Result<Vec<Option<usize>>, GateError> {
    let total = n + 1;
    if ancilla_index >= total {
        return Err(GateError::BadAncilla(ancilla_index, total));
    }
    let mut layout = Vec::with_capacity(total);
    let mut data = 0;
    for ion in 0..total {
        if ion == ancilla_index {
            layout.push(None);
        } else {
            layout.push(Some(data));
            data += 1;
        }
    }
    Ok(layout)
}

/// Permutation unitary on n+1 qubits flipping the ancilla by s·x mod 2.
/// `ancilla_index` places the ancilla within the chain (data bits keep
/// ion order, most significant first).
pub fn oracle_unitary(spec: &OracleSpec, ancilla_index: usize) -> Result<UnitaryOp, GateError> {
    spec.validate()?;
    let total = spec.n + 1;
    let layout = ion_layout(spec.n, ancilla_index)?;
    let dim = 1usize << total;
    let mut m = CMat::zeros(dim, dim);
    for col in 0..dim {
        let bit = |ion: usize| (col >> (total - 1 - ion)) & 1;
        let mut dot = 0usize;
        for (ion, slot) in layout.iter().enumerate() {
            if let Some(data) = slot {
                dot ^= bit(ion) & spec.s[*data] as usize;
            }
        }
        let shift = total - 1 - ancilla_index;
        let row = col ^ (dot << shift);
        m[(row, col)] = cr(1.0);
    }
    Ok(UnitaryOp::new(m, format!("U_{}", spec.s_string()))?)
}

/// Same oracle as a product of CNOTs conditioned on the bits of s.
pub fn oracle_from_cnots(spec: &OracleSpec, ancilla_index: usize) -> Result<UnitaryOp, GateError> {
    spec.validate()?;
    let total = spec.n + 1;
    let layout = ion_layout(spec.n, ancilla_index)?;
    let mut u = UnitaryOp::new_unchecked(identity(1 << total), "oracle");
    for (ion, slot) in layout.iter().enumerate() {
        if let Some(data) = slot {
            if spec.s[*data] == 1 {
                let cx = ideal_cnot().embed(&[ion, ancilla_index], total)?;
                u = u.then(&cx)?;
            }
        }
    }
    Ok(u)
}

/// One element of the single-qubit Clifford group with its canonical
/// hardware decomposition: at most two π/2 pulses plus a tracked z.
#[derive(Debug, Clone)]
pub struct Clifford1q {
    pub op: UnitaryOp,
    pub pulses: Vec<EquatorialPulse>,
    pub trailing_z: f64,
}

impl Clifford1q {
    /// Pulses then trailing z, as executed.
    pub fn decomposed_unitary(&self) -> CMat {
        let mut u = identity(2);
        for p in &self.pulses {
            u = p.unitary(1.0) * u;
        }
        su2_exp(self.trailing_z, 0.0, 0.0, 1.0) * u
    }
}

fn canonical_phase(m: &CMat) -> CMat {
    // fix global phase so the largest entry is real positive
    let mut idx = (0, 0);
    let mut best = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)].norm() > best + 1e-12 {
                best = m[(i, j)].norm();
                idx = (i, j);
            }
        }
    }
    let z = m[idx] / m[idx].norm();
    m * z.conj()
}

/// The 24 single-qubit Cliffords, generated by closure over {H, S} and
/// each decomposed by exhaustive search over 0, 1, or 2 π/2 pulses with
/// axis phases on the π/2 grid.
pub fn clifford_group_1q() -> Vec<Clifford1q> {
    let h = hadamard().matrix;
    let s_gate = CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), c(0.0, 1.0)]);
    let mut elements: Vec<CMat> = vec![identity(2)];
    loop {
        let mut added = false;
        let snapshot = elements.clone();
        for e in &snapshot {
            for g in [&h, &s_gate] {
                let cand = g * e;
                let new = elements
                    .iter()
                    .all(|x| phase_invariant_distance(&cand, x) > 1e-8);
                if new {
                    elements.push(cand);
                    added = true;
                }
            }
        }
        if !added {
            break;
        }
    }
    debug_assert_eq!(elements.len(), 24);
    elements
        .into_iter()
        .map(|m| {
            let (pulses, trailing_z) =
                decompose_on_grid(&m).expect("every 1q Clifford decomposes into <= 2 pulses");
            Clifford1q {
                op: UnitaryOp::new_unchecked(canonical_phase(&m), "C1"),
                pulses,
                trailing_z,
            }
        })
        .collect()
}

/// Try 0, 1, then 2 π/2 pulses at grid phases; solve the trailing z
/// exactly when the residual is diagonal.
fn decompose_on_grid(target: &CMat) -> Option<(Vec<EquatorialPulse>, f64)> {
    let grid: Vec<f64> = (0..4).map(|k| k as f64 * PI / 2.0).collect();
    let try_pulses = |pulses: &[EquatorialPulse]| -> Option<f64> {
        let mut p = identity(2);
        for pl in pulses {
            p = pl.unitary(1.0) * p;
        }
        // need target = phase * Z(gamma) * p  ->  d = target * p^dag diagonal
        let d = target * p.adjoint();
        if d[(0, 1)].norm() > 1e-9 || d[(1, 0)].norm() > 1e-9 {
            return None;
        }
        Some(d[(1, 1)].arg() - d[(0, 0)].arg())
    };
    if let Some(z) = try_pulses(&[]) {
        return Some((vec![], z));
    }
    for &phi in &grid {
        let p = EquatorialPulse::new(phi, PI / 2.0);
        if let Some(z) = try_pulses(&[p]) {
            return Some((vec![p], z));
        }
    }
    for &phi1 in &grid {
        for &phi2 in &grid {
            let p1 = EquatorialPulse::new(phi1, PI / 2.0);
            let p2 = EquatorialPulse::new(phi2, PI / 2.0);
            if let Some(z) = try_pulses(&[p1, p2]) {
                return Some((vec![p1, p2], z));
            }
        }
    }
    None
}
