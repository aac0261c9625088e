//! Static calibration description of the ion chain: geometry, beam
//! profiles, light-shift table, motional modes, and timing constants.
//!
//! A `DeviceModel` is the single source of calibration truth for the
//! compiler and simulator. It is immutable after load and safe to share
//! read-only across concurrent simulations.
//!
//! Trap frequency defaults (ω_axial/2π = 1.0 MHz, ω_radial/2π = 2.0 MHz)
//! are assumptions, not measured values, and are fully configurable.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

pub const HBAR: f64 = 1.054_571_817e-34; // J s
pub const ATOMIC_MASS_KG: f64 = 1.660_539_066_60e-27;
pub const YB171_MASS_KG: f64 = 170.936 * ATOMIC_MASS_KG;
pub const RAMAN_WAVELENGTH_M: f64 = 355e-9;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("unsupported ion count {0} (expected 1..=3)")]
    UnsupportedIonCount(usize),
    #[error("unstable trap configuration: mode {0} has non-positive squared frequency {1:.3e}")]
    UnstableMode(usize, f64),
    #[error("light shift table missing entry for ion {0} at location {1}")]
    MissingLightShift(usize, String),
    #[error("beam profile missing entry for ion {0} at location {1}")]
    MissingBeamEntry(usize, String),
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("device file parse error: {0}")]
    Parse(String),
    #[error("singular detuning: delta = 0")]
    SingularDetuning,
}

/// A place the chain can be parked so the gate beams address a fixed set
/// of ions. `Pair(i)` illuminates ions i and i+1; `Edge(i)` parks the
/// chain half a spacing out so only ion i is illuminated; `Home` is the
/// load/detection position with the beams off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Station {
    Home,
    Edge(usize),
    Pair(usize),
}

impl Station {
    pub fn id(&self) -> String {
        match self {
            Station::Home => "home".to_string(),
            Station::Edge(i) => format!("e{i}"),
            Station::Pair(i) => format!("g{}{}", i, i + 1),
        }
    }

    pub fn parse(s: &str) -> Option<Station> {
        if s == "home" {
            return Some(Station::Home);
        }
        if let Some(rest) = s.strip_prefix('e') {
            return rest.parse().ok().map(Station::Edge);
        }
        if let Some(rest) = s.strip_prefix('g') {
            let i: usize = rest.get(0..1)?.parse().ok()?;
            return Some(Station::Pair(i));
        }
        None
    }

    /// Ions illuminated when the chain is parked at this station.
    pub fn targeted(&self, ion_count: usize) -> Vec<usize> {
        match *self {
            Station::Home => vec![],
            Station::Edge(i) if i < ion_count => vec![i],
            Station::Edge(_) => vec![],
            Station::Pair(i) => [i, i + 1]
                .into_iter()
                .filter(|&q| q < ion_count)
                .collect(),
        }
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub ion_count: usize,
    pub ancilla_index: usize,
    /// Ion spacing in μm.
    pub ion_spacing_um: f64,
    /// One gate location id per adjacent ion pair ("g01", "g12", ...).
    pub gate_locations: Vec<String>,
}

impl ChainConfig {
    pub fn for_ion_count(ion_count: usize) -> Result<Self, DeviceError> {
        if !(2..=3).contains(&ion_count) {
            return Err(DeviceError::UnsupportedIonCount(ion_count));
        }
        let ancilla_index = match ion_count {
            2 => 1,
            _ => 1, // center ion of three
        };
        Ok(Self {
            ion_count,
            ancilla_index,
            ion_spacing_um: 5.0,
            gate_locations: (0..ion_count - 1).map(|i| Station::Pair(i).id()).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(2..=3).contains(&self.ion_count) {
            return Err(DeviceError::UnsupportedIonCount(self.ion_count));
        }
        if self.ion_count == 3 && self.ancilla_index != 1 {
            return Err(DeviceError::InvalidChain(
                "three-ion chain requires the center ion (index 1) as ancilla".into(),
            ));
        }
        if self.gate_locations.len() != self.ion_count - 1 {
            return Err(DeviceError::InvalidChain(format!(
                "expected {} gate locations, found {}",
                self.ion_count - 1,
                self.gate_locations.len()
            )));
        }
        Ok(())
    }

    pub fn pair_stations(&self) -> Vec<Station> {
        (0..self.ion_count - 1).map(Station::Pair).collect()
    }

    pub fn data_ions(&self) -> Vec<usize> {
        (0..self.ion_count)
            .filter(|&q| q != self.ancilla_index)
            .collect()
    }
}

/// Relative Rabi rate per (ion, station); 1.0 for targeted ions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamProfile {
    pub relative_rabi: BTreeMap<String, f64>,
    /// Fallback for untargeted neighbors when no explicit entry exists.
    pub default_neighbor: f64,
}

impl BeamProfile {
    fn key(ion: usize, station: Station) -> String {
        format!("{}@{}", ion, station.id())
    }

    pub fn uniform(chain: &ChainConfig, neighbor: f64) -> Self {
        let mut map = BTreeMap::new();
        for st in Self::all_stations(chain) {
            let targeted = st.targeted(chain.ion_count);
            for ion in 0..chain.ion_count {
                let v = if targeted.contains(&ion) {
                    1.0
                } else if Self::is_neighbor(ion, st, chain.ion_count) {
                    neighbor
                } else {
                    0.0
                };
                map.insert(Self::key(ion, st), v);
            }
        }
        Self {
            relative_rabi: map,
            default_neighbor: neighbor,
        }
    }

    fn all_stations(chain: &ChainConfig) -> Vec<Station> {
        let mut v = vec![Station::Edge(0)];
        v.extend((0..chain.ion_count - 1).map(Station::Pair));
        v.push(Station::Edge(chain.ion_count - 1));
        v
    }

    fn is_neighbor(ion: usize, st: Station, ion_count: usize) -> bool {
        let targeted = st.targeted(ion_count);
        targeted
            .iter()
            .any(|&t| (t as isize - ion as isize).abs() == 1)
            && !targeted.contains(&ion)
    }

    pub fn rabi(&self, ion: usize, station: Station) -> f64 {
        *self
            .relative_rabi
            .get(&Self::key(ion, station))
            .unwrap_or(&0.0)
    }
}

/// Qubit-splitting light shift per (ion, station), in Hz.
///
/// Distance classes from the measured defaults: 650 Hz targeted, 350 Hz
/// neighbor, 100 Hz two locations away (three-ion chains only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LightShiftTable {
    pub shifts_hz: BTreeMap<String, f64>,
}

impl LightShiftTable {
    fn key(ion: usize, station: Station) -> String {
        format!("{}@{}", ion, station.id())
    }

    pub fn defaults(chain: &ChainConfig) -> Self {
        let mut map = BTreeMap::new();
        for st in BeamProfile::all_stations(chain) {
            let targeted = st.targeted(chain.ion_count);
            for ion in 0..chain.ion_count {
                let dist = targeted
                    .iter()
                    .map(|&t| (t as isize - ion as isize).unsigned_abs())
                    .min()
                    .unwrap_or(usize::MAX);
                let v = match dist {
                    0 => 650.0,
                    1 => 350.0,
                    2 => 100.0,
                    _ => 0.0,
                };
                map.insert(Self::key(ion, st), v);
            }
        }
        Self { shifts_hz: map }
    }

    pub fn shift_hz(&self, ion: usize, station: Station) -> Result<f64, DeviceError> {
        self.shifts_hz
            .get(&Self::key(ion, station))
            .copied()
            .ok_or_else(|| DeviceError::MissingLightShift(ion, station.id()))
    }

    /// Table lookup must be total over all stations of the chain.
    pub fn validate(&self, chain: &ChainConfig) -> Result<(), DeviceError> {
        for st in BeamProfile::all_stations(chain) {
            for ion in 0..chain.ion_count {
                self.shift_hz(ion, st)?;
            }
        }
        Ok(())
    }
}

/// δ_ac = Ω²_ac / 2Δ, inputs angular, result in plain Hz.
pub fn light_shift_from_rabi(omega_ac: f64, delta: f64) -> Result<f64, DeviceError> {
    if delta == 0.0 {
        return Err(DeviceError::SingularDetuning);
    }
    Ok(omega_ac * omega_ac / (2.0 * delta) / (2.0 * std::f64::consts::PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    Com,
    Rocking,
    Other,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionalMode {
    pub label: ModeLabel,
    /// Angular frequency, rad/s.
    pub frequency: f64,
    /// Per-ion participation, unit norm.
    pub eigenvector: Vec<f64>,
    /// Per-ion Lamb-Dicke parameter.
    pub lamb_dicke: Vec<f64>,
    /// Mean quanta after cooling.
    pub nbar: f64,
    /// Quanta per second.
    pub heating_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeAxis {
    Axial,
    Radial,
}

/// Dimensionless equilibrium positions minimizing u²/2 + Σ 1/|u_i-u_j|,
/// Newton iteration from a uniformly spaced seed.
pub fn equilibrium_positions(ion_count: usize) -> Vec<f64> {
    let n = ion_count;
    let mut u: Vec<f64> = (0..n).map(|i| i as f64 - (n as f64 - 1.0) / 2.0).collect();
    for _ in 0..200 {
        let mut grad = vec![0.0; n];
        let mut hess = vec![vec![0.0; n]; n];
        for i in 0..n {
            grad[i] = u[i];
            hess[i][i] = 1.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = u[i] - u[j];
                grad[i] -= d.signum() / (d * d);
                let c = 2.0 / d.abs().powi(3);
                hess[i][i] += c;
                hess[i][j] -= c;
            }
        }
        // solve H step = grad
        let h = nalgebra::DMatrix::from_fn(n, n, |i, j| hess[i][j]);
        let g = nalgebra::DVector::from_vec(grad.clone());
        let step = match h.lu().solve(&g) {
            Some(s) => s,
            None => break,
        };
        let mut moved = 0.0f64;
        for i in 0..n {
            u[i] -= step[i];
            moved = moved.max(step[i].abs());
        }
        if moved < 1e-14 {
            break;
        }
    }
    u
}

/// Collective normal modes from the Hessian of the harmonic + Coulomb
/// potential at equilibrium. Radial modes require sufficient transverse
/// confinement to be real; an imaginary mode frequency is an error.
pub fn normal_modes(
    ion_count: usize,
    axial_freq: f64,
    radial_freq: f64,
    axis: ModeAxis,
) -> Result<Vec<MotionalMode>, DeviceError> {
    if !(1..=3).contains(&ion_count) {
        return Err(DeviceError::UnsupportedIonCount(ion_count));
    }
    let n = ion_count;
    if n == 1 {
        let freq = match axis {
            ModeAxis::Axial => axial_freq,
            ModeAxis::Radial => radial_freq,
        };
        return Ok(vec![MotionalMode {
            label: ModeLabel::Com,
            frequency: freq,
            eigenvector: vec![1.0],
            lamb_dicke: vec![0.0],
            nbar: 0.0,
            heating_rate: 0.0,
        }]);
    }
    let u = equilibrium_positions(n);
    let alpha = (radial_freq / axial_freq).powi(2);
    let mut h = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                let mut diag = match axis {
                    ModeAxis::Axial => 1.0,
                    ModeAxis::Radial => alpha,
                };
                for k in 0..n {
                    if k != i {
                        let c = 1.0 / (u[i] - u[k]).abs().powi(3);
                        diag += match axis {
                            ModeAxis::Axial => 2.0 * c,
                            ModeAxis::Radial => -c,
                        };
                    }
                }
                h[(i, j)] = diag;
            } else {
                let c = 1.0 / (u[i] - u[j]).abs().powi(3);
                h[(i, j)] = match axis {
                    ModeAxis::Axial => -2.0 * c,
                    ModeAxis::Radial => c,
                };
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut modes: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let lambda = eig.eigenvalues[k];
            let vec: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, k)]).collect();
            (lambda, vec)
        })
        .collect();
    // highest frequency first for radial (COM), lowest first for axial (COM)
    match axis {
        ModeAxis::Axial => modes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap()),
        ModeAxis::Radial => modes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap()),
    }
    let mut out = Vec::with_capacity(n);
    for (k, (lambda, mut vec)) in modes.into_iter().enumerate() {
        if lambda <= 0.0 {
            return Err(DeviceError::UnstableMode(k, lambda));
        }
        // sign convention: COM participation positive
        if vec.iter().sum::<f64>() < 0.0 {
            for v in &mut vec {
                *v = -*v;
            }
        }
        let label = match k {
            0 => ModeLabel::Com,
            1 => ModeLabel::Rocking,
            _ => ModeLabel::Other,
        };
        out.push(MotionalMode {
            label,
            frequency: axial_freq * lambda.sqrt(),
            eigenvector: vec,
            lamb_dicke: vec![0.0; n],
            nbar: 0.0,
            heating_rate: 0.0,
        });
    }
    Ok(out)
}

/// η_i = Δk √(ħ/(2 m ω)) b_i.
pub fn lamb_dicke(mode: &MotionalMode, wavevector: f64, ion_mass: f64) -> Vec<f64> {
    let x0 = (HBAR / (2.0 * ion_mass * mode.frequency)).sqrt();
    mode.eigenvector.iter().map(|b| wavevector * x0 * b).collect()
}

/// Counter-propagating Raman effective wavevector, Δk = 2·(2π/λ).
pub fn raman_wavevector() -> f64 {
    2.0 * (2.0 * std::f64::consts::PI / RAMAN_WAVELENGTH_M)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingModel {
    pub t_pi2_us: f64,
    pub t_pb1_us: f64,
    pub t_ms_us: f64,
    pub t_transport_us: f64,
    pub t_overhead_per_event_us: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            t_pi2_us: 6.0,
            t_pb1_us: 102.0,
            t_ms_us: 160.0,
            t_transport_us: 100.0,
            // calibrated once so the two-ion algorithm totals 3.9 ms
            t_overhead_per_event_us: 52.4,
        }
    }
}

impl TimingModel {
    /// Laser-on time inside one PB1 slot (two 2π pulses plus the π/2
    /// target pulse); the rest of the slot is dead time between segments.
    pub fn pb1_drive_us(&self) -> f64 {
        9.0 * self.t_pi2_us
    }

    /// Dead time between the three drive segments of a PB1 slot.
    pub fn pb1_delay_us(&self) -> f64 {
        (self.t_pb1_us - self.pb1_drive_us()) / 3.0
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        for (name, v) in [
            ("t_pi2", self.t_pi2_us),
            ("t_pb1", self.t_pb1_us),
            ("t_ms", self.t_ms_us),
            ("t_transport", self.t_transport_us),
            ("t_overhead_per_event", self.t_overhead_per_event_us),
        ] {
            if v < 0.0 {
                return Err(DeviceError::InvalidTiming(format!("{name} < 0")));
            }
        }
        if self.t_pb1_us < 9.0 * self.t_pi2_us {
            return Err(DeviceError::InvalidTiming(format!(
                "t_pb1 = {} < 9 t_pi2 = {}; the sequence contains 4.5π of rotation",
                self.t_pb1_us,
                9.0 * self.t_pi2_us
            )));
        }
        Ok(())
    }
}

/// Per-location MS frame corrections: φ_ab is the Raman-phase offset
/// sampled during the increased axial confinement of the MS gate, φ_r the
/// light-shift phase accumulated during the gate. Both enter the compiler
/// as R_z corrections and the simulator as the matching frame shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsFrameCal {
    pub phi_ab_rad: f64,
    pub phi_r_rad: f64,
}

impl Default for MsFrameCal {
    fn default() -> Self {
        Self {
            phi_ab_rad: 0.37,
            phi_r_rad: 0.65,
        }
    }
}

/// Padded per-section PB1 slot counts reproducing the reported totals.
/// The minimal compiler output is below these; the padding pass tops
/// each section up so noise studies see hardware-equivalent pulse counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceCounts {
    pub prep: usize,
    pub per_cnot: usize,
    pub analysis: usize,
}

impl ReferenceCounts {
    pub fn for_ion_count(ion_count: usize) -> Self {
        match ion_count {
            2 => Self {
                prep: 3,
                per_cnot: 9,
                analysis: 3,
            },
            _ => Self {
                prep: 6,
                per_cnot: 15,
                analysis: 6,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceModel {
    pub chain: ChainConfig,
    pub beams: BeamProfile,
    pub light_shifts: LightShiftTable,
    pub radial_modes: Vec<MotionalMode>,
    pub timing: TimingModel,
    pub ms_frame: BTreeMap<String, MsFrameCal>,
    pub reference_counts: ReferenceCounts,
    /// Axial (ω/2π Hz) and radial trap frequencies used to derive modes.
    pub axial_freq_hz: f64,
    pub radial_freq_hz: f64,
}

impl DeviceModel {
    /// Default model for a 2- or 3-ion chain with documented assumptions.
    pub fn default_chain(ion_count: usize) -> Result<Self, DeviceError> {
        let chain = ChainConfig::for_ion_count(ion_count)?;
        let axial_hz = 1.0e6;
        let radial_hz = 2.0e6;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut radial_modes =
            normal_modes(ion_count, two_pi * axial_hz, two_pi * radial_hz, ModeAxis::Radial)?;
        let dk = raman_wavevector();
        for m in &mut radial_modes {
            m.lamb_dicke = lamb_dicke(m, dk, YB171_MASS_KG);
            match m.label {
                ModeLabel::Com => {
                    m.nbar = 0.6;
                    m.heating_rate = 50.0;
                }
                _ => {
                    m.nbar = 0.05;
                    m.heating_rate = 5.0;
                }
            }
        }
        let mut ms_frame = BTreeMap::new();
        for st in chain.pair_stations() {
            ms_frame.insert(st.id(), MsFrameCal::default());
        }
        let model = Self {
            beams: BeamProfile::uniform(&chain, 0.2),
            light_shifts: LightShiftTable::defaults(&chain),
            reference_counts: ReferenceCounts::for_ion_count(ion_count),
            chain,
            radial_modes,
            timing: TimingModel::default(),
            ms_frame,
            axial_freq_hz: axial_hz,
            radial_freq_hz: radial_hz,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        self.chain.validate()?;
        self.timing.validate()?;
        self.light_shifts.validate(&self.chain)?;
        for (i, m) in self.radial_modes.iter().enumerate() {
            let norm: f64 = m.eigenvector.iter().map(|b| b * b).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(DeviceError::InvalidChain(format!(
                    "mode {i} eigenvector norm {norm}"
                )));
            }
            if m.nbar < 0.0 || m.heating_rate < 0.0 {
                return Err(DeviceError::InvalidChain(format!(
                    "mode {i} has negative nbar or heating rate"
                )));
            }
        }
        Ok(())
    }

    pub fn mode(&self, label: ModeLabel) -> Option<&MotionalMode> {
        self.radial_modes.iter().find(|m| m.label == label)
    }

    /// Stations the compiler may visit, end edges included.
    pub fn stations(&self) -> Vec<Station> {
        BeamProfile::all_stations(&self.chain)
    }

    pub fn ms_frame_for(&self, station: Station) -> MsFrameCal {
        self.ms_frame
            .get(&station.id())
            .cloned()
            .unwrap_or_default()
    }

    /// Load from the nested key-value device file; validates and reports
    /// the section and key of any failure. Returns the model plus any
    /// named noise presets (opaque here; the simulator interprets them).
    pub fn load_str(
        text: &str,
    ) -> Result<(Self, BTreeMap<String, toml::Value>), DeviceError> {
        #[derive(Deserialize)]
        struct DeviceFile {
            device: DeviceModel,
            #[serde(default)]
            presets: BTreeMap<String, toml::Value>,
        }
        let parsed: DeviceFile = toml::from_str(text).map_err(|e| {
            DeviceError::Parse(format!("{e}"))
        })?;
        parsed.device.validate()?;
        Ok((parsed.device, parsed.presets))
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct DeviceFile<'a> {
            device: &'a DeviceModel,
        }
        toml::to_string_pretty(&DeviceFile { device: self }).expect("device serializes")
    }
}
