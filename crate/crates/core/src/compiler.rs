//! Circuit-to-timeline compilation: minimal π/2 decomposition with
//! virtual z-frames, cascade compaction over shared-beam stations,
//! light-shift frame corrections on untargeted ions, conditional oracle
//! blocks with lasers-off honesty, pulse-count padding, and duration
//! accounting.
//!
//! Frame bookkeeping: the physical state of ion i is Z(f_i)·|logical⟩
//! where f_i is the pending virtual z. Within a section each ion also
//! carries the physical pulse product A_i applied so far; a station that
//! finishes ion i solves W = U_i·Z(−f_i)·A_i† and emits W's pulses,
//! leaving the decomposition's trailing z as the new frame. Entangling
//! drives take their spin phases from the current frames, so frames
//! never need physical resolution.

use crate::device::{DeviceModel, Station, TimingModel};
use crate::gates::{EquatorialPulse, GateError, OracleSpec};
use crate::linalg::{identity, su2_exp, CMat, QuantumError};
use crate::program::{
    CompiledProgram, CompiledSection, ProgramError, SectionLabel, TimelineEvent,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("unsupported data-bit count {0} (compiled path handles 1 or 2)")]
    UnsupportedN(usize),
    #[error("cascade expects {0} per-ion targets, got {1}")]
    TargetCount(usize, usize),
    #[error("single-qubit decomposition failed: residual {0:.3e}")]
    DecompositionFailed(f64),
    #[error("cannot lengthen a pulse-free (diagonal) station target")]
    Unbumpable,
    #[error("ion {0} left the section with non-diagonal residual {1:.3e}")]
    UnresolvedResidual(usize, f64),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("device error: {0}")]
    Device(#[from] crate::device::DeviceError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompileOptions {
    /// Pad each section's pulse count up to the device reference counts.
    pub pad_to_reference: bool,
    /// Fold the device light-shift table into frame corrections.
    pub compensate_light_shifts: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            pad_to_reference: true,
            compensate_light_shifts: true,
        }
    }
}

/// Per-ion accumulated virtual z-rotation, physical-state convention
/// state = Z(f)·|logical⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLedger {
    pub phases: Vec<f64>,
}

impl FrameLedger {
    pub fn new(ion_count: usize) -> Self {
        Self {
            phases: vec![0.0; ion_count],
        }
    }
}

/// A station whose trailing z was left free and resolved by the
/// compiler; the choice changes pulse phases but not the section's net
/// target class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationGate {
    pub section: SectionLabel,
    pub station: Station,
    pub phi: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompileReport {
    pub warnings: Vec<String>,
    pub optimization_gates: Vec<OptimizationGate>,
    /// Enabled-pulse count per section before padding.
    pub minimal_counts: Vec<(String, usize)>,
    pub final_frames: Vec<f64>,
}

pub struct BvCompilation {
    pub program: CompiledProgram,
    pub report: CompileReport,
}

fn zmat(theta: f64) -> CMat {
    su2_exp(theta, 0.0, 0.0, 1.0)
}

/// Decompose a 2×2 unitary into 0, 1, or 2 equatorial π/2-class pulses
/// plus a trailing virtual z: U ≅ Z(t)·P (global phase free). Pulse
/// count is minimal: 0 iff U is diagonal, 1 iff |U₀₀| = 1/√2.
pub fn decompose_su2(u: &CMat) -> Result<(Vec<EquatorialPulse>, f64), CompileError> {
    let det = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)];
    let scale = det.sqrt();
    if scale.norm() < 1e-12 {
        return Err(CompileError::DecompositionFailed(1.0));
    }
    let a = u[(0, 0)] / scale;
    let b = u[(1, 0)] / scale;
    let tol = 1e-9;
    let (pulses, t) = if b.norm() < tol {
        // pure z
        (vec![], -2.0 * a.arg())
    } else if (a.norm() - 1.0 / 2f64.sqrt()).abs() < tol {
        // single pulse: U = Z(t)·R_phi(pi/2)
        let t = -2.0 * a.arg();
        let phi = b.arg() - t / 2.0 + PI / 2.0;
        (vec![EquatorialPulse::new(phi, PI / 2.0)], t)
    } else {
        // two pulses: Z(t)·R_phi2·R_phi1 with phi2 - phi1 = delta
        let delta = 2.0 * a.norm().min(1.0).asin();
        let t = PI - delta - 2.0 * a.arg();
        let sigma = 2.0 * b.arg() + PI - t;
        let phi1 = (sigma - delta) / 2.0;
        let phi2 = (sigma + delta) / 2.0;
        (
            vec![
                EquatorialPulse::new(phi1, PI / 2.0),
                EquatorialPulse::new(phi2, PI / 2.0),
            ],
            t,
        )
    };
    // verify
    let mut p = identity(2);
    for pl in &pulses {
        p = pl.unitary(1.0) * p;
    }
    let rebuilt = zmat(t) * p;
    let su = CMat::from_row_slice(2, 2, &[a, -b.conj(), b, a.conj()]);
    let err = crate::linalg::phase_invariant_distance(&rebuilt, &su);
    if err > 1e-8 {
        return Err(CompileError::DecompositionFailed(err));
    }
    Ok((pulses, t))
}

/// Same decomposition forced to use one extra pulse (for count padding):
/// a fixed leading pulse is split off, then the remainder is decomposed.
fn decompose_su2_bumped(u: &CMat) -> Result<(Vec<EquatorialPulse>, f64), CompileError> {
    let (min_pulses, _) = decompose_su2(u)?;
    let m = min_pulses.len();
    if m == 0 {
        // a diagonal target needs zero pulses and any split-off pulse
        // forces two more: no one-longer decomposition exists
        return Err(CompileError::Unbumpable);
    }
    // split off a leading pulse R_phi0(pi/2), then the remainder must
    // decompose to exactly m pulses. For m = 1 the remainder is a single
    // pulse iff |rest00| = 1/sqrt(2), which pins phi0 to
    // arg(a) + arg(b) mod pi; for m = 2 almost any phi0 works.
    let candidates: Vec<f64> = if m == 1 {
        let det = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)];
        let scale = det.sqrt();
        let a = u[(0, 0)] / scale;
        let b = u[(1, 0)] / scale;
        vec![a.arg() + b.arg(), a.arg() + b.arg() + PI]
    } else {
        (0..8).map(|k| 0.777 + 0.3 * k as f64).collect()
    };
    for phi0 in candidates {
        let first = EquatorialPulse::new(phi0, PI / 2.0);
        let rest = u * first.unitary(1.0).adjoint();
        if let Ok((mut pulses, t)) = decompose_su2(&rest) {
            if pulses.len() == m {
                let mut all = vec![first];
                all.append(&mut pulses);
                return Ok((all, t));
            }
        }
    }
    Err(CompileError::DecompositionFailed(f64::NAN))
}

/// Light-shift phase physically accrued by `ion` while the chain sits at
/// `station` with beams on for `duration_us` (z-rotation angle, rad).
pub fn spectator_shift_rad(
    device: &DeviceModel,
    station: Station,
    ion: usize,
    duration_us: f64,
) -> Result<f64, CompileError> {
    let delta = device.light_shifts.shift_hz(ion, station)?;
    Ok(2.0 * PI * delta * duration_us * 1e-6)
}

/// One station visit in a cascade plan: ions listed finish their section
/// target here (in order); other targeted ions just accumulate pulses.
struct Visit {
    station: Station,
    finish: Vec<usize>,
}

pub struct ProgramBuilder<'d> {
    device: &'d DeviceModel,
    opts: CompileOptions,
    position: Station,
    pub frames: Vec<f64>,
    sections: Vec<CompiledSection>,
    report: CompileReport,
}

struct SectionState {
    label: SectionLabel,
    events: Vec<TimelineEvent>,
    /// Physical pulse product applied to each ion within this section.
    applied: Vec<CMat>,
    /// Section-local single-qubit targets, consumed when an ion finishes.
    targets: Vec<Option<CMat>>,
    enabled: bool,
}

impl<'d> ProgramBuilder<'d> {
    pub fn new(device: &'d DeviceModel, opts: CompileOptions) -> Self {
        let n = device.chain.ion_count;
        Self {
            device,
            opts,
            position: Station::Home,
            frames: vec![0.0; n],
            sections: Vec::new(),
            report: CompileReport::default(),
        }
    }

    fn ion_count(&self) -> usize {
        self.device.chain.ion_count
    }

    fn begin(&self, label: SectionLabel, targets: Vec<CMat>, enabled: bool) -> SectionState {
        SectionState {
            label,
            events: Vec::new(),
            applied: vec![identity(2); self.ion_count()],
            targets: targets.into_iter().map(Some).collect(),
            enabled,
        }
    }

    fn move_to(&mut self, st: &mut SectionState, station: Station) {
        if self.position != station {
            st.events.push(TimelineEvent::Transport {
                from: self.position,
                to: station,
            });
            self.position = station;
        }
    }

    /// Emit one PB1-wrapped pulse at the current station and account for
    /// its physical side effects.
    fn emit_pulse(&mut self, st: &mut SectionState, phi: f64, theta: f64) -> Result<(), CompileError> {
        let station = self.position;
        st.events.push(TimelineEvent::Pb1 {
            station,
            phi,
            theta,
            enabled: st.enabled,
        });
        if !st.enabled {
            return Ok(());
        }
        let targeted = station.targeted(self.ion_count());
        let pulse = EquatorialPulse::new(phi, theta);
        for ion in 0..self.ion_count() {
            if targeted.contains(&ion) {
                st.applied[ion] = pulse.unitary(1.0) * &st.applied[ion];
            } else if self.opts.compensate_light_shifts {
                // shifts accrue only while the lasers are on
                let shift =
                    spectator_shift_rad(self.device, station, ion, self.device.timing.pb1_drive_us())?;
                st.applied[ion] = zmat(shift) * &st.applied[ion];
            }
        }
        Ok(())
    }

    /// Finish `ion`'s section target at the current station.
    fn realize(
        &mut self,
        st: &mut SectionState,
        ion: usize,
        bump: bool,
    ) -> Result<usize, CompileError> {
        let target = st.targets[ion]
            .take()
            .unwrap_or_else(|| identity(2));
        let w = target * zmat(-self.frames[ion]) * st.applied[ion].adjoint();
        let (pulses, t) = if bump {
            match decompose_su2_bumped(&w) {
                Ok(r) => r,
                Err(CompileError::Unbumpable) => {
                    self.report.warnings.push(format!(
                        "section {}: parity bump skipped at {} (diagonal target)",
                        st.label.id(),
                        self.position
                    ));
                    decompose_su2(&w)?
                }
                Err(e) => return Err(e),
            }
        } else {
            decompose_su2(&w)?
        };
        let count = pulses.len();
        for p in &pulses {
            self.emit_pulse(st, p.phi, p.theta)?;
        }
        if st.enabled {
            self.frames[ion] = -t;
            st.applied[ion] = identity(2);
            self.report.optimization_gates.push(OptimizationGate {
                section: st.label,
                station: self.position,
                phi: t,
            });
        }
        Ok(count)
    }

    fn run_visits(
        &mut self,
        st: &mut SectionState,
        visits: &[Visit],
        bump_last: bool,
    ) -> Result<(), CompileError> {
        // a parity bump must land where only one ion sees the beams, or
        // the extra pulse corrupts already-finished neighbors: pick the
        // last solo edge stop
        let bump_at = if bump_last {
            visits
                .iter()
                .enumerate()
                .filter(|(_, v)| matches!(v.station, Station::Edge(_)) && v.finish.len() == 1)
                .map(|(vi, v)| (vi, v.finish[0]))
                .last()
        } else {
            None
        };
        if bump_last && bump_at.is_none() {
            self.report.warnings.push(format!(
                "section {}: no solo edge stop to absorb a parity bump",
                st.label.id()
            ));
        }
        for (vi, v) in visits.iter().enumerate() {
            self.move_to(st, v.station);
            for &ion in &v.finish {
                let bump = bump_at == Some((vi, ion));
                self.realize(st, ion, bump)?;
            }
        }
        Ok(())
    }

    /// Entangling drive on the current station's pair. Spin phases come
    /// from the pair ions' frames plus the per-location calibration
    /// offsets; spectators get light-shift frame corrections.
    fn emit_ms(&mut self, st: &mut SectionState, theta: f64, echo: bool) -> Result<(), CompileError> {
        let station = self.position;
        let pair = match station {
            Station::Pair(i) => (i, i + 1),
            _ => return Err(CompileError::UnresolvedResidual(0, 0.0)),
        };
        let cal = self.device.ms_frame_for(station);
        let (mut phi_a, mut phi_b) = (0.0, 0.0);
        if st.enabled {
            for (slot, ion) in [pair.0, pair.1].into_iter().enumerate() {
                // fold residual shift z's, then the entry calibration shift
                let residual = diag_phase(&st.applied[ion])
                    .map_err(|e| CompileError::UnresolvedResidual(ion, e))?;
                let g = self.frames[ion] + residual - cal.phi_ab_rad;
                if slot == 0 {
                    phi_a = g;
                } else {
                    phi_b = g;
                }
                self.frames[ion] = g + cal.phi_ab_rad + cal.phi_r_rad;
                st.applied[ion] = identity(2);
            }
        }
        st.events.push(TimelineEvent::Ms {
            station,
            theta,
            phi_a,
            phi_b,
            enabled: st.enabled,
            echo,
        });
        if st.enabled && self.opts.compensate_light_shifts {
            for ion in 0..self.ion_count() {
                if ion != pair.0 && ion != pair.1 {
                    let shift =
                        spectator_shift_rad(self.device, station, ion, self.device.timing.t_ms_us)?;
                    st.applied[ion] = zmat(shift) * &st.applied[ion];
                }
            }
        }
        Ok(())
    }

    /// Apply a virtual z to the logical target stream (template frame
    /// step): the physical state is untouched, the frame absorbs it.
    fn virtual_z(&mut self, st: &SectionState, ion: usize, gamma: f64) {
        if st.enabled {
            self.frames[ion] -= gamma;
        }
    }

    /// Close a section: fold leftover diagonal residuals into frames,
    /// pad the pulse count if requested, and record the section.
    fn finish_section(
        &mut self,
        mut st: SectionState,
        reference_count: Option<usize>,
        minimal_hint: Option<usize>,
    ) -> Result<(), CompileError> {
        if st.enabled {
            for ion in 0..self.ion_count() {
                let residual = diag_phase(&st.applied[ion])
                    .map_err(|e| CompileError::UnresolvedResidual(ion, e))?;
                self.frames[ion] += residual;
                st.applied[ion] = identity(2);
            }
        }
        let emitted = CompiledSection {
            label: st.label,
            events: st.events.clone(),
        }
        .pulse_count_any();
        self.report
            .minimal_counts
            .push((st.label.id(), minimal_hint.unwrap_or(emitted)));
        if let Some(reference) = reference_count {
            if emitted > reference {
                self.report.warnings.push(format!(
                    "section {} needs {} pulses, exceeding the reference count {}",
                    st.label.id(),
                    emitted,
                    reference
                ));
            } else if self.opts.pad_to_reference && emitted < reference {
                let mut deficit = reference - emitted;
                if deficit % 2 == 1 {
                    // the parity bump upstream normally prevents this
                    self.report.warnings.push(format!(
                        "section {}: odd padding deficit, count lands one short",
                        st.label.id()
                    ));
                    deficit -= 1;
                }
                while deficit >= 2 {
                    // net-identity pair at the current station
                    self.emit_pulse(&mut st, 0.0, PI / 2.0)?;
                    self.emit_pulse(&mut st, PI, PI / 2.0)?;
                    deficit -= 2;
                }
                if st.enabled {
                    for ion in 0..self.ion_count() {
                        let residual = diag_phase(&st.applied[ion])
                            .map_err(|e| CompileError::UnresolvedResidual(ion, e))?;
                        self.frames[ion] += residual;
                        st.applied[ion] = identity(2);
                    }
                }
            }
        }
        self.sections.push(CompiledSection {
            label: st.label,
            events: st.events,
        });
        Ok(())
    }

    fn go_home(&mut self) {
        if self.position != Station::Home {
            if let Some(last) = self.sections.last_mut() {
                last.events.push(TimelineEvent::Transport {
                    from: self.position,
                    to: Station::Home,
                });
            }
            self.position = Station::Home;
        }
    }
}

/// Phase of a diagonal 2×2 unitary: D ≅ Z(θ). Errors with the
/// off-diagonal magnitude when D is not diagonal.
fn diag_phase(d: &CMat) -> Result<f64, f64> {
    let off = d[(0, 1)].norm().max(d[(1, 0)].norm());
    if off > 1e-9 {
        return Err(off);
    }
    Ok(d[(1, 1)].arg() - d[(0, 0)].arg())
}

/// Standard cascade station order for a full chain: far pair first, then
/// toward the near edge, finishing one ion per station.
fn full_cascade_visits(ion_count: usize) -> Vec<Visit> {
    match ion_count {
        2 => vec![
            Visit {
                station: Station::Pair(0),
                finish: vec![1],
            },
            Visit {
                station: Station::Edge(0),
                finish: vec![0],
            },
        ],
        _ => vec![
            Visit {
                station: Station::Pair(1),
                finish: vec![2],
            },
            Visit {
                station: Station::Pair(0),
                finish: vec![1],
            },
            Visit {
                station: Station::Edge(0),
                finish: vec![0],
            },
        ],
    }
}

/// Mirrored cascade used before the far pair's entangling gate.
fn mirror_cascade_visits() -> Vec<Visit> {
    vec![
        Visit {
            station: Station::Pair(0),
            finish: vec![0],
        },
        Visit {
            station: Station::Pair(1),
            finish: vec![1],
        },
        Visit {
            station: Station::Edge(2),
            finish: vec![2],
        },
    ]
}

/// Compile one cascade of per-ion unitaries into a section (fresh
/// frames; see `ProgramBuilder` for threaded compilation).
pub fn compile_cascade(
    targets: &[CMat],
    device: &DeviceModel,
    opts: CompileOptions,
) -> Result<(CompiledSection, FrameLedger), CompileError> {
    let mut b = ProgramBuilder::new(device, opts);
    b.add_cascade(SectionLabel::Prep, targets, None)?;
    let frames = FrameLedger {
        phases: b.frames.clone(),
    };
    Ok((b.sections.pop().unwrap(), frames))
}

/// Compile a train of full-chain cascades into one program with frames
/// threaded across sections. Used by benchmarking harnesses; the
/// trailing frame phases stay virtual, which leaves any measurement in
/// the energy basis unaffected.
pub fn compile_cascade_sequence(
    cascades: &[Vec<CMat>],
    device: &DeviceModel,
    opts: CompileOptions,
) -> Result<(CompiledProgram, CompileReport), CompileError> {
    let mut b = ProgramBuilder::new(device, opts);
    for (i, targets) in cascades.iter().enumerate() {
        b.add_cascade(SectionLabel::Cascade(i), targets, None)?;
    }
    b.go_home();
    b.report.final_frames = b.frames.clone();
    let program = CompiledProgram {
        ion_count: b.ion_count(),
        ancilla_index: b.device.chain.ancilla_index,
        secret: "-".into(),
        sections: b.sections,
        padded: false,
    };
    program.validate()?;
    Ok((program, b.report))
}

impl<'d> ProgramBuilder<'d> {
    /// Add one full-chain cascade section with the given per-ion targets.
    pub fn add_cascade(
        &mut self,
        label: SectionLabel,
        targets: &[CMat],
        reference: Option<usize>,
    ) -> Result<(), CompileError> {
        let n = self.ion_count();
        if targets.len() != n {
            return Err(CompileError::TargetCount(n, targets.len()));
        }
        let mut st = self.begin(label, targets.to_vec(), true);
        let visits = full_cascade_visits(n);
        let minimal = self.dry_run_cascade(&st, &visits)?;
        // padding parity: lengthen one solo stop when the deficit is odd
        let bump = match reference {
            Some(r) if self.opts.pad_to_reference => {
                r > minimal && (r - minimal) % 2 == 1
            }
            _ => false,
        };
        self.run_visits(&mut st, &visits, bump)?;
        self.finish_section(st, reference, Some(minimal))
    }

    /// Count the pulses a visit plan would emit without emitting them.
    fn dry_run_cascade(
        &mut self,
        st: &SectionState,
        visits: &[Visit],
    ) -> Result<usize, CompileError> {
        let saved_pos = self.position;
        let saved_frames = self.frames.clone();
        let mut trial = SectionState {
            label: st.label,
            events: Vec::new(),
            applied: st.applied.clone(),
            targets: st.targets.clone(),
            enabled: st.enabled,
        };
        let report_len = self.report.optimization_gates.len();
        let warn_len = self.report.warnings.len();
        self.run_visits(&mut trial, visits, false)?;
        let count = trial
            .events
            .iter()
            .filter(|e| matches!(e, TimelineEvent::Pb1 { .. }))
            .count();
        self.position = saved_pos;
        self.frames = saved_frames;
        self.report.optimization_gates.truncate(report_len);
        self.report.warnings.truncate(warn_len);
        Ok(count)
    }
}

/// A CNOT block plan for one data ion: the pair station, the control's
/// solo station, and the itinerary shape.
struct CnotPlan {
    pair: Station,
    control: usize,
    ancilla: usize,
    pre_visits: Vec<Visit>,
    post_visits: Vec<Visit>,
}

fn cnot_plan(ion_count: usize, data_ion: usize, ancilla: usize) -> CnotPlan {
    if ion_count == 2 {
        CnotPlan {
            pair: Station::Pair(0),
            control: 0,
            ancilla,
            pre_visits: vec![
                Visit {
                    station: Station::Pair(0),
                    finish: vec![1],
                },
                Visit {
                    station: Station::Edge(0),
                    finish: vec![0],
                },
            ],
            post_visits: vec![Visit {
                station: Station::Edge(0),
                finish: vec![0],
            }],
        }
    } else if data_ion == 0 {
        CnotPlan {
            pair: Station::Pair(0),
            control: 0,
            ancilla,
            pre_visits: full_cascade_visits(3),
            post_visits: vec![
                Visit {
                    station: Station::Edge(0),
                    finish: vec![0],
                },
                Visit {
                    station: Station::Pair(1),
                    finish: vec![1, 2],
                },
            ],
        }
    } else {
        CnotPlan {
            pair: Station::Pair(1),
            control: 2,
            ancilla,
            pre_visits: mirror_cascade_visits(),
            post_visits: vec![
                Visit {
                    station: Station::Edge(2),
                    finish: vec![2],
                },
                Visit {
                    station: Station::Pair(0),
                    finish: vec![0, 1],
                },
            ],
        }
    }
}

impl<'d> ProgramBuilder<'d> {
    /// Add one oracle CNOT block. `active` = whether this data bit of s
    /// is 1; inactive blocks keep the full itinerary and slot timing
    /// with the gate lasers off.
    pub fn add_cnot_block(
        &mut self,
        label: SectionLabel,
        data_ion: usize,
        active: bool,
        reference: Option<usize>,
    ) -> Result<(), CompileError> {
        let n = self.ion_count();
        let ancilla = self.device.chain.ancilla_index;
        let plan = cnot_plan(n, data_ion, ancilla);
        // dressing from the CNOT template: Ry(π/2) on control and
        // R_π(π/2) on ancilla before the MS, Ry(−π/2) on control after,
        // trailing virtual Rz(−π/2) on the control
        let pre_ctrl = su2_exp(PI / 2.0, 0.0, 1.0, 0.0);
        let pre_anc = su2_exp(PI / 2.0, -1.0, 0.0, 0.0);
        let post_ctrl = su2_exp(-PI / 2.0, 0.0, 1.0, 0.0);

        let saved_frames = self.frames.clone();
        let report_len = self.report.optimization_gates.len();
        let mut targets = vec![identity(2); n];
        targets[plan.control] = pre_ctrl.clone();
        targets[plan.ancilla] = pre_anc.clone();
        // compile the block as if it ran hot either way, so the slot
        // layout cannot depend on the secret; inactive blocks are marked
        // lasers-off afterwards and the frames rolled back
        let mut st = self.begin(label, targets, true);
        let minimal = self.dry_run_cnot(&plan, &pre_ctrl, &pre_anc, &post_ctrl)?;
        // padding parity across the whole block
        let bump = match reference {
            Some(r) if self.opts.pad_to_reference => {
                r > minimal && (r - minimal) % 2 == 1
            }
            _ => false,
        };
        self.run_visits(&mut st, &plan.pre_visits, false)?;
        self.move_to(&mut st, plan.pair);
        self.emit_ms(&mut st, PI / 2.0, false)?;
        st.targets[plan.control] = Some(post_ctrl.clone());
        self.run_visits(&mut st, &plan.post_visits, bump)?;
        self.virtual_z(&st, plan.control, -PI / 2.0);
        self.finish_section(st, reference, Some(minimal))?;
        if !active {
            // lasers stayed off: physically nothing happened
            self.frames = saved_frames;
            self.report.optimization_gates.truncate(report_len);
            for e in &mut self.sections.last_mut().unwrap().events {
                match e {
                    TimelineEvent::Pb1 { phi, enabled, .. } => {
                        *phi = 0.0;
                        *enabled = false;
                    }
                    TimelineEvent::Ms {
                        phi_a,
                        phi_b,
                        enabled,
                        ..
                    } => {
                        *phi_a = 0.0;
                        *phi_b = 0.0;
                        *enabled = false;
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn dry_run_cnot(
        &mut self,
        plan: &CnotPlan,
        pre_ctrl: &CMat,
        pre_anc: &CMat,
        post_ctrl: &CMat,
    ) -> Result<usize, CompileError> {
        let n = self.ion_count();
        let saved_pos = self.position;
        let saved_frames = self.frames.clone();
        let report_len = self.report.optimization_gates.len();
        let warn_len = self.report.warnings.len();
        let mut targets = vec![identity(2); n];
        targets[plan.control] = pre_ctrl.clone();
        targets[plan.ancilla] = pre_anc.clone();
        let mut st = self.begin(SectionLabel::Prep, targets, true);
        self.run_visits(&mut st, &plan.pre_visits, false)?;
        self.move_to(&mut st, plan.pair);
        self.emit_ms(&mut st, PI / 2.0, false)?;
        st.targets[plan.control] = Some(post_ctrl.clone());
        self.run_visits(&mut st, &plan.post_visits, false)?;
        let count = st
            .events
            .iter()
            .filter(|e| matches!(e, TimelineEvent::Pb1 { .. }))
            .count();
        self.position = saved_pos;
        self.frames = saved_frames;
        self.report.optimization_gates.truncate(report_len);
        self.report.warnings.truncate(warn_len);
        Ok(count)
    }

    pub fn finish(mut self, spec: &OracleSpec) -> Result<BvCompilation, CompileError> {
        self.go_home();
        self.report.final_frames = self.frames.clone();
        let program = CompiledProgram {
            ion_count: self.ion_count(),
            ancilla_index: self.device.chain.ancilla_index,
            secret: spec.s_string(),
            sections: self.sections,
            padded: self.opts.pad_to_reference,
        };
        program.validate()?;
        Ok(BvCompilation {
            program,
            report: self.report,
        })
    }
}

/// Compile the hidden-string algorithm: prep to |+⟩^n ⊗ |−⟩, one CNOT
/// block per data bit (lasers off where s_i = 0), analysis rotations,
/// return home.
pub fn compile_bv(
    spec: &OracleSpec,
    device: &DeviceModel,
    opts: CompileOptions,
) -> Result<BvCompilation, CompileError> {
    spec.validate()?;
    if !(1..=2).contains(&spec.n) {
        return Err(CompileError::UnsupportedN(spec.n));
    }
    let n_ions = spec.n + 1;
    if device.chain.ion_count != n_ions {
        return Err(CompileError::TargetCount(device.chain.ion_count, n_ions));
    }
    let ancilla = device.chain.ancilla_index;
    let refc = &device.reference_counts;
    let mut b = ProgramBuilder::new(device, opts);

    // prep: |+⟩ on data ions, |−⟩ on the ancilla
    let plus = su2_exp(PI / 2.0, 0.0, 1.0, 0.0);
    let minus = su2_exp(PI / 2.0, 0.0, -1.0, 0.0);
    let mut prep = vec![plus.clone(); n_ions];
    prep[ancilla] = minus;
    b.add_cascade(SectionLabel::Prep, &prep, Some(refc.prep))?;

    // oracle blocks, one per data bit, ion order
    let data_ions = device.chain.data_ions();
    for (bit, &ion) in data_ions.iter().enumerate() {
        b.add_cnot_block(
            SectionLabel::Cnot(bit),
            ion,
            spec.s[bit] == 1,
            Some(refc.per_cnot),
        )?;
    }

    // analysis: Hadamard-equivalent basis rotation on every ion
    let h = crate::gates::hadamard().matrix;
    let analysis = vec![h; n_ions];
    b.add_cascade(SectionLabel::Analysis, &analysis, Some(refc.analysis))?;

    b.finish(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub moves: Vec<(Station, Station)>,
}

impl TransportPlan {
    pub fn of(program: &CompiledProgram) -> Self {
        let moves = program
            .events()
            .filter_map(|e| match e {
                TimelineEvent::Transport { from, to } => Some((*from, *to)),
                _ => None,
            })
            .collect();
        Self { moves }
    }

    pub fn serialize(&self) -> String {
        self.moves
            .iter()
            .map(|(f, t)| format!("{f}->{t}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DurationBreakdown {
    pub per_section_us: Vec<(String, f64)>,
    pub pulse_us: f64,
    pub transport_us: f64,
    pub overhead_us: f64,
    pub total_us: f64,
}

/// Wall-clock accounting: event durations plus a flat per-hardware-event
/// programming overhead.
pub fn duration(program: &CompiledProgram, timing: &TimingModel) -> DurationBreakdown {
    let mut per_section = Vec::new();
    let (mut pulse, mut transport, mut overhead) = (0.0, 0.0, 0.0);
    for s in &program.sections {
        let mut section_total = 0.0;
        for e in &s.events {
            let d = e.duration_us(timing);
            match e {
                TimelineEvent::Transport { .. } => transport += d,
                TimelineEvent::Pb1 { .. } | TimelineEvent::Ms { .. } => pulse += d,
                TimelineEvent::FrameZ { .. } => {}
            }
            section_total += d;
            if e.is_hardware() {
                section_total += timing.t_overhead_per_event_us;
                overhead += timing.t_overhead_per_event_us;
            }
        }
        per_section.push((s.label.id(), section_total));
    }
    DurationBreakdown {
        per_section_us: per_section,
        pulse_us: pulse,
        transport_us: transport,
        overhead_us: overhead,
        total_us: pulse + transport + overhead,
    }
}

impl CompiledSection {
    /// Pulse slots regardless of enable flags (used for padding math).
    pub fn pulse_count_any(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TimelineEvent::Pb1 { .. }))
            .count()
    }
}

/// Noise-free net unitary of a compiled program, with or without the
/// deterministic light-shift and calibration phases the hardware would
/// impart. Used by compiler soundness tests and ideal-path analysis.
pub fn ideal_program_unitary(
    program: &CompiledProgram,
    device: &DeviceModel,
    include_shifts: bool,
) -> Result<crate::linalg::UnitaryOp, CompileError> {
    use crate::linalg::UnitaryOp;
    let n = program.ion_count;
    let mut u = UnitaryOp::new_unchecked(identity(1 << n), "ideal");
    let t_pb1 = device.timing.pb1_drive_us();
    let t_ms = device.timing.t_ms_us;
    for e in program.events() {
        match e {
            TimelineEvent::Transport { .. } => {}
            TimelineEvent::FrameZ { ion, phi } => {
                let op = UnitaryOp::new_unchecked(zmat(*phi), "fz").embed(&[*ion], n)?;
                u = u.then(&op)?;
            }
            TimelineEvent::Pb1 {
                station,
                phi,
                theta,
                enabled,
            } => {
                if !enabled {
                    continue;
                }
                let targeted = station.targeted(n);
                for ion in 0..n {
                    let m = if targeted.contains(&ion) {
                        su2_exp(*theta, phi.cos(), phi.sin(), 0.0)
                    } else if include_shifts {
                        zmat(spectator_shift_rad(device, *station, ion, t_pb1)?)
                    } else {
                        continue;
                    };
                    let op = UnitaryOp::new_unchecked(m, "p").embed(&[ion], n)?;
                    u = u.then(&op)?;
                }
            }
            TimelineEvent::Ms {
                station,
                theta,
                phi_a,
                phi_b,
                enabled,
                ..
            } => {
                if !enabled {
                    continue;
                }
                let pair = match station {
                    Station::Pair(i) => (*i, *i + 1),
                    _ => unreachable!("validated program"),
                };
                let cal = device.ms_frame_for(*station);
                if include_shifts {
                    for ion in [pair.0, pair.1] {
                        let op = UnitaryOp::new_unchecked(zmat(-cal.phi_ab_rad), "msin")
                            .embed(&[ion], n)?;
                        u = u.then(&op)?;
                    }
                }
                let m = crate::gates::ms_unitary_phased(*theta, *phi_a, *phi_b);
                let op = UnitaryOp::new_unchecked(m, "ms").embed(&[pair.0, pair.1], n)?;
                u = u.then(&op)?;
                if include_shifts {
                    for ion in [pair.0, pair.1] {
                        let op =
                            UnitaryOp::new_unchecked(zmat(cal.phi_ab_rad + cal.phi_r_rad), "msout")
                                .embed(&[ion], n)?;
                        u = u.then(&op)?;
                    }
                    for ion in 0..n {
                        if ion != pair.0 && ion != pair.1 {
                            let op = UnitaryOp::new_unchecked(
                                zmat(spectator_shift_rad(device, *station, ion, t_ms)?),
                                "msz",
                            )
                            .embed(&[ion], n)?;
                            u = u.then(&op)?;
                        }
                    }
                }
            }
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{hadamard, oracle_unitary, OracleSpec};
    use crate::linalg::{max_abs_diff, phase_invariant_distance, UnitaryOp};
    use proptest::prelude::*;

    fn rebuild(pulses: &[EquatorialPulse], t: f64) -> CMat {
        let mut p = identity(2);
        for pl in pulses {
            p = pl.unitary(1.0) * p;
        }
        zmat(t) * p
    }

    fn random_su2(theta: f64, nx: f64, ny: f64, nz: f64) -> CMat {
        let norm = (nx * nx + ny * ny + nz * nz).sqrt().max(1e-12);
        su2_exp(theta, nx / norm, ny / norm, nz / norm)
    }

    #[test]
    fn decompose_pulse_counts_by_class() {
        let (p, _) = decompose_su2(&identity(2)).unwrap();
        assert!(p.is_empty());
        let (p, t) = decompose_su2(&zmat(0.7)).unwrap();
        assert!(p.is_empty());
        assert!((t - 0.7).abs() < 1e-12);
        let h = hadamard().matrix;
        let (p, t) = decompose_su2(&h).unwrap();
        assert_eq!(p.len(), 1);
        assert!(phase_invariant_distance(&rebuild(&p, t), &h) < 1e-9);
        let g = random_su2(1.1, 0.3, 0.5, 0.8);
        let (p, t) = decompose_su2(&g).unwrap();
        assert_eq!(p.len(), 2);
        assert!(phase_invariant_distance(&rebuild(&p, t), &g) < 1e-9);
    }

    proptest! {
        #[test]
        fn decompose_is_exact_and_minimal(
            theta in 0.0..std::f64::consts::TAU,
            nx in -1.0f64..1.0,
            ny in -1.0f64..1.0,
            nz in -1.0f64..1.0,
        ) {
            prop_assume!(nx * nx + ny * ny + nz * nz > 1e-4);
            let u = random_su2(theta, nx, ny, nz);
            let (p, t) = decompose_su2(&u).unwrap();
            prop_assert!(p.len() <= 2);
            prop_assert!(phase_invariant_distance(&rebuild(&p, t), &u) < 1e-8);
            // minimality: the pulse count is forced by |u00| in su2 form
            let a = u[(0, 0)].norm();
            let b = u[(1, 0)].norm();
            let margin = 1e-6;
            if b > margin && (a - 1.0 / 2f64.sqrt()).abs() > margin {
                prop_assert_eq!(p.len(), 2);
            }
            if b > margin && (a - 1.0 / 2f64.sqrt()).abs() < 1e-10 {
                prop_assert_eq!(p.len(), 1);
            }
        }
    }

    #[test]
    fn bumped_decomposition_adds_exactly_one_pulse() {
        let h = hadamard().matrix;
        let (p, t) = decompose_su2_bumped(&h).unwrap();
        assert_eq!(p.len(), 2);
        assert!(phase_invariant_distance(&rebuild(&p, t), &h) < 1e-8);
        let g = random_su2(2.0, 0.2, -0.7, 0.4);
        let (p, t) = decompose_su2_bumped(&g).unwrap();
        assert_eq!(p.len(), 3);
        assert!(phase_invariant_distance(&rebuild(&p, t), &g) < 1e-8);
        assert!(matches!(
            decompose_su2_bumped(&zmat(0.4)),
            Err(CompileError::Unbumpable)
        ));
    }

    #[test]
    fn padding_pair_is_exact_identity() {
        let a = EquatorialPulse::new(0.0, PI / 2.0).unitary(1.0);
        let b = EquatorialPulse::new(PI, PI / 2.0).unitary(1.0);
        assert!(max_abs_diff(&(b * a), &identity(2)) < 1e-12);
    }

    fn compile(n: usize, s: usize, opts: CompileOptions) -> (BvCompilation, DeviceModel) {
        let device = DeviceModel::default_chain(n + 1).unwrap();
        let spec = OracleSpec::new(n, s).unwrap();
        let c = compile_bv(&spec, &device, opts).unwrap();
        (c, device)
    }

    #[test]
    fn padded_counts_match_reference_two_ions() {
        let (c, _) = compile(1, 1, CompileOptions::default());
        let by_label: Vec<usize> = c
            .program
            .sections
            .iter()
            .map(|s| s.pulse_count_any())
            .collect();
        assert_eq!(by_label, vec![3, 9, 3]);
        let counts = c.program.counts();
        assert_eq!(counts.transports, 9);
        assert_eq!(counts.ms, 1);
        assert!(c.report.warnings.is_empty(), "{:?}", c.report.warnings);
    }

    #[test]
    fn padded_counts_match_reference_three_ions() {
        for s in 0..4 {
            let (c, _) = compile(2, s, CompileOptions::default());
            let by_label: Vec<usize> = c
                .program
                .sections
                .iter()
                .map(|sec| sec.pulse_count_any())
                .collect();
            assert_eq!(by_label, vec![6, 15, 15, 6], "s={s}");
            let counts = c.program.counts();
            assert_eq!(counts.transports, 19, "s={s}");
            // enabled entangling gates track the secret's weight; the
            // slots themselves are always there
            assert_eq!(counts.ms, s.count_ones() as usize, "s={s}");
            let ms_slots = c
                .program
                .events()
                .filter(|e| matches!(e, TimelineEvent::Ms { .. }))
                .count();
            assert_eq!(ms_slots, 2, "s={s}");
            assert!(c.report.warnings.is_empty(), "s={s}: {:?}", c.report.warnings);
        }
    }

    #[test]
    fn schedule_is_independent_of_the_secret() {
        for n in [1usize, 2] {
            let mut prints = Vec::new();
            let mut totals = Vec::new();
            for s in 0..(1usize << n) {
                let (c, d) = compile(n, s, CompileOptions::default());
                prints.push(c.program.transport_fingerprint(&d.timing));
                totals.push(duration(&c.program, &d.timing).total_us);
            }
            for p in &prints[1..] {
                assert_eq!(p, &prints[0], "n={n}");
            }
            for t in &totals[1..] {
                assert!((t - totals[0]).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn total_durations_match_the_reference_schedule() {
        let (c, d) = compile(1, 1, CompileOptions::default());
        let total = duration(&c.program, &d.timing).total_us;
        assert!((total - 3900.0).abs() < 1e-6, "got {total}");
        let (c, d) = compile(2, 3, CompileOptions::default());
        let total = duration(&c.program, &d.timing).total_us;
        assert!((total - 9805.2).abs() < 1e-6, "got {total}");
    }

    /// Expected logical action: plus/minus prep, oracle, basis rotation.
    fn logical_bv(spec: &OracleSpec, device: &DeviceModel) -> UnitaryOp {
        let n = device.chain.ion_count;
        let anc = device.chain.ancilla_index;
        let mut u = UnitaryOp::new_unchecked(identity(1 << n), "logical");
        for ion in 0..n {
            let m = if ion == anc {
                su2_exp(PI / 2.0, 0.0, -1.0, 0.0)
            } else {
                su2_exp(PI / 2.0, 0.0, 1.0, 0.0)
            };
            let op = UnitaryOp::new_unchecked(m, "prep").embed(&[ion], n).unwrap();
            u = u.then(&op).unwrap();
        }
        u = u.then(&oracle_unitary(spec, anc).unwrap()).unwrap();
        for ion in 0..n {
            let op = hadamard().embed(&[ion], n).unwrap();
            u = u.then(&op).unwrap();
        }
        u
    }

    fn frame_layer(frames: &[f64]) -> UnitaryOp {
        let n = frames.len();
        let mut u = UnitaryOp::new_unchecked(identity(1 << n), "frames");
        for (ion, &f) in frames.iter().enumerate() {
            let op = UnitaryOp::new_unchecked(zmat(f), "z").embed(&[ion], n).unwrap();
            u = u.then(&op).unwrap();
        }
        u
    }

    fn assert_sound(n: usize, s: usize, opts: CompileOptions) {
        let device = DeviceModel::default_chain(n + 1).unwrap();
        let spec = OracleSpec::new(n, s).unwrap();
        let c = compile_bv(&spec, &device, opts).unwrap();
        let u = ideal_program_unitary(&c.program, &device, true).unwrap();
        let expected = logical_bv(&spec, &device)
            .then(&frame_layer(&c.report.final_frames))
            .unwrap();
        let d = phase_invariant_distance(&u.matrix, &expected.matrix);
        assert!(d < 1e-8, "n={n} s={s} distance {d:.3e}");
    }

    #[test]
    fn compiled_program_reproduces_the_algorithm() {
        for s in 0..2 {
            assert_sound(1, s, CompileOptions::default());
        }
        for s in 0..4 {
            assert_sound(2, s, CompileOptions::default());
        }
    }

    #[test]
    fn compiled_program_is_sound_without_padding() {
        let opts = CompileOptions {
            pad_to_reference: false,
            compensate_light_shifts: true,
        };
        for s in 0..4 {
            assert_sound(2, s, opts);
        }
        let (c, _) = {
            let device = DeviceModel::default_chain(3).unwrap();
            let spec = OracleSpec::new(2, 3).unwrap();
            (compile_bv(&spec, &device, opts).unwrap(), device)
        };
        let counts = c.program.counts();
        assert!(counts.pb1 < 42, "unpadded count {}", counts.pb1);
        assert_eq!(counts.transports, 19);
    }

    #[test]
    fn skipping_shift_compensation_leaves_phase_errors() {
        let device = DeviceModel::default_chain(3).unwrap();
        let spec = OracleSpec::new(2, 3).unwrap();
        let opts = CompileOptions {
            pad_to_reference: true,
            compensate_light_shifts: false,
        };
        let c = compile_bv(&spec, &device, opts).unwrap();
        let u = ideal_program_unitary(&c.program, &device, true).unwrap();
        let expected = logical_bv(&spec, &device)
            .then(&frame_layer(&c.report.final_frames))
            .unwrap();
        let d = phase_invariant_distance(&u.matrix, &expected.matrix);
        assert!(d > 1e-2, "uncompensated shifts should be visible, d={d:.3e}");
    }

    #[test]
    fn zero_shift_device_needs_no_compensation() {
        let mut device = DeviceModel::default_chain(3).unwrap();
        for v in device.light_shifts.shifts_hz.values_mut() {
            *v = 0.0;
        }
        for cal in device.ms_frame.values_mut() {
            cal.phi_ab_rad = 0.0;
            cal.phi_r_rad = 0.0;
        }
        let spec = OracleSpec::new(2, 2).unwrap();
        let opts = CompileOptions {
            pad_to_reference: true,
            compensate_light_shifts: false,
        };
        let c = compile_bv(&spec, &device, opts).unwrap();
        for include_shifts in [false, true] {
            let u = ideal_program_unitary(&c.program, &device, include_shifts).unwrap();
            let expected = logical_bv(&spec, &device)
                .then(&frame_layer(&c.report.final_frames))
                .unwrap();
            let d = phase_invariant_distance(&u.matrix, &expected.matrix);
            assert!(d < 1e-8, "include_shifts={include_shifts} distance {d:.3e}");
        }
    }

    #[test]
    fn disabled_blocks_leave_the_state_alone() {
        // all-zero secret: every oracle block runs lasers-off, and the
        // measured string must come back all zeros
        let (c, device) = compile(2, 0, CompileOptions::default());
        let u = ideal_program_unitary(&c.program, &device, true).unwrap();
        let psi = u.matrix.column(0).into_owned();
        // expected bits ion-ordered: data 0, ancilla 1, data 0 -> index 010
        let idx = 0b010;
        assert!((psi[idx].norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn program_text_round_trip_preserves_the_unitary() {
        let (c, device) = compile(2, 3, CompileOptions::default());
        let text = c.program.to_text();
        let back = CompiledProgram::from_text(&text).unwrap();
        let u1 = ideal_program_unitary(&c.program, &device, true).unwrap();
        let u2 = ideal_program_unitary(&back, &device, true).unwrap();
        assert!(max_abs_diff(&u1.matrix, &u2.matrix) < 1e-6);
        assert_eq!(c.program.counts(), back.counts());
    }

    #[test]
    fn minimal_counts_stay_below_reference() {
        let (c, device) = compile(2, 3, CompileOptions::default());
        let refc = &device.reference_counts;
        for (label, minimal) in &c.report.minimal_counts {
            let limit = if label == "prep" {
                refc.prep
            } else if label == "analysis" {
                refc.analysis
            } else {
                refc.per_cnot
            };
            assert!(minimal <= &limit, "{label}: {minimal} > {limit}");
        }
    }
}
