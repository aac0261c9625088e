//! Timeline intermediate representation shared by the compiler and the
//! simulator, with a line-oriented text serialization stable enough for
//! golden-file and honesty tests.
//!
//! An event is an atomic hardware action. Pulse and entangling events
//! carry an `enabled` flag: a disabled event keeps its slot and duration
//! in the schedule (the chain still parks and waits) but the gate lasers
//! stay off. Frame events are virtual z-rotations with zero duration.

use crate::device::{Station, TimingModel};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error("program has no sections")]
    Empty,
    #[error("invalid program: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectionLabel {
    Prep,
    Cnot(usize),
    Analysis,
    /// Stand-alone single-qubit cascade, used by benchmarking programs.
    Cascade(usize),
}

impl SectionLabel {
    pub fn id(&self) -> String {
        match self {
            SectionLabel::Prep => "prep".into(),
            SectionLabel::Cnot(i) => format!("cnot{i}"),
            SectionLabel::Analysis => "analysis".into(),
            SectionLabel::Cascade(i) => format!("cascade{i}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prep" => Some(SectionLabel::Prep),
            "analysis" => Some(SectionLabel::Analysis),
            _ => s
                .strip_prefix("cnot")
                .and_then(|i| i.parse().ok().map(SectionLabel::Cnot))
                .or_else(|| {
                    s.strip_prefix("cascade")
                        .and_then(|i| i.parse().ok().map(SectionLabel::Cascade))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimelineEvent {
    /// Chain move between stations; always takes t_transport.
    Transport { from: Station, to: Station },
    /// PB1-wrapped π/2-class rotation driven at the current station with
    /// commanded phase `phi` and target angle `theta`.
    Pb1 {
        station: Station,
        phi: f64,
        theta: f64,
        enabled: bool,
    },
    /// Entangling drive on the station's ion pair; `phi_a`/`phi_b` are
    /// the commanded spin phases for the lower and upper ion (frame
    /// tracking folds virtual z's into these).
    Ms {
        station: Station,
        theta: f64,
        phi_a: f64,
        phi_b: f64,
        enabled: bool,
        echo: bool,
    },
    /// Virtual z-rotation on one ion; zero duration.
    FrameZ { ion: usize, phi: f64 },
}

impl TimelineEvent {
    pub fn duration_us(&self, timing: &TimingModel) -> f64 {
        match self {
            TimelineEvent::Transport { .. } => timing.t_transport_us,
            TimelineEvent::Pb1 { .. } => timing.t_pb1_us,
            TimelineEvent::Ms { .. } => timing.t_ms_us,
            TimelineEvent::FrameZ { .. } => 0.0,
        }
    }

    /// Hardware events carry per-event programming overhead; virtual
    /// frame updates do not.
    pub fn is_hardware(&self) -> bool {
        !matches!(self, TimelineEvent::FrameZ { .. })
    }

    fn to_line(&self) -> String {
        match self {
            TimelineEvent::Transport { from, to } => format!("move {from} {to}"),
            TimelineEvent::Pb1 {
                station,
                phi,
                theta,
                enabled,
            } => format!(
                "pb1 {station} {phi:.9} {theta:.9} {}",
                if *enabled { "on" } else { "off" }
            ),
            TimelineEvent::Ms {
                station,
                theta,
                phi_a,
                phi_b,
                enabled,
                echo,
            } => format!(
                "ms {station} {theta:.9} {phi_a:.9} {phi_b:.9} {} {}",
                if *enabled { "on" } else { "off" },
                if *echo { "echo" } else { "plain" }
            ),
            TimelineEvent::FrameZ { ion, phi } => format!("frame {ion} {phi:.9}"),
        }
    }

    fn parse_line(line: &str) -> Result<Self, String> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let station = |s: &str| Station::parse(s).ok_or_else(|| format!("bad station '{s}'"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number '{s}'"));
        match parts.as_slice() {
            ["move", a, b] => Ok(TimelineEvent::Transport {
                from: station(a)?,
                to: station(b)?,
            }),
            ["pb1", st, phi, theta, en] => Ok(TimelineEvent::Pb1 {
                station: station(st)?,
                phi: num(phi)?,
                theta: num(theta)?,
                enabled: *en == "on",
            }),
            ["ms", st, theta, phi_a, phi_b, en, echo] => Ok(TimelineEvent::Ms {
                station: station(st)?,
                theta: num(theta)?,
                phi_a: num(phi_a)?,
                phi_b: num(phi_b)?,
                enabled: *en == "on",
                echo: *echo == "echo",
            }),
            ["frame", ion, phi] => Ok(TimelineEvent::FrameZ {
                ion: ion.parse().map_err(|_| format!("bad ion '{ion}'"))?,
                phi: num(phi)?,
            }),
            _ => Err(format!("unrecognized event '{line}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompiledSection {
    pub label: SectionLabel,
    pub events: Vec<TimelineEvent>,
}

impl CompiledSection {
    pub fn pulse_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TimelineEvent::Pb1 { enabled: true, .. }))
            .count()
    }

    pub fn ms_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TimelineEvent::Ms { enabled: true, .. }))
            .count()
    }

    pub fn transport_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TimelineEvent::Transport { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramCounts {
    pub pb1: usize,
    pub ms: usize,
    pub transports: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompiledProgram {
    pub ion_count: usize,
    pub ancilla_index: usize,
    /// Secret string the oracle blocks encode, data-bit order.
    pub secret: String,
    pub sections: Vec<CompiledSection>,
    /// Whether pulse-count padding to the reference totals was applied.
    pub padded: bool,
}

impl CompiledProgram {
    pub fn counts(&self) -> ProgramCounts {
        ProgramCounts {
            pb1: self.sections.iter().map(|s| s.pulse_count()).sum(),
            ms: self.sections.iter().map(|s| s.ms_count()).sum(),
            transports: self.sections.iter().map(|s| s.transport_count()).sum(),
        }
    }

    pub fn events(&self) -> impl Iterator<Item = &TimelineEvent> {
        self.sections.iter().flat_map(|s| s.events.iter())
    }

    pub fn section(&self, label: SectionLabel) -> Option<&CompiledSection> {
        self.sections.iter().find(|s| s.label == label)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.sections.is_empty() {
            return Err(ProgramError::Empty);
        }
        for s in &self.sections {
            for e in &s.events {
                let st = match e {
                    TimelineEvent::Transport { to, .. } => Some(*to),
                    TimelineEvent::Pb1 { station, .. } => Some(*station),
                    TimelineEvent::Ms { station, .. } => Some(*station),
                    TimelineEvent::FrameZ { ion, .. } => {
                        if *ion >= self.ion_count {
                            return Err(ProgramError::Invalid(format!(
                                "frame event on ion {ion} of {}",
                                self.ion_count
                            )));
                        }
                        None
                    }
                };
                if let Some(st) = st {
                    let ok = match st {
                        Station::Home => true,
                        Station::Edge(i) => i < self.ion_count,
                        Station::Pair(i) => i + 1 < self.ion_count,
                    };
                    if !ok {
                        return Err(ProgramError::Invalid(format!(
                            "station {st} invalid for {} ions",
                            self.ion_count
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full text form, one event per line, deterministic.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "program v1").unwrap();
        writeln!(
            out,
            "ions {} ancilla {} secret {} padded {}",
            self.ion_count, self.ancilla_index, self.secret, self.padded
        )
        .unwrap();
        for s in &self.sections {
            writeln!(out, "section {}", s.label.id()).unwrap();
            for e in &s.events {
                writeln!(out, "{}", e.to_line()).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ProgramError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(ProgramError::Empty)?;
        if header.trim() != "program v1" {
            return Err(ProgramError::Line(1, format!("bad header '{header}'")));
        }
        let (_, meta) = lines.next().ok_or(ProgramError::Empty)?;
        let mp: Vec<&str> = meta.split_whitespace().collect();
        let (ion_count, ancilla_index, secret, padded) = match mp.as_slice() {
            ["ions", ic, "ancilla", ai, "secret", s, "padded", p] => (
                ic.parse()
                    .map_err(|_| ProgramError::Line(2, "bad ion count".into()))?,
                ai.parse()
                    .map_err(|_| ProgramError::Line(2, "bad ancilla".into()))?,
                s.to_string(),
                *p == "true",
            ),
            _ => return Err(ProgramError::Line(2, format!("bad metadata '{meta}'"))),
        };
        let mut sections: Vec<CompiledSection> = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("section ") {
                let label = SectionLabel::parse(name.trim())
                    .ok_or_else(|| ProgramError::Line(i + 1, format!("bad section '{name}'")))?;
                sections.push(CompiledSection {
                    label,
                    events: vec![],
                });
            } else {
                let event = TimelineEvent::parse_line(line)
                    .map_err(|e| ProgramError::Line(i + 1, e))?;
                sections
                    .last_mut()
                    .ok_or_else(|| ProgramError::Line(i + 1, "event before any section".into()))?
                    .events
                    .push(event);
            }
        }
        let program = CompiledProgram {
            ion_count,
            ancilla_index,
            secret,
            sections,
            padded,
        };
        program.validate()?;
        Ok(program)
    }

    /// Transport itinerary and slot timing only: the part of the schedule
    /// that must not depend on the secret. Disabled and enabled gate
    /// events serialize identically here (station and duration, no
    /// phases, no enable flags).
    pub fn transport_fingerprint(&self, timing: &TimingModel) -> String {
        let mut out = String::new();
        for s in &self.sections {
            writeln!(out, "section {}", s.label.id()).unwrap();
            for e in &s.events {
                match e {
                    TimelineEvent::Transport { from, to } => {
                        writeln!(out, "move {from} {to} {:.3}", e.duration_us(timing)).unwrap()
                    }
                    TimelineEvent::Pb1 { station, .. } => {
                        writeln!(out, "slot pb1 {station} {:.3}", e.duration_us(timing)).unwrap()
                    }
                    TimelineEvent::Ms { station, .. } => {
                        writeln!(out, "slot ms {station} {:.3}", e.duration_us(timing)).unwrap()
                    }
                    TimelineEvent::FrameZ { .. } => {}
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CompiledProgram {
        CompiledProgram {
            ion_count: 2,
            ancilla_index: 1,
            secret: "1".into(),
            padded: false,
            sections: vec![
                CompiledSection {
                    label: SectionLabel::Prep,
                    events: vec![
                        TimelineEvent::Transport {
                            from: Station::Home,
                            to: Station::Pair(0),
                        },
                        TimelineEvent::Pb1 {
                            station: Station::Pair(0),
                            phi: 0.25,
                            theta: std::f64::consts::FRAC_PI_2,
                            enabled: true,
                        },
                    ],
                },
                CompiledSection {
                    label: SectionLabel::Cnot(0),
                    events: vec![
                        TimelineEvent::Ms {
                            station: Station::Pair(0),
                            theta: std::f64::consts::FRAC_PI_2,
                            phi_a: 0.0,
                            phi_b: 0.0,
                            enabled: false,
                            echo: false,
                        },
                        TimelineEvent::FrameZ { ion: 1, phi: -0.5 },
                    ],
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let p = sample();
        let text = p.to_text();
        let q = CompiledProgram::from_text(&text).unwrap();
        assert_eq!(q.to_text(), text);
        assert_eq!(q.counts(), p.counts());
        assert_eq!(q.sections.len(), 2);
    }

    #[test]
    fn counts_respect_enable_flags() {
        let p = sample();
        let c = p.counts();
        assert_eq!(c.pb1, 1);
        assert_eq!(c.ms, 0); // disabled MS not counted
        assert_eq!(c.transports, 1);
    }

    #[test]
    fn fingerprint_hides_phases_and_flags() {
        let mut a = sample();
        let timing = TimingModel::default();
        let fp_a = a.transport_fingerprint(&timing);
        // change a phase and flip the MS enable flag: fingerprint unchanged
        if let TimelineEvent::Pb1 { phi, .. } = &mut a.sections[0].events[1] {
            *phi = 1.234;
        }
        if let TimelineEvent::Ms { enabled, .. } = &mut a.sections[1].events[0] {
            *enabled = true;
        }
        assert_eq!(a.transport_fingerprint(&timing), fp_a);
        // but the full text does change
        assert_ne!(a.to_text(), sample().to_text());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "program v1\nions 2 ancilla 1 secret 1 padded false\nsection prep\nwarp 9";
        match CompiledProgram::from_text(bad) {
            Err(ProgramError::Line(4, _)) => {}
            other => panic!("expected line-4 error, got {other:?}"),
        }
        assert!(CompiledProgram::from_text("nope").is_err());
    }

    #[test]
    fn validate_rejects_out_of_range_station() {
        let mut p = sample();
        p.sections[0].events.push(TimelineEvent::Pb1 {
            station: Station::Pair(5),
            phi: 0.0,
            theta: 1.0,
            enabled: true,
        });
        assert!(p.validate().is_err());
    }
}
