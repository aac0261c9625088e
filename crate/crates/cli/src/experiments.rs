//! Experiment drivers: each takes the resolved config, writes its tables
//! into the output directory, and returns the scalar summary for the
//! manifest. Sweeps run in parallel when requested but always merge in
//! input order, so output bytes do not depend on the thread count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use ionbv_core::analysis::{
    bell_fidelity, classical_baseline, mutual_information, parity_scan, run_bv, run_rb, BvRun,
    RbConfig,
};
use ionbv_core::device::{DeviceModel, ModeLabel};
use ionbv_core::gates::{ms_unitary_phased, pb1_expand};
use ionbv_core::linalg::{index_of_bits, StateVector, UnitaryOp};
use ionbv_core::sim::{
    closed_loop_drive, evolve_ms_motional, ms_spectator_added_error, thermal_carrier_infidelity,
    MotionalSimConfig, PhaseNoise,
};
use ionbv_core::sim::bell_state_fidelity;

use crate::config::{Experiment, Resolved};
use crate::output::{fmt, write_csv};
use crate::CliError;

type Summary = BTreeMap<String, String>;

pub fn run(resolved: &Resolved, device: &DeviceModel, out: &Path) -> Result<Summary, CliError> {
    match &resolved.experiment {
        Experiment::Bv {
            n,
            secrets,
            seed_count,
        } => run_bv_experiment(resolved, device, out, *n, secrets.as_deref(), *seed_count),
        Experiment::Rb {
            sequence_count,
            cliffords_per_ion,
        } => run_rb_experiment(resolved, device, out, *sequence_count, *cliffords_per_ion),
        Experiment::PhaseSweep {
            freqs_khz,
            depth_rad,
            sequence_count,
            cliffords_per_ion,
        } => run_phase_sweep(
            resolved,
            device,
            out,
            freqs_khz,
            *depth_rad,
            *sequence_count,
            *cliffords_per_ion,
        ),
        Experiment::MsMotional {
            fock_dim,
            loops,
            tau_us,
            heating,
            spectator,
        } => run_ms_motional(resolved, device, out, *fock_dim, *loops, *tau_us, *heating, *spectator),
        Experiment::ThermalScan {
            nbars, threshold, ..
        } => run_thermal_scan(resolved, device, out, nbars, *threshold),
        Experiment::Parity { points } => run_parity(resolved, out, *points),
    }
}

fn sim_err(e: impl std::fmt::Display) -> CliError {
    CliError::Sim(e.to_string())
}

fn run_bv_experiment(
    resolved: &Resolved,
    device: &DeviceModel,
    out: &Path,
    n: usize,
    secrets: Option<&[usize]>,
    seed_count: u64,
) -> Result<Summary, CliError> {
    let all: Vec<usize> = (0..1usize << n).collect();
    let secrets = secrets.unwrap_or(&all);
    for s in secrets {
        if *s >= 1 << n {
            return Err(CliError::Config(format!("secret {s} needs more than {n} bits")));
        }
    }
    let seed_count = seed_count.max(1);
    let tasks: Vec<(usize, u64)> = secrets
        .iter()
        .flat_map(|s| (0..seed_count).map(move |k| (*s, resolved.seed + k)))
        .collect();
    let runs: Vec<Result<BvRun, CliError>> = tasks
        .par_iter()
        .map(|(s, seed)| {
            run_bv(n, *s, device, &resolved.noise, resolved.shots, *seed).map_err(sim_err)
        })
        .collect();
    let runs: Vec<BvRun> = runs.into_iter().collect::<Result<_, _>>()?;

    let hash = resolved.config_hash();
    let mut result_rows = Vec::new();
    let mut hist_rows = Vec::new();
    for (run, (_, seed)) in runs.iter().zip(&tasks) {
        result_rows.push(vec![
            run.secret.clone(),
            seed.to_string(),
            fmt(run.success),
            fmt(run.exact_success),
            fmt(run.duration.total_us),
            fmt(run.duration.pulse_us),
            fmt(run.duration.transport_us),
            fmt(run.duration.overhead_us),
            run.counts.pb1.to_string(),
            run.counts.ms.to_string(),
            run.counts.transports.to_string(),
        ]);
        for (outcome, count) in &run.histogram.counts {
            hist_rows.push(vec![
                run.secret.clone(),
                seed.to_string(),
                outcome.clone(),
                count.to_string(),
            ]);
        }
    }
    write_csv(
        &out.join("results.csv"),
        &hash,
        &[
            "secret",
            "seed",
            "success",
            "exact_success",
            "total_us",
            "pulse_us",
            "transport_us",
            "overhead_us",
            "pb1",
            "ms",
            "transports",
        ],
        &result_rows,
    )?;
    write_csv(
        &out.join("histogram.csv"),
        &hash,
        &["secret", "seed", "outcome", "count"],
        &hist_rows,
    )?;

    // Seed-averaged conditionals over the data register, one per secret,
    // feed the channel mutual information.
    let mut summary = Summary::new();
    let mut conditionals = Vec::new();
    let mut mean_all = 0.0;
    for s in secrets {
        let mine: Vec<&BvRun> = runs
            .iter()
            .zip(&tasks)
            .filter(|(_, (sv, _))| sv == s)
            .map(|(r, _)| r)
            .collect();
        let mut cond = vec![0.0; 1 << n];
        let mut mean = 0.0;
        for r in &mine {
            for (key, p) in r.histogram.data_marginal().map_err(sim_err)? {
                cond[index_of_bits(&key)] += p / mine.len() as f64;
            }
            mean += r.success / mine.len() as f64;
        }
        summary.insert(
            format!("success_{}", mine[0].secret),
            fmt(mean),
        );
        mean_all += mean / secrets.len() as f64;
        conditionals.push(cond);
    }
    let mi = mutual_information(&conditionals, None).map_err(sim_err)?;
    summary.insert("n".into(), n.to_string());
    summary.insert(
        "ancilla_index".into(),
        device.chain.ancilla_index.to_string(),
    );
    summary.insert("mean_success".into(), fmt(mean_all));
    summary.insert("mutual_information_bits".into(), fmt(mi));
    summary.insert("classical_baseline".into(), fmt(classical_baseline(n)));
    summary.insert("total_us".into(), fmt(runs[0].duration.total_us));
    Ok(summary)
}

fn run_rb_experiment(
    resolved: &Resolved,
    device: &DeviceModel,
    out: &Path,
    sequence_count: usize,
    cliffords_per_ion: usize,
) -> Result<Summary, CliError> {
    let cfg = RbConfig {
        sequence_count,
        cliffords_per_ion,
        seed: resolved.seed,
    };
    let res = run_rb(device, &resolved.noise, &cfg).map_err(sim_err)?;
    let rows: Vec<Vec<String>> = res
        .survival
        .iter()
        .zip(&res.per_gate_fidelity)
        .enumerate()
        .map(|(ion, (s, f))| vec![ion.to_string(), fmt(*s), fmt(*f)])
        .collect();
    write_csv(
        &out.join("results.csv"),
        &resolved.config_hash(),
        &["ion", "survival", "per_gate_fidelity"],
        &rows,
    )?;
    let mut summary = Summary::new();
    for (ion, f) in res.per_gate_fidelity.iter().enumerate() {
        summary.insert(format!("per_gate_fidelity_ion{ion}"), fmt(*f));
    }
    Ok(summary)
}

fn run_phase_sweep(
    resolved: &Resolved,
    device: &DeviceModel,
    out: &Path,
    freqs_khz: &[f64],
    depth_rad: f64,
    sequence_count: usize,
    cliffords_per_ion: usize,
) -> Result<Summary, CliError> {
    if freqs_khz.is_empty() {
        return Err(CliError::Config("phase sweep needs at least one frequency".into()));
    }
    let cfg = RbConfig {
        sequence_count,
        cliffords_per_ion,
        seed: resolved.seed,
    };
    let points: Vec<Result<Vec<f64>, CliError>> = freqs_khz
        .par_iter()
        .map(|f_khz| {
            let mut noise = resolved.noise.clone();
            noise.phase_noise = Some(PhaseNoise {
                freq_hz: f_khz * 1e3,
                depth_rad,
            });
            run_rb(device, &noise, &cfg)
                .map(|r| r.per_gate_fidelity)
                .map_err(sim_err)
        })
        .collect();
    let mut rows = Vec::new();
    let mut min_f = f64::INFINITY;
    let mut min_freq = 0.0;
    for (f_khz, point) in freqs_khz.iter().zip(points) {
        let fids = point?;
        if fids[0] < min_f {
            min_f = fids[0];
            min_freq = f_khz * 1e3;
        }
        rows.push(vec![fmt(f_khz * 1e3), fmt(fids[0]), fmt(fids[1])]);
    }
    write_csv(
        &out.join("sweep.csv"),
        &resolved.config_hash(),
        &["freq_hz", "fidelity_ion0", "fidelity_ion1"],
        &rows,
    )?;
    let mut summary = Summary::new();
    summary.insert("worst_freq_hz".into(), fmt(min_freq));
    summary.insert("worst_fidelity_ion0".into(), fmt(min_f));
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn run_ms_motional(
    resolved: &Resolved,
    device: &DeviceModel,
    out: &Path,
    fock_dim: usize,
    loops: u32,
    tau_us: f64,
    heating: bool,
    spectator: bool,
) -> Result<Summary, CliError> {
    let driven = device
        .mode(ModeLabel::Rocking)
        .ok_or_else(|| CliError::Config("device has no rocking mode to drive".into()))?;
    let drive = closed_loop_drive(driven, PI / 2.0, loops, tau_us * 1e-6);
    let cfg = MotionalSimConfig {
        fock_dim,
        heating_enabled: heating,
        initial_nbar: if heating { driven.nbar } else { 0.0 },
        ..MotionalSimConfig::default()
    };
    let outcome = evolve_ms_motional(driven, &drive, &cfg).map_err(sim_err)?;
    let bell = bell_state_fidelity(&outcome.final_state);
    let mut rows = vec![
        vec!["bell_fidelity".into(), fmt(bell)],
        vec!["detuning_hz".into(), fmt(drive.detuning_hz)],
        vec!["rabi_hz".into(), fmt(drive.rabi_hz)],
        vec!["duration_us".into(), fmt(drive.duration_s * 1e6)],
    ];
    let mut summary = Summary::new();
    summary.insert("bell_fidelity".into(), fmt(bell));
    if spectator {
        let com = device
            .mode(ModeLabel::Com)
            .ok_or_else(|| CliError::Config("device has no center-of-mass mode".into()))?;
        let mut hot = cfg.clone();
        hot.heating_enabled = true;
        let added = ms_spectator_added_error(driven, com, &drive, &hot).map_err(sim_err)?;
        rows.push(vec!["spectator_added_error".into(), fmt(added)]);
        summary.insert("spectator_added_error".into(), fmt(added));
    }
    write_csv(
        &out.join("results.csv"),
        &resolved.config_hash(),
        &["metric", "value"],
        &rows,
    )?;
    Ok(summary)
}

fn run_thermal_scan(
    resolved: &Resolved,
    device: &DeviceModel,
    out: &Path,
    nbars: &[f64],
    threshold: f64,
) -> Result<Summary, CliError> {
    if nbars.is_empty() {
        return Err(CliError::Config("thermal scan needs at least one occupation".into()));
    }
    let pulse = pb1_expand(PI / 2.0, 0.0).map_err(|e| CliError::Config(e.to_string()))?;
    let infid: Vec<f64> = nbars
        .par_iter()
        .map(|nb| thermal_carrier_infidelity(&device.radial_modes, *nb, &pulse))
        .collect();
    let rows: Vec<Vec<String>> = nbars
        .iter()
        .zip(&infid)
        .map(|(nb, e)| vec![fmt(*nb), fmt(*e)])
        .collect();
    write_csv(
        &out.join("sweep.csv"),
        &resolved.config_hash(),
        &["nbar", "infidelity"],
        &rows,
    )?;
    // Linear interpolation of the first crossing of the threshold.
    let mut nbar_star = f64::NAN;
    for w in 0..nbars.len() {
        if infid[w] >= threshold {
            nbar_star = if w == 0 {
                nbars[0]
            } else {
                let t = (threshold - infid[w - 1]) / (infid[w] - infid[w - 1]);
                nbars[w - 1] + t * (nbars[w] - nbars[w - 1])
            };
            break;
        }
    }
    let mut summary = Summary::new();
    summary.insert("ions".into(), device.chain.ion_count.to_string());
    summary.insert("threshold".into(), fmt(threshold));
    summary.insert("nbar_star".into(), fmt(nbar_star));
    Ok(summary)
}

fn run_parity(resolved: &Resolved, out: &Path, points: usize) -> Result<Summary, CliError> {
    let ms = UnitaryOp::new_unchecked(ms_unitary_phased(PI / 2.0, 0.0, 0.0), "ms");
    let rho = StateVector::basis(2, 0)
        .apply(&ms)
        .map_err(sim_err)?
        .to_density();
    let scan = parity_scan(&rho, points).map_err(sim_err)?;
    let rows: Vec<Vec<String>> = scan
        .phases
        .iter()
        .zip(&scan.parity)
        .map(|(phi, p)| vec![fmt(*phi), fmt(*p)])
        .collect();
    write_csv(
        &out.join("sweep.csv"),
        &resolved.config_hash(),
        &["phase_rad", "parity"],
        &rows,
    )?;
    let pops = rho.populations();
    let bell =
        bell_fidelity([pops[0], pops[1], pops[2], pops[3]], scan.contrast).map_err(sim_err)?;
    let mut summary = Summary::new();
    summary.insert("contrast".into(), fmt(scan.contrast));
    summary.insert("bell_fidelity".into(), fmt(bell));
    if let Some(w) = &scan.warning {
        summary.insert("warning".into(), w.clone());
    }
    Ok(summary)
}
