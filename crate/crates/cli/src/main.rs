//! Command-line harness: compile programs, run experiments, aggregate
//! results. Identical config and seed produce byte-identical outputs.

mod config;
mod experiments;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use ionbv_core::analysis::{classical_baseline, mutual_information, Histogram};
use ionbv_core::compiler::{compile_bv, duration, CompileOptions};
use ionbv_core::gates::OracleSpec;
use ionbv_core::linalg::index_of_bits;

use config::{load_config, resolve, Experiment};
use output::{fmt, read_hash_line, write_csv, write_manifest, write_text};

/// Failure classes map onto the exit codes: config errors exit 2,
/// simulation assertions 3, I/O 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Sim(String),
    Io(String),
}

impl CliError {
    fn exit(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Sim(_) => ExitCode::from(3),
            CliError::Io(_) => ExitCode::from(4),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Sim(m) => write!(f, "simulation error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "ionbv", version, about = "Trapped-ion transport compiler and noisy simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise preset overriding the config file's `preset`.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads for sweep points; 1 disables parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile the configured circuit and write the program text and
    /// pulse/transport counts without simulating.
    Compile(RunArgs),
    /// Run the configured experiment and write results plus a manifest.
    Run(RunArgs),
    /// Aggregate results from one or more run directories.
    Report {
        /// Run output directories to aggregate.
        dirs: Vec<PathBuf>,
        /// Combine runs whose config hashes differ.
        #[arg(long)]
        allow_mixed: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Compile(args) => cmd_compile(&args),
        Cmd::Run(args) => cmd_run(&args),
        Cmd::Report { dirs, allow_mixed } => cmd_report(&dirs, allow_mixed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ionbv: {e}");
            e.exit()
        }
    }
}

fn prepare(args: &RunArgs) -> Result<(config::Resolved, ionbv_core::device::DeviceModel, PathBuf), CliError> {
    let cfg = load_config(&args.config)?;
    let (resolved, device) = resolve(&cfg, args.seed, args.preset.as_deref())?;
    let out = args
        .out
        .clone()
        .or(cfg.out)
        .unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    Ok((resolved, device, out))
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let (resolved, device, out) = prepare(args)?;
    let summary = experiments::run(&resolved, &device, &out)?;
    write_manifest(&out, &resolved, &summary)?;
    for (k, v) in &summary {
        println!("{k} = {v}");
    }
    Ok(())
}

fn cmd_compile(args: &RunArgs) -> Result<(), CliError> {
    let (resolved, device, out) = prepare(args)?;
    let (n, secrets) = match &resolved.experiment {
        Experiment::Bv { n, secrets, .. } => (
            *n,
            secrets
                .clone()
                .unwrap_or_else(|| (0..1usize << n).collect()),
        ),
        other => {
            return Err(CliError::Config(format!(
                "compile applies to the bv experiment, config has '{}'",
                other.name()
            )))
        }
    };
    let opts = CompileOptions {
        pad_to_reference: true,
        compensate_light_shifts: resolved.noise.light_shifts_enabled,
    };
    let hash = resolved.config_hash();
    let mut rows = Vec::new();
    for s in secrets {
        let spec = OracleSpec::new(n, s).map_err(|e| CliError::Config(e.to_string()))?;
        let compiled = compile_bv(&spec, &device, opts).map_err(|e| CliError::Sim(e.to_string()))?;
        let program = &compiled.program;
        write_text(
            &out.join(format!("program_{}.txt", spec.s_string())),
            &program.to_text(),
        )?;
        let counts = program.counts();
        let dur = duration(program, &device.timing);
        let fp = {
            let mut h = Sha256::new();
            h.update(program.transport_fingerprint(&device.timing).as_bytes());
            hex::encode(&h.finalize()[..8])
        };
        rows.push(vec![
            spec.s_string(),
            counts.pb1.to_string(),
            counts.ms.to_string(),
            counts.transports.to_string(),
            fmt(dur.total_us),
            fp,
        ]);
    }
    write_csv(
        &out.join("counts.csv"),
        &hash,
        &["secret", "pb1", "ms", "transports", "total_us", "transport_fingerprint"],
        &rows,
    )?;
    println!("compiled {} programs into {}", rows.len(), out.display());
    Ok(())
}

fn toml_str<'a>(v: &'a toml::Value, path: &[&str]) -> Result<&'a str, CliError> {
    let mut cur = v;
    for p in path {
        cur = cur
            .get(p)
            .ok_or_else(|| CliError::Config(format!("manifest missing key {}", path.join("."))))?;
    }
    cur.as_str()
        .ok_or_else(|| CliError::Config(format!("manifest key {} is not a string", path.join("."))))
}

fn cmd_report(dirs: &[PathBuf], allow_mixed: bool) -> Result<(), CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut hashes: Vec<String> = Vec::new();
    let mut n_bits = None;
    let mut ancilla = None;
    // outcome counts per secret, merged across runs and seeds
    let mut merged: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for dir in dirs {
        let manifest_path = dir.join("manifest.toml");
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", manifest_path.display())))?;
        let manifest: toml::Value = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
        if toml_str(&manifest, &["run", "experiment"])? != "bv" {
            return Err(CliError::Config(format!(
                "{} is not a bv run",
                dir.display()
            )));
        }
        let hash = toml_str(&manifest, &["run", "config_hash"])?.to_owned();
        let n: usize = toml_str(&manifest, &["summary", "n"])?
            .parse()
            .map_err(|_| CliError::Config("manifest summary.n is not a number".into()))?;
        let anc: usize = toml_str(&manifest, &["summary", "ancilla_index"])?
            .parse()
            .map_err(|_| CliError::Config("manifest summary.ancilla_index is not a number".into()))?;
        if *n_bits.get_or_insert(n) != n || *ancilla.get_or_insert(anc) != anc {
            return Err(CliError::Config(
                "run directories mix different register layouts".into(),
            ));
        }
        let hist_path = dir.join("histogram.csv");
        let file_hash = read_hash_line(&hist_path)?;
        if file_hash != hash {
            return Err(CliError::Config(format!(
                "{} was not produced by the config in its manifest",
                hist_path.display()
            )));
        }
        hashes.push(hash);
        let text = std::fs::read_to_string(&hist_path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", hist_path.display())))?;
        for line in text.lines().skip(2) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(CliError::Config(format!(
                    "{}: malformed row '{line}'",
                    hist_path.display()
                )));
            }
            let count: u64 = fields[3]
                .parse()
                .map_err(|_| CliError::Config(format!("bad count in '{line}'")))?;
            *merged
                .entry(fields[0].to_owned())
                .or_default()
                .entry(fields[2].to_owned())
                .or_default() += count;
        }
    }
    if !allow_mixed && hashes.windows(2).any(|w| w[0] != w[1]) {
        return Err(CliError::Config(
            "run directories have different config hashes; pass --allow-mixed to combine them"
                .into(),
        ));
    }
    let n = n_bits.unwrap();
    let ancilla = ancilla.unwrap();
    let mut conditionals = Vec::new();
    let mut mean = 0.0;
    println!("secret  success  baseline");
    for (secret, counts) in &merged {
        let h = Histogram::new(counts.clone(), n, ancilla)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let marginal = h.data_marginal().map_err(|e| CliError::Sim(e.to_string()))?;
        let success = marginal.get(secret).copied().unwrap_or(0.0);
        let mut cond = vec![0.0; 1 << n];
        for (key, p) in marginal {
            cond[index_of_bits(&key)] = p;
        }
        conditionals.push(cond);
        mean += success / merged.len() as f64;
        println!("{secret}  {}  {}", fmt(success), fmt(classical_baseline(n)));
    }
    let mi = mutual_information(&conditionals, None).map_err(|e| CliError::Sim(e.to_string()))?;
    println!("mean_success = {}", fmt(mean));
    println!("classical_baseline = {}", fmt(classical_baseline(n)));
    println!("mutual_information_bits = {}", fmt(mi));
    println!(
        "advantage_over_classical = {}",
        fmt(mean - classical_baseline(n))
    );
    Ok(())
}
