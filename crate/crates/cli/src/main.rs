use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acmob::config::{parse_config, preset_experiment, serialize_config, RunConfig};
use acmob::diagnostics::{check_energy_dissipation, check_mbp, energy_slack, StepRecord};
use acmob::grid::Field;
use acmob::output::{read_csv, write_snapshot, CsvLog};
use acmob::schemes::SchemeKind;
use acmob::study::{convergence_study, GridKind};
use acmob::timestepping::run_simulation_with;
use acmob::Error;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

/// Overrides `[output] dir` of every run.
const OUTPUT_ENV: &str = "ACMOB_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "acmob", version, about = "Allen-Cahn solver with degenerate mobility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation described by a TOML config file.
    Run { config: PathBuf },
    /// Run a built-in experiment, or print its config.
    Preset {
        name: String,
        #[arg(long)]
        emit_config: bool,
    },
    /// Temporal refinement study on a forced preset.
    Converge {
        preset: String,
        #[arg(long, value_delimiter = ',', default_value = "20,40,80,160,320")]
        ns: Vec<usize>,
        #[arg(long, value_enum, default_value_t = StepsArg::Uniform)]
        steps: StepsArg,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// Mobility exponent m of (1 - φ²)^m; 0 selects constant mobility.
        #[arg(long)]
        exponent: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Re-verify the bound and energy behaviour recorded in a CSV log.
    Check {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = EnergyCheck::Monotone)]
        energy: EnergyCheck,
        #[arg(long, default_value_t = 1e-8)]
        mbp_slack: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StepsArg {
    Uniform,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Dsbe,
    Dscn,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EnergyCheck {
    /// Every step must not increase the energy (first-order scheme).
    Monotone,
    /// Energy must stay below the first logged value plus 1e-6.
    Bounded,
    Off,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MonitorAbort { .. } => 2,
        Error::SolveFailed { .. } => 3,
        Error::ConfigParse { .. } | Error::ConfigInvalid { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => load_config(&config).and_then(|cfg| run(cfg, "run")),
        Command::Preset { name, emit_config } => preset_experiment(&name).and_then(|cfg| {
            if emit_config {
                print!("{}", serialize_config(&cfg)?);
                Ok(())
            } else {
                run(cfg, &name)
            }
        }),
        Command::Converge {
            preset,
            ns,
            steps,
            scheme,
            exponent,
            seed,
        } => converge(&preset, &ns, steps, scheme, exponent, seed),
        Command::Check { csv, energy, mbp_slack } => check(&csv, energy, mbp_slack),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: &Path) -> acmob::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn create_dir(dir: &Path) -> acmob::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn run(cfg: RunConfig, label: &str) -> acmob::Result<()> {
    let dir = output_dir(&cfg);
    create_dir(&dir)?;
    let sim = cfg.simulation()?;
    let phi0 = cfg.initial_field()?;
    info!(
        "{label}: {:?} on {}^{} cells, eps = {}, S2 = {:.4}, T = {}",
        sim.params.kind(),
        cfg.grid.cells,
        cfg.grid.dim,
        cfg.physics.eps,
        sim.params.s2(),
        cfg.time.horizon
    );
    let eps = cfg.physics.eps;
    write_snapshot(&dir.join(format!("{label}_00000000.bin")), &phi0, 0.0, eps)?;

    let csv_path = dir.join(format!("{label}.csv"));
    let mut log = (cfg.output.csv_every > 0)
        .then(|| CsvLog::create(&csv_path))
        .transpose()?;
    let io = |e: std::io::Error| Error::Io {
        path: csv_path.display().to_string(),
        source: e,
    };
    let observe = |rec: &StepRecord, phi: &Field| -> acmob::Result<()> {
        if let Some(log) = log.as_mut() {
            if rec.n.is_multiple_of(cfg.output.csv_every) {
                log.push(rec).map_err(|e| io(e.into()))?;
            }
        }
        if cfg.output.snapshot_every > 0 && rec.n.is_multiple_of(cfg.output.snapshot_every) {
            write_snapshot(&dir.join(format!("{label}_{:08}.bin", rec.n)), phi, rec.t, eps)?;
        }
        if rec.n.is_multiple_of(1000) {
            info!("step {} t = {:.4} E = {:.6e} max|φ| = {:.8}", rec.n, rec.t, rec.energy, rec.max_norm);
        }
        Ok(())
    };
    let out = run_simulation_with(&sim, phi0, observe)?;
    if let Some(mut log) = log {
        log.flush().map_err(io)?;
    }
    let last = out.records.last();
    write_snapshot(
        &dir.join(format!("{label}_final.bin")),
        &out.field,
        last.map_or(0.0, |r| r.t),
        eps,
    )?;
    println!(
        "steps={} t={} energy={:.10e} max_norm={:.12} warnings={}",
        out.records.len(),
        last.map_or(0.0, |r| r.t),
        last.map_or(out.initial_energy, |r| r.energy),
        last.map_or(f64::NAN, |r| r.max_norm),
        out.warnings
    );
    Ok(())
}

fn converge(
    preset: &str,
    ns: &[usize],
    steps: StepsArg,
    scheme: Option<SchemeArg>,
    exponent: Option<f64>,
    seed: u64,
) -> acmob::Result<()> {
    let mut cfg = preset_experiment(preset)?;
    if let Some(s) = scheme {
        cfg.scheme.kind = match s {
            SchemeArg::Dsbe => SchemeKind::DsBE,
            SchemeArg::Dscn => SchemeKind::DsCN,
        };
    }
    if let Some(m) = exponent {
        cfg.physics.mobility = if m == 0.0 {
            acmob::physics::Mobility::Constant { value: 1.0 }
        } else {
            acmob::physics::Mobility::TwoSided { exponent: m }
        };
    }
    cfg.validate()?;
    let kind = match steps {
        StepsArg::Uniform => GridKind::Uniform,
        StepsArg::Random => GridKind::Random { seed },
    };
    let (table, runs) = convergence_study(&cfg, ns, kind)?;

    let dir = output_dir(&cfg);
    create_dir(&dir)?;
    for run in &runs {
        let path = dir.join(format!("{preset}_N{}.csv", run.steps));
        acmob::output::write_csv(&run.records, &path)?;
    }
    let orders = table.orders().unwrap_or_default();
    println!("{:>6} {:>12} {:>8}", "N", "error", "order");
    for (i, row) in table.rows.iter().enumerate() {
        let order = i
            .checked_sub(1)
            .and_then(|j| orders.get(j))
            .map_or("-".to_string(), |p| format!("{p:.2}"));
        println!("{:>6} {:>12.3e} {:>8}", row.steps, row.error, order);
    }
    Ok(())
}

fn check(path: &Path, energy: EnergyCheck, mbp_slack: f64) -> acmob::Result<()> {
    let rows = read_csv(path)?;
    let mut failures = 0usize;
    for r in &rows {
        let v = check_mbp(r.max_norm, mbp_slack);
        if !v.pass {
            println!("step {}: max norm exceeds 1 by {:.3e}", r.n, v.violation);
            failures += 1;
        }
    }
    match energy {
        EnergyCheck::Monotone => {
            for w in rows.windows(2) {
                let v = check_energy_dissipation(w[0].energy, w[1].energy, energy_slack(w[0].energy));
                if !v.pass {
                    println!("step {}: energy rises by {:.3e}", w[1].n, v.violation);
                    failures += 1;
                }
            }
        }
        EnergyCheck::Bounded => {
            if let Some(first) = rows.first() {
                for r in &rows[1..] {
                    let v = check_energy_dissipation(first.energy, r.energy, 1e-6);
                    if !v.pass {
                        println!("step {}: energy exceeds the first value by {:.3e}", r.n, v.violation);
                        failures += 1;
                    }
                }
            }
        }
        EnergyCheck::Off => {}
    }
    println!("{} rows, {} violations", rows.len(), failures);
    if failures > 0 {
        Err(Error::MonitorAbort {
            step: 0,
            message: format!("{failures} violations in {}", path.display()),
        })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let abort = Error::MonitorAbort {
            step: 1,
            message: String::new(),
        };
        assert_eq!(exit_code(&abort), 2);
        let cfg = Error::ConfigInvalid {
            field: "x".into(),
            message: String::new(),
        };
        assert_eq!(exit_code(&cfg), 4);
        assert_eq!(exit_code(&Error::Usage(String::new())), 1);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["acmob", "converge", "convergence_forced", "--ns", "20,40", "--steps", "random"]).unwrap();
        match cli.command {
            Command::Converge { ns, .. } => assert_eq!(ns, vec![20, 40]),
            _ => panic!("wrong verb"),
        }
    }
}
