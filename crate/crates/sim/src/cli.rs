//! The `nedmpc` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nedmpc_core::coordinator::{NestedSystem, SimulationResult};
use nedmpc_core::model::System;
use nedmpc_core::rci::{design_scalings, verify_rci, SubsystemDesign};

use crate::audit::{audit_design, audit_run, summarize, Finding};
use crate::config::{parse_config, Config};
use crate::design_file::DesignFile;
use crate::error::{exit, Result, SimError};
use crate::trace::write_trace;

#[derive(Debug, Parser)]
#[command(name = "nedmpc", version, about = "Nested distributed MPC for coupled linear subsystems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the scaling constants and invariance feedback, print the
    /// table and save the design.
    Design {
        config: PathBuf,
        /// Where to save the design (default: <config>.design.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed loop, audit every round and optionally save a trace.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// CSV trace destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use a saved design instead of designing afresh.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Check the invariant sets by sampling, audit the design and run a
    /// closed-loop audit.
    Verify {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Sampling seed (default: the config seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

/// Runs the command line on `args` (program name first) and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::PASS };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Design { config, out: dest } => design_cmd(&config, dest, out),
        Command::Simulate {
            config,
            steps,
            out: dest,
            design,
        } => simulate_cmd(&config, steps, dest, design, out),
        Command::Verify {
            config,
            samples,
            seed,
            design,
            steps,
        } => verify_cmd(&config, samples, seed, design, steps, out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(err, "  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load(config: &Path, design: Option<&Path>) -> Result<(Config, System, Vec<SubsystemDesign>, Option<DesignFile>)> {
    let cfg = parse_config(config)?;
    let system = cfg.system()?;
    let settings = cfg.settings();
    let (designs, file) = match design {
        Some(p) => {
            let file = DesignFile::read(p)?;
            (file.to_designs(&system, &settings)?, Some(file))
        }
        None => (design_scalings(&system, cfg.rci.h, cfg.weights()?, &settings)?, None),
    };
    Ok((cfg, system, designs, file))
}

/// Scaling constants as a table: one column per subsystem, four decimals.
pub fn design_table(designs: &[SubsystemDesign]) -> String {
    let mut s = format!("{:<10}", "");
    for i in 0..designs.len() {
        s += &format!("{:>10}", format!("sub {i}"));
    }
    s.push('\n');
    type Pick = fn(&SubsystemDesign) -> f64;
    let rows: [(&str, Pick); 8] = [
        ("alpha_x", |d| d.scalings.alpha_x),
        ("beta_x", |d| d.scalings.beta_x),
        ("xi_x", |d| d.scalings.xi_x),
        ("alpha_u", |d| d.scalings.alpha_u),
        ("beta_u", |d| d.scalings.beta_u),
        ("xi_u", |d| d.scalings.xi_u),
        ("sum_x", |d| d.scalings.alpha_x + d.scalings.beta_x + d.scalings.xi_x),
        ("sum_u", |d| d.scalings.alpha_u + d.scalings.beta_u + d.scalings.xi_u),
    ];
    for (name, pick) in rows {
        s += &format!("{name:<10}");
        for d in designs {
            s += &format!("{:>10.4}", pick(d));
        }
        s.push('\n');
    }
    s
}

fn design_cmd(config: &Path, dest: Option<PathBuf>, out: &mut dyn Write) -> Result<i32> {
    let start = Instant::now();
    let (_, _, designs, _) = load(config, None)?;
    let elapsed = start.elapsed();
    let dest = dest.unwrap_or_else(|| config.with_extension("design.json"));
    DesignFile::from_designs(&designs).write(&dest)?;
    let text = format!(
        "{}designed {} subsystems in {:.2} s; saved to {}\n",
        design_table(&designs),
        designs.len(),
        elapsed.as_secs_f64(),
        dest.display()
    );
    out.write_all(text.as_bytes()).map_err(io(Path::new("<stdout>")))?;
    let findings = audit_design(&designs, 1e-9);
    report(out, &findings, "design")
}

fn report(out: &mut dyn Write, findings: &[Finding], what: &str) -> Result<i32> {
    let stdout = Path::new("<stdout>");
    if findings.is_empty() {
        writeln!(out, "{what}: PASS").map_err(io(stdout))?;
        Ok(exit::PASS)
    } else {
        for line in summarize(findings) {
            writeln!(out, "  {line}").map_err(io(stdout))?;
        }
        writeln!(out, "{what}: FAIL ({} finding(s))", findings.len()).map_err(io(stdout))?;
        Ok(exit::INVARIANT)
    }
}

fn closed_loop(
    cfg: &Config,
    system: &System,
    designs: &[SubsystemDesign],
    steps: usize,
) -> Result<(SimulationResult, Vec<Finding>)> {
    let ns = NestedSystem::new(system.clone(), designs, cfg.horizons()?, cfg.settings())?;
    let result = ns.run_simulation(&cfg.initial_state(), steps, cfg.tolerances.constraint)?;
    let findings = audit_run(system, designs, &result, cfg.tolerances.constraint);
    Ok((result, findings))
}

fn simulate_cmd(
    config: &Path,
    steps: Option<usize>,
    dest: Option<PathBuf>,
    design: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32> {
    let (cfg, system, designs, _) = load(config, design.as_deref())?;
    let steps = steps.unwrap_or(cfg.sim.steps);
    let start = Instant::now();
    let (result, findings) = closed_loop(&cfg, &system, &designs, steps)?;
    if let Some(dest) = &dest {
        let file = std::fs::File::create(dest).map_err(io(dest))?;
        write_trace(std::io::BufWriter::new(file), &result, cfg.period())?;
    }
    let rejects = result
        .logs
        .iter()
        .flat_map(|l| &l.records)
        .filter(|r| !r.accepted)
        .count();
    writeln!(
        out,
        "{steps} rounds in {:.2} s; final |x|_inf = {:e}; {rejects} rejected ancillary updates",
        start.elapsed().as_secs_f64(),
        result.final_plant.x.amax()
    )
    .map_err(io(Path::new("<stdout>")))?;
    if let Some(dest) = &dest {
        writeln!(out, "trace written to {}", dest.display()).map_err(io(Path::new("<stdout>")))?;
    }
    report(out, &findings, "simulate")
}

fn verify_cmd(
    config: &Path,
    samples: usize,
    seed: Option<u64>,
    design: Option<PathBuf>,
    steps: Option<usize>,
    out: &mut dyn Write,
) -> Result<i32> {
    let (cfg, system, designs, file) = load(config, design.as_deref())?;
    let tol = cfg.tolerances.verify;
    let seed = seed.unwrap_or(cfg.seed);
    let stdout = Path::new("<stdout>");
    let mut findings = audit_design(&designs, tol);
    if let Some(file) = &file {
        let gap = file.recorded_mismatch(&designs);
        if gap > tol {
            findings.push(Finding {
                round: None,
                subsystem: 0,
                check: "recorded eta/theta differ from the stored gains",
                excess: gap,
            });
        }
    }
    for (s, d) in system.subsystems().iter().zip(&designs) {
        let rep = verify_rci(&d.full, &s.x_box, &s.u_box, samples, seed.wrapping_add(s.id as u64), &cfg.settings())?;
        writeln!(
            out,
            "subsystem {}: {} samples x {} generators; invariance {:e}, input {:e}, containment {:e}, |D_h| {:e}",
            s.id, rep.samples, rep.generators, rep.invariance, rep.input, rep.containment, rep.d_h_norm
        )
        .map_err(io(stdout))?;
        let bad = rep.violations(tol);
        if bad > 0 {
            findings.push(Finding {
                round: None,
                subsystem: s.id,
                check: "sampled invariance certificate violated",
                excess: bad as f64,
            });
        }
    }
    let steps = steps.unwrap_or(cfg.sim.steps);
    match closed_loop(&cfg, &system, &designs, steps) {
        Ok((_, run)) => findings.extend(run),
        Err(e) if e.exit_code() == exit::INVARIANT => {
            writeln!(out, "closed loop aborted: {e}").map_err(io(stdout))?;
            findings.push(Finding {
                round: None,
                subsystem: 0,
                check: "closed loop aborted",
                excess: f64::INFINITY,
            });
        }
        Err(e) => return Err(e),
    }
    report(out, &findings, "verify")
}
