use clap::{Parser, Subcommand};
use serde_json::Value;
use sigmalab_cli::config::{self, ExperimentConfig, Scenario};
use sigmalab_cli::run::{output_dir, run};
use sigmalab_cli::sweep::{sweep, Axis};
use sigmalab_cli::verify::{verify, VerifyOptions};
use sigmalab_cli::{resolve, CliError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Experiments with nonlocal elliptic operators of order σ on the unit ball.
///
/// Exit codes: 0 success, 1 failure, 2 invalid configuration,
/// 3 solver did not converge (artifacts are still written).
#[derive(Parser)]
#[command(name = "sigmalab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and write its artifacts.
    Run {
        config: PathBuf,
        /// Overrides the `output` key.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a configuration over values of one axis.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check operator properties on seeded random probes; prints JSON.
    Verify {
        /// Takes dimension, σ, σ₀, λ, Λ and seed from this configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        h: f64,
        /// Adds a kernel violating the ellipticity bounds; the run must fail.
        #[arg(long)]
        inject_corrupt_kernel: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a report, manifest or field file.
    Inspect { path: PathBuf },
    /// Print the configuration template of a scenario.
    Template {
        #[arg(value_parser = parse_scenario)]
        scenario: Scenario,
    },
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("unknown scenario {s}; expected one of {}", Scenario::ALL.map(|x| x.name()).join(", ")))
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    Ok(config::load(path)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, output } => {
            let e = resolve(&load(&config)?)?;
            let dir = output_dir(output.as_deref().unwrap_or(&e.output));
            let o = run(&e, &dir).inspect_err(|err| {
                if matches!(err, CliError::NonConvergence { .. }) {
                    eprintln!("artifacts written to {}", dir.display());
                }
            })?;
            println!(
                "{} {}: {} iterations, residual {:e}",
                e.scenario,
                o.report.scheme,
                o.report.iterations,
                o.report.final_residual()
            );
            println!(
                "alpha0 {:.4} (R² {:.3}), alpha1 {:.4} (R² {:.3})",
                o.regularity.alpha0, o.regularity.interior.r_squared, o.regularity.alpha1, o.regularity.second.r_squared
            );
            if let Some(b) = &o.regularity.boundary {
                println!(
                    "boundary s {:.2} (fit {:.4}, R² {:.3}), C {:.4e}",
                    b.increments.s, b.increments.s_fit, b.increments.r_squared, b.increments.constant
                );
            }
            for r in &o.convergence {
                println!("h {:<10} error {:.4e} relative {:.4e}", r.h, r.linf_error, r.relative_error);
            }
            println!("artifacts in {}", dir.display());
            Ok(())
        }
        Command::Sweep { config, axis, values, output } => {
            let base = load(&config)?;
            // validate the base before running anything
            let e = resolve(&base)?;
            let dir = output_dir(output.as_deref().unwrap_or(&e.output));
            let rows = sweep(&base, axis, &values, &dir)?;
            for r in &rows {
                println!("{} = {}: {} {}", axis.name(), r.value, r.status, r.message);
            }
            println!("table in {}", dir.join(format!("sweep_{}.csv", axis.name())).display());
            Ok(())
        }
        Command::Verify {
            config,
            seed,
            pairs,
            h,
            inject_corrupt_kernel,
            out,
        } => {
            let base = match &config {
                Some(p) => load(p)?,
                None => ExperimentConfig::preset(Scenario::Custom),
            };
            let e = resolve(&base)?;
            let opts = VerifyOptions {
                seed: seed.unwrap_or(e.seed),
                pairs,
                h,
                inject_corrupt_kernel,
            };
            let report = verify(e.constants()?, &opts)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(p) = out {
                std::fs::write(p, &text)?;
            }
            if report.pass {
                Ok(())
            } else {
                let failed: Vec<&str> = report.suites.iter().filter(|s| !s.pass).map(|s| s.name.as_str()).collect();
                Err(CliError::Failed(format!("failed suites: {}", failed.join(", "))))
            }
        }
        Command::Inspect { path } => inspect(&path),
        Command::Template { scenario } => {
            let e = resolve(&ExperimentConfig::preset(scenario))?;
            let mut c = ExperimentConfig::preset(scenario);
            c.dimension = Some(e.dimension);
            c.sigma = Some(e.sigma);
            c.sigma0 = Some(e.sigma0);
            c.lambda = Some(e.lambda);
            c.upper = Some(e.upper);
            c.grid = Some(e.grid.clone());
            c.solver.scheme = Some(e.solver.scheme);
            c.solver.tol = Some(e.solver.tol);
            c.solver.max_iter = Some(e.solver.max_iter);
            c.output = Some(e.output.clone());
            if scenario == Scenario::Custom {
                c.operator = Some(e.operator.clone());
                c.rhs = Some(e.rhs.clone());
                c.exterior = Some(e.exterior.clone());
            }
            print!("{}", toml::to_string(&c).map_err(|e| CliError::Failed(e.to_string()))?);
            Ok(())
        }
    }
}

fn num(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::Bool(b)) => b.to_string(),
        Some(Value::String(s)) => s.clone(),
        _ => "-".into(),
    }
}

fn inspect(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("artifacts").is_some() {
        println!("manifest: scenario {}, converged {}", num(&v, "scenario"), num(&v, "converged"));
        println!("config hash {}", num(&v, "config_hash"));
        for a in v["artifacts"].as_array().into_iter().flatten() {
            println!("  {:<24} {}", num(a, "name"), num(a, "sha256"));
        }
    } else if v.get("suites").is_some() {
        println!("verify: pass {}", num(&v, "pass"));
        for s in v["suites"].as_array().into_iter().flatten() {
            println!("  {:<28} {:<5} margin {} ({} checks)", num(s, "name"), num(s, "pass"), num(s, "margin"), num(s, "checks"));
        }
    } else if v.get("scheme").is_some() {
        let res = v["residuals"].as_array().cloned().unwrap_or_default();
        println!(
            "solve: {} converged {} after {} iterations, final residual {}",
            num(&v, "scheme"),
            num(&v, "converged"),
            num(&v, "iterations"),
            res.last().map_or("-".into(), |r| r.to_string())
        );
    } else if v.get("alpha0").is_some() {
        println!("alpha0 {} interval {}", num(&v, "alpha0"), v["alpha0_interval"]);
        println!("alpha1 {} interval {}", num(&v, "alpha1"), v["alpha1_interval"]);
        if let Some(b) = v.get("boundary").and_then(|b| b.get("increments")) {
            println!("boundary s {} (fit {}), C {}, R² {}", num(b, "s"), num(b, "s_fit"), num(b, "constant"), num(b, "r_squared"));
        }
        println!("a_beta {}, weighted L1 {}, oscillation {}", num(&v, "a_beta"), num(&v, "weighted_l1"), num(&v, "oscillation"));
    } else if v.get("header").is_some() {
        let vals: Vec<f64> = v["values"].as_array().into_iter().flatten().filter_map(Value::as_f64).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        println!("field: n {}, h {}, {} nodes, values in [{min:e}, {max:e}]", num(&v["header"], "n"), num(&v["header"], "h"), vals.len());
    } else {
        return Err(CliError::Failed(format!("{} is not a sigmalab artifact", path.display())));
    }
    Ok(())
}
