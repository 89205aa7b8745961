use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kriglab::harness::{
    emit_artifacts, fit_once, golden_check, run_experiment, run_map, ExperimentSpec, GoldenSuite,
    MapSpec, ModelRecord,
};
use kriglab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "kriglab",
    version,
    about = "Kriging surrogates and adaptive sampling"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replication count (overrides the config).
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the initial model and print its validation metrics.
    Fit(Common),
    /// One adaptive run.
    Adapt(Common),
    /// Replicated runs of every strategy in the config.
    Experiment(Common),
    /// Evaluate an oscillator indicator on a grid.
    Dynamics(Common),
    /// Run a golden suite and compare against its targets.
    Golden(Common),
}

fn load_spec(c: &Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(&c.config)?;
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if let Some(r) = c.replications {
        spec.replications = r;
    }
    if let Some(o) = &c.out {
        spec.output = Some(o.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn experiment(spec: &ExperimentSpec) -> Result<i32> {
    let res = run_experiment(spec)?;
    let dir = spec.output_dir();
    emit_artifacts(&res, &dir)?;
    for r in &res.replications {
        let m = r
            .outcome
            .as_ref()
            .map(|o| o.final_dataset.len())
            .unwrap_or(0);
        println!(
            "{} replication {} (seed {}): {} at m = {m}",
            r.strategy,
            r.index,
            r.seed,
            r.status().label()
        );
    }
    for s in res.summary().iter().filter(|s| s.m.is_none()) {
        println!(
            "{}: mean {:.4}, variation {:.4}, n {}",
            s.key(),
            s.mean,
            s.variation,
            s.n
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(res.exit_code())
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Fit(c) => {
            let spec = load_spec(&c)?;
            let (model, metrics) = fit_once(&spec, spec.seed)?;
            let rec = ModelRecord::new(&spec, &model);
            println!(
                "m = {}, theta = {:?}, nugget = {:e}",
                rec.m, rec.theta, rec.nugget
            );
            println!(
                "mae = {}, rmse = {}, rmae = {:?}, r2 = {:?}",
                metrics.mae, metrics.rmse, metrics.rmae, metrics.r2
            );
            if let Some(dir) = &c.out {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.display().to_string(),
                    msg: e.to_string(),
                })?;
                let path = dir.join("model.toml");
                let text = toml::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
                std::fs::write(&path, text).map_err(|e| Error::Io {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
            }
            Ok(0)
        }
        Cmd::Adapt(c) => {
            let mut spec = load_spec(&c)?;
            spec.replications = 1;
            spec.compare.clear();
            experiment(&spec)
        }
        Cmd::Experiment(c) => experiment(&load_spec(&c)?),
        Cmd::Dynamics(c) => {
            let spec = MapSpec::load(&c.config)?;
            let dir = c
                .out
                .or_else(|| spec.output.clone())
                .unwrap_or_else(|| Path::new("out").join(&spec.problem));
            let path = run_map(&spec, &dir)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Cmd::Golden(c) => {
            let suite = GoldenSuite::load(&c.config)?;
            let base = c.config.parent().unwrap_or(Path::new("."));
            let mut code = 0;
            for case in &suite.case {
                let cc = Common {
                    config: base.join(&case.config),
                    seed: c.seed,
                    out: c
                        .out
                        .as_ref()
                        .map(|o| o.join(case.config.file_stem().unwrap_or_default())),
                    replications: c.replications,
                };
                let spec = load_spec(&cc)?;
                let res = run_experiment(&spec)?;
                emit_artifacts(&res, &spec.output_dir())?;
                let report = golden_check(&res.summary(), &case.entry);
                println!("# {}", case.config.display());
                print!("{report}");
                if !report.pass() {
                    code = 1;
                }
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
