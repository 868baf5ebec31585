//! Command-line driver.

use clap::{Parser, Subcommand};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use scatrel::acceptance::{self, AcceptanceSettings};
use scatrel::action::{action, ActionOptions};
use scatrel::amplitude::{classical_cache, oracle_grid, AmplitudeOptions, DIAGONAL_BAND};
use scatrel::asymptotics::{impact_from_coords, scatter};
use scatrel::bvsolve::find_all;
use scatrel::config::RunConfig;
use scatrel::export::{amplitude_table, json_report, relation_table, trajectory_table};
use scatrel::fio::{order_test, CovectorField, TorusKernel};
use scatrel::frame::unit;
use scatrel::oracle::{optical_check, phase_shifts};
use scatrel::relation::{lagrangian_residual, sample, RelationPatch};
use scatrel::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "scatrel", version, about = "Classical and semiclassical scattering toolkit")]
struct Cli {
    /// TOML run configuration; the shipped default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data-parallel sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrates one scattering trajectory from its incoming asymptote.
    Trajectory {
        /// Incoming direction: an angle (n = 2) or comma-separated components.
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<String>,
        /// Impact coordinates in the frame of omega-perp.
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
    },
    /// Samples the scattering relation on the configured (omega, z) grid.
    Relation,
    /// Finds every trajectory from omega to theta.
    Solve {
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
    },
    /// Solves and evaluates the modified action of every branch.
    Action {
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
    },
    /// Semiclassical amplitude on the configured direction grid.
    Amplitude,
    /// Partial-wave amplitude on the configured direction grid.
    Oracle,
    /// Torus order test of the exact amplitude.
    FioTest,
    /// Runs the acceptance suite.
    Verify,
}

struct Run {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
    hash: String,
}

impl Run {
    fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, contents)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, kind: &str, data: &T) -> Result<()> {
        self.write(name, &json_report(kind, &self.hash, data))
    }

    /// Parses a direction: one angle for `n = 2`, otherwise components.
    fn direction(&self, arg: Option<&str>, fallback: f64, field: &str) -> Result<Vec<f64>> {
        let n = self.cfg.dimension;
        let Some(text) = arg else {
            return if n == 2 { Ok(unit(fallback)) } else { Err(config_err(field, "required for n = 3")) };
        };
        let v = numbers(text, field)?;
        match (n, v.len()) {
            (2, 1) => Ok(unit(v[0])),
            (_, k) if k == n => {
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r == 0.0 {
                    return Err(config_err(field, "zero vector"));
                }
                Ok(v.iter().map(|x| x / r).collect())
            }
            _ => Err(config_err(field, &format!("expected an angle or {n} components"))),
        }
    }
}

fn config_err(field: &str, message: &str) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn numbers(text: &str, field: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| config_err(field, &format!("`{s}`: {e}"))))
        .collect()
}

fn require_planar(run: &Run, what: &str) -> Result<()> {
    if run.cfg.dimension != 2 {
        return Err(config_err("dimension", &format!("{what} uses the planar angle grid and needs n = 2")));
    }
    Ok(())
}

fn angle_grid(r: &scatrel::config::Range) -> Vec<Vec<f64>> {
    r.points().into_iter().map(unit).collect()
}

fn execute(cli: &Cli, run: &Run) -> Result<bool> {
    let cfg = &run.cfg;
    match &cli.command {
        Command::Trajectory { omega, z } => {
            let sys = cfg.system(&run.base)?;
            let om = run.direction(omega.as_deref(), cfg.grid.omega.min, "omega")?;
            let c = match z {
                Some(t) => numbers(t, "z")?,
                None => vec![cfg.grid.z.min; cfg.dimension - 1],
            };
            if c.len() != cfg.dimension - 1 {
                return Err(config_err("z", "needs n - 1 coordinates"));
            }
            let s = scatter(&sys, &om, &impact_from_coords(&om, &c), &cfg.tolerances.asymptotic)?;
            run.write("trajectory.csv", &trajectory_table(&s.trajectory).to_csv(&run.hash))?;
            run.json("trajectory.json", "trajectory", &s.datum)?;
        }
        Command::Relation => {
            require_planar(run, "relation")?;
            let sys = cfg.system(&run.base)?;
            let g = &cfg.grid;
            let patch = RelationPatch::planar((g.omega.min, g.omega.max), (g.z.min, g.z.max));
            let s = sample(&sys, &patch, &[g.omega.count, g.z.count], &cfg.sample_options())?;
            run.write("relation.csv", &relation_table(&s).to_csv(&run.hash))?;
            #[derive(Serialize)]
            struct Summary<'a> {
                patch: &'a RelationPatch,
                resolution: &'a [usize],
                discarded: usize,
                max_extraction_error: f64,
                residual: Option<scatrel::relation::Residual>,
            }
            let residual = lagrangian_residual(&s).ok();
            let sum = Summary {
                patch: &s.patch,
                resolution: &s.resolution,
                discarded: s.discarded,
                max_extraction_error: s.max_extraction_error,
                residual,
            };
            run.json("relation.json", "relation", &sum)?;
        }
        Command::Solve { omega, theta } | Command::Action { omega, theta } => {
            let sys = cfg.system(&run.base)?;
            let om = run.direction(omega.as_deref(), cfg.grid.omega.min, "omega")?;
            let th = run.direction(theta.as_deref(), cfg.grid.theta.min, "theta")?;
            let mut sols = find_all(&sys, &om, &th, &cfg.solve_options())?;
            if matches!(cli.command, Command::Solve { .. }) {
                run.json("solutions.json", "solutions", &sols)?;
            } else {
                let opts = ActionOptions { asymptotic: cfg.tolerances.asymptotic, ..cfg.tolerances.action };
                let mut records = Vec::new();
                for sol in &mut sols {
                    let r = action(&sys, sol, None, None, &opts)?;
                    sol.action = Some(r.value);
                    records.push(r);
                }
                #[derive(Serialize)]
                struct Out<'a> {
                    solutions: &'a [scatrel::bvsolve::TrajectorySolution],
                    records: &'a [scatrel::action::ActionRecord],
                }
                run.json("action.json", "action", &Out { solutions: &sols, records: &records })?;
            }
        }
        Command::Amplitude => {
            require_planar(run, "amplitude")?;
            let sys = cfg.system(&run.base)?;
            let opts = AmplitudeOptions { diagonal_band: DIAGONAL_BAND, solve: cfg.solve_options() };
            let cache = classical_cache(&sys, &angle_grid(&cfg.grid.omega), &angle_grid(&cfg.grid.theta), &opts)?;
            let grid = cache.kernel(&cfg.h_values)?;
            run.write("amplitude.csv", &amplitude_table(&grid).to_csv(&run.hash))?;
            run.json("classical.json", "classical-cache", &cache)?;
        }
        Command::Oracle => {
            let model = cfg.potential_model(&run.base)?;
            let mut optical = BTreeMap::new();
            for h in &cfg.h_values {
                let sol = phase_shifts(&model, cfg.lambda, *h, None, &cfg.tolerances.oracle)?;
                optical.insert(format!("{h}"), (optical_check(&sol), sol));
            }
            run.json("oracle.json", "oracle", &optical)?;
            if cfg.dimension == 2 {
                let grid = oracle_grid(
                    &model,
                    cfg.lambda,
                    &angle_grid(&cfg.grid.omega),
                    &angle_grid(&cfg.grid.theta),
                    &cfg.h_values,
                    DIAGONAL_BAND,
                    &cfg.tolerances.oracle,
                )?;
                run.write("oracle.csv", &amplitude_table(&grid).to_csv(&run.hash))?;
            }
        }
        Command::FioTest => {
            require_planar(run, "fio-test")?;
            let sys = cfg.system(&run.base)?;
            let f = &cfg.fio;
            let patch = RelationPatch::planar(
                (f.relation_omega.min, f.relation_omega.max),
                (f.relation_z.min, f.relation_z.max),
            );
            let rel = sample(&sys, &patch, &[f.relation_omega.count, f.relation_z.count], &cfg.sample_options())?;
            let field = CovectorField::from_relation(f.resolution, &f.options.support, &rel)?;
            let kernel = TorusKernel::from_oracle(
                &cfg.potential_model(&run.base)?,
                cfg.lambda,
                f.resolution,
                &cfg.h_values,
                &cfg.tolerances.oracle,
            )?;
            let rep = order_test(&kernel, &field, &f.options)?;
            println!("slope gain {:.4} (cut {:.4}, control {:.4})", rep.slope_gain, rep.slope_cut, rep.slope_control);
            run.json("fio.json", "fio-test", &rep)?;
        }
        Command::Verify => {
            let settings = AcceptanceSettings { seed: cfg.seed, ..Default::default() };
            println!("# resolved configuration (hash {})", run.hash);
            print!("{}", cfg.to_toml());
            println!("# acceptance settings");
            print!("{}", toml::to_string(&settings).expect("settings serialize"));
            let mut rows = Vec::new();
            for id in 1..=10 {
                let r = acceptance::run(id, &settings);
                println!("{}", r.line());
                rows.push(r);
            }
            let all = rows.iter().all(|r| r.pass);
            println!("{}", if all { "all criteria pass" } else { "some criteria fail" });
            #[derive(Serialize)]
            struct Row<'a> {
                id: u8,
                name: &'a str,
                pass: bool,
                measured: &'a BTreeMap<String, f64>,
                threshold: &'a str,
                budget_seconds: f64,
                error: &'a Option<String>,
            }
            #[derive(Serialize)]
            struct Summary<'a> {
                all_pass: bool,
                settings: &'a AcceptanceSettings,
                criteria: Vec<Row<'a>>,
            }
            let criteria = rows
                .iter()
                .map(|r| Row {
                    id: r.id,
                    name: &r.name,
                    pass: r.pass,
                    measured: &r.measured,
                    threshold: &r.threshold,
                    budget_seconds: r.budget_seconds,
                    error: &r.error,
                })
                .collect();
            run.json("verify.json", "verify", &Summary { all_pass: all, settings: &settings, criteria })?;
            return Ok(all);
        }
    }
    Ok(true)
}

fn setup(cli: &Cli) -> Result<Run> {
    let (cfg, base) = match &cli.config {
        Some(p) => (RunConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
    let hash = cfg.hash();
    Ok(Run { cfg, base, out, hash })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let result = setup(&cli).and_then(|run| execute(&cli, &run));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
