use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nilfpp::config::ExperimentConfig;
use nilfpp::manifest::RunManifest;
use nilfpp::run::{execute, Plan};
use nilfpp::{NilError, Result};

#[derive(Parser)]
#[command(name = "nilfpp", version, about = "Stationary FPP weights on Cayley graphs of virtually nilpotent groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: paths, simulation, profiles, audits and shape clouds.
    Run(RunArgs),
    /// Highway paths and certificates (paths.csv, paths.json).
    Paths(RunArgs),
    /// Resolved weights of the first seed as CSV.
    Weights(RunArgs),
    /// Passage-time estimates per target.
    Simulate(RunArgs),
    /// Directional ratio profiles.
    Profile(RunArgs),
    /// Ball clouds and their SVG outlines.
    Shape(RunArgs),
    /// Membership, symmetry, competition and center audits.
    Audit(RunArgs),
    /// Re-validate a manifest, or certify the paths of a config.
    Check {
        /// A manifest.json or an experiment config.
        path: PathBuf,
        #[arg(long, env = "NILFPP_OUT")]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    seeds: Option<usize>,
    /// Search radius of the simulated ball.
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    n_max: Option<u32>,
    /// Worker threads (artifacts do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, env = "NILFPP_OUT")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seeds {
            cfg.seeds = s;
        }
        if let Some(r) = self.radius {
            cfg.search_radius = r;
        }
        if let Some(n) = self.n_max {
            cfg.n_max = n;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(m: &RunManifest, out: &Path) -> Result<()> {
    for name in m.artifacts.keys() {
        println!("wrote {}", out.join(name).display());
    }
    println!("wrote {}", out.join("manifest.json").display());
    let mut failed = Vec::new();
    for a in &m.audits {
        for c in &a.checks {
            let tag = if c.passed { "ok  " } else { "FAIL" };
            if c.tolerance == f64::MAX {
                println!("{tag} {}: {} = {}", a.name, c.name, c.value);
            } else {
                println!("{tag} {}: {} = {} (tolerance {})", a.name, c.name, c.value, c.tolerance);
            }
            if !c.passed {
                failed.push(format!("{}: {}", a.name, c.name));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(NilError::Certification(failed.join("; ")))
    }
}

fn run_command(name: &str, args: &RunArgs) -> Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| NilError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = args.load()?;
    let plan = Plan::for_command(name)?;
    let out = execute(&cfg, plan, name, &cfg.output_dir)?;
    report(&out.manifest, &cfg.output_dir)
}

fn check(path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| NilError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("content_hash").is_some() {
        let m = RunManifest::load(path)?;
        println!("manifest {} re-validated", path.display());
        return report(&m, path.parent().unwrap_or(Path::new(".")));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let out = execute(&cfg, Plan::for_command("check")?, "check", &cfg.output_dir)?;
    println!(
        "{} levels certified, C0' = {:?}",
        out.construction.reports.len(),
        out.manifest.constants.c0_prime
    );
    report(&out.manifest, &cfg.output_dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run_command("run", a),
        Command::Paths(a) => run_command("paths", a),
        Command::Weights(a) => run_command("weights", a),
        Command::Simulate(a) => run_command("simulate", a),
        Command::Profile(a) => run_command("profile", a),
        Command::Shape(a) => run_command("shape", a),
        Command::Audit(a) => run_command("audit", a),
        Command::Check { path, out } => check(path, out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
