use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tbsite::config::{Experiment, RunConfig};
use tbsite::harness;

#[derive(Parser)]
#[command(name = "tbsite", version, about = "Tight-binding site energies, locality and defect relaxation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overridden by TB_OUT).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 gives byte-identical reruns.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues and occupations of the perturbed disk.
    Spectrum(Common),
    /// Site energies of the perturbed disk.
    SiteEnergies(Common),
    /// Decay of site-energy derivatives with distance.
    Locality(Common),
    /// Relax the di-vacancy on one truncated domain.
    Relax {
        #[command(flatten)]
        common: Common,
        /// Free radius.
        #[arg(long = "R")]
        radius: Option<f64>,
        /// Buffer width.
        #[arg(long = "Rbuf")]
        buffer: Option<f64>,
        #[arg(long)]
        gtol: Option<f64>,
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
    },
    /// Convergence of truncated relaxations against a large reference.
    Converge(Common),
}

fn setup_threads(threads: Option<usize>) -> Result<(), String> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err("--threads must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (experiment, common, overrides) = match cli.command {
        Command::Spectrum(c) => (Experiment::Spectrum, c, None),
        Command::SiteEnergies(c) => (Experiment::SiteEnergies, c, None),
        Command::Locality(c) => (Experiment::Locality, c, None),
        Command::Converge(c) => (Experiment::Converge, c, None),
        Command::Relax {
            common,
            radius,
            buffer,
            gtol,
            max_iter,
        } => (Experiment::Relax, common, Some((radius, buffer, gtol, max_iter))),
    };

    let mut cfg = match &common.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some((radius, buffer, gtol, max_iter)) = overrides {
        let s = &mut cfg.study;
        s.radius = radius.unwrap_or(s.radius);
        s.buffer = buffer.unwrap_or(s.buffer);
        s.relax.gtol = gtol.unwrap_or(s.relax.gtol);
        s.relax.max_iter = max_iter.unwrap_or(s.relax.max_iter);
    }
    if let Err(e) = setup_threads(common.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let out = std::env::var_os("TB_OUT").map(PathBuf::from).unwrap_or(common.out);

    match harness::run(&cfg, experiment, &out) {
        Ok(output) => {
            for f in &output.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
