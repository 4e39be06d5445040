use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ks_stokes::diagnostics::{moser_closed_form, moser_partial_product};
use ks_stokes::harness::{
    compare_backends, find_gstar, find_mass_threshold, parse_grid, run, sweep_g, Backend, Overrides, RunConfig,
};

#[derive(Parser)]
#[command(name = "ksstokes", version, about = "Keller-Segel chemotaxis with Stokes-Boussinesq flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    config: PathBuf,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// `N` or `NXxNY`
    #[arg(long)]
    grid: Option<String>,
    /// `fd` or `galerkin`
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run
    Run(Common),
    /// Independent runs over a list of buoyancy values
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        g_list: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Bisection for the smallest quenching buoyancy
    FindGstar {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        #[arg(long, default_value_t = 6)]
        iters: u32,
    },
    /// Bisection for the blow-up mass at the configured buoyancy
    FindMass {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        #[arg(long, default_value_t = 6)]
        iters: u32,
    },
    /// Finite differences against the Galerkin truncation
    Compare(Common),
    /// Moser exponent product and its closed form
    Moser {
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 2)]
        d: u32,
    },
}

fn load(c: &Common) -> ks_stokes::Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    let over = Overrides {
        g: c.g,
        t_end: c.t_end,
        grid: c.grid.as_deref().map(parse_grid).transpose()?,
        backend: c.backend.as_deref().map(str::parse::<Backend>).transpose()?,
        out: c.out.clone(),
    };
    over.apply(&mut cfg)?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> ks_stokes::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: Cli) -> ks_stokes::Result<()> {
    match cli.command {
        Command::Run(c) => print_json(&run(&load(&c)?)?),
        Command::Sweep { common, g_list, workers } => print_json(&sweep_g(&load(&common)?, &g_list, workers)?),
        Command::FindGstar { common, lo, hi, iters } => print_json(&find_gstar(&load(&common)?, lo, hi, iters)?),
        Command::FindMass { common, lo, hi, iters } => {
            print_json(&find_mass_threshold(&load(&common)?, lo, hi, iters)?)
        }
        Command::Compare(c) => print_json(&compare_backends(&load(&c)?)?),
        Command::Moser { n, d } => {
            let p = moser_partial_product(n, d)?;
            println!("product     {p:.17}");
            println!("closed form {:.17}", moser_closed_form(n, d));
            println!("limit       {:.17}", 4.0 / (4.0 - f64::from(d)));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ksstokes: {e}");
            ExitCode::FAILURE
        }
    }
}
