use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use sobex_core::extension::{ExtensionMap, ExtensionOptions};
use sobex_core::geometry::{rasterize, Region, Shape};
use sobex_core::harness::{
    rasterize_spec, run_certification, run_norm_study, ExperimentConfig, Exponents, Outcome,
    ProductSpec,
};
use sobex_core::partition::BumpBasis;
use sobex_core::quasicube::QuasiCubeFamily;
use sobex_core::whitney::{decompose, DyadicWindow};
use sobex_core::{io, product, Error, Result};

#[derive(Parser)]
#[command(
    name = "sobex",
    version,
    about = "Whitney-type Sobolev extension experiments"
)]
struct Cli {
    /// Worker threads (SOBEX_JOBS overrides).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify Whitney cubes, partition, quasi-cubes and domain geometry.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        dumps: Dumps,
    },
    /// Extension norm ratios, Calderón brackets and product studies.
    Norms {
        #[arg(long)]
        config: PathBuf,
        /// Matrix statistics of the finest first-domain operator, as JSON.
        #[arg(long)]
        dump_operator: Option<PathBuf>,
    },
    /// Product-domain study over two factor shapes.
    Product {
        #[arg(long)]
        factor1: PathBuf,
        #[arg(long)]
        factor2: PathBuf,
        #[arg(long, default_value = "smooth")]
        suite: String,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        /// Number of grid levels, starting at h = 1/32 and halving.
        #[arg(long, default_value_t = 3)]
        levels: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extend a field given on the grid of its SOBEXFLD header.
    Extend {
        #[arg(long)]
        factor1: PathBuf,
        /// Second factor; the field is then a product field.
        #[arg(long)]
        factor2: Option<PathBuf>,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long)]
        delta_s: Option<f64>,
        /// Also write the result as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Dumps {
    /// Domain to dump (default: the first).
    #[arg(long)]
    dump_domain: Option<String>,
    /// Whitney cubes as JSON lines.
    #[arg(long)]
    dump_whitney: Option<PathBuf>,
    /// Sampled Σφ_Q on the window cells as CSV.
    #[arg(long)]
    dump_partition: Option<PathBuf>,
    /// Quasi-cubes as JSON lines.
    #[arg(long)]
    dump_quasicubes: Option<PathBuf>,
    /// Rasterized mask of the finest level (SOBEXMSK).
    #[arg(long)]
    dump_mask: Option<PathBuf>,
}

impl Dumps {
    fn any(&self) -> bool {
        self.dump_whitney.is_some()
            || self.dump_partition.is_some()
            || self.dump_quasicubes.is_some()
            || self.dump_mask.is_some()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.into(),
        source: e,
    }
}

fn write_dumps(cfg: &ExperimentConfig, d: &Dumps) -> Result<()> {
    let spec = match &d.dump_domain {
        Some(name) => cfg
            .domains
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no domain {name:?}")))?,
        None => cfg
            .domains
            .first()
            .ok_or_else(|| Error::InvalidArgument("no domain to dump".into()))?,
    };
    let h = *cfg.levels.last().unwrap();
    let mask = rasterize_spec(&cfg.load_shape(&spec.shape)?, h, spec.pad, &spec.shift)?;
    if let Some(p) = &d.dump_mask {
        io::write(p, &io::encode_mask(&mask))?;
    }
    let window = DyadicWindow::around(&mask, cfg.margin)?;
    let k = (window.diam() / h).log2().round() as u32;
    let fam = Arc::new(decompose(&mask, &window, 0, k + 1)?);
    if let Some(p) = &d.dump_whitney {
        let mut w = create(p)?;
        fam.dump_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(p))?;
    }
    if let Some(p) = &d.dump_partition {
        let basis = BumpBasis::new(fam.clone())?;
        let mut w = create(p)?;
        basis
            .dump_sum_csv(&fam.window.cell_grid()?, &mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(p))?;
    }
    if let Some(p) = &d.dump_quasicubes {
        let delta = cfg.delta_s.unwrap_or(0.5 * mask.closed_diam());
        let q = QuasiCubeFamily::build_with_region(
            fam,
            Arc::new(mask),
            cfg.epsilon,
            delta,
            Region::Closed,
        )?;
        let mut w = create(p)?;
        q.dump_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(p))?;
    }
    Ok(())
}

fn dump_operator(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let spec = cfg
        .domains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no domain for --dump-operator".into()))?;
    let h = *cfg.levels.last().unwrap();
    let mask = rasterize_spec(&cfg.load_shape(&spec.shape)?, h, spec.pad, &spec.shift)?;
    let opts = ExtensionOptions {
        epsilon: cfg.epsilon,
        delta_s: cfg.delta_s,
        margin: cfg.margin,
        region: Region::Closed,
    };
    let map = ExtensionMap::build(&mask, &opts)?;
    let mut text = serde_json::to_string_pretty(&map.stats())?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn extend(
    factor1: &Path,
    factor2: Option<&Path>,
    field: &Path,
    out: &Path,
    opts: &ExtensionOptions,
    csv: Option<&Path>,
) -> Result<()> {
    let s1 = Shape::load(factor1)?;
    match factor2 {
        None => {
            let u = io::read_field(field)?;
            let mask = rasterize(&s1, &u.grid)?;
            let map = ExtensionMap::build(&mask, opts)?;
            let eu = map.apply(&u)?;
            info!(
                "{} source cells -> {} target cells",
                u.values.len(),
                eu.values.len()
            );
            io::write(out, &io::encode_field(&eu))?;
            if let Some(c) = csv {
                let mut w = create(c)?;
                io::field_csv(&eu, &mut w)
                    .and_then(|_| w.flush())
                    .map_err(io_err(c))?;
            }
        }
        Some(f2) => {
            let u = io::read_product(field)?;
            let m1 = rasterize(&s1, &u.grid_x)?;
            let m2 = rasterize(&Shape::load(f2)?, &u.grid_y)?;
            let map1 = ExtensionMap::build(&m1, opts)?;
            let map2 = ExtensionMap::build(&m2, opts)?;
            let w = product::extend_product(&u, &map1, &map2)?;
            io::write(out, &io::encode_product(&w)?)?;
            if let Some(c) = csv {
                let mut f = create(c)?;
                io::field_csv(&w.to_scalar()?, &mut f)
                    .and_then(|_| f.flush())
                    .map_err(io_err(c))?;
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Certify { config, dumps } => {
            let cfg = ExperimentConfig::load(&config)?;
            let run = run_certification(&cfg, cli.jobs)?;
            for r in &run.reports {
                for l in &r.levels {
                    for f in &l.flags {
                        info!("{} h = {}: {f}", r.domain, l.h);
                    }
                    for v in &l.violations {
                        error!("{} h = {}: {v}", r.domain, l.h);
                    }
                }
                println!("{}: {:?}", r.domain, r.outcome);
            }
            if dumps.any() {
                write_dumps(&cfg, &dumps)?;
            }
            Ok(run.outcome)
        }
        Command::Norms {
            config,
            dump_operator: dump,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let study = run_norm_study(&cfg, cli.jobs)?;
            print!("{}", study.summary.render());
            if let Some(p) = dump {
                dump_operator(&cfg, &p)?;
            }
            Ok(study.outcome)
        }
        Command::Product {
            factor1,
            factor2,
            suite,
            p,
            levels,
            seed,
            out,
        } => {
            let cwd = std::env::current_dir().map_err(io_err(Path::new(".")))?;
            let cfg = ExperimentConfig {
                name: "product".into(),
                domains: Vec::new(),
                products: vec![ProductSpec {
                    name: "product".into(),
                    factor1,
                    factor2,
                    commutation: "sin_sin".into(),
                }],
                p: Exponents::One(p),
                levels: (0..levels).map(|k| 1.0 / f64::from(32u32 << k)).collect(),
                epsilon: 0.5,
                delta_s: None,
                margin: 5.0,
                suite,
                fill: Default::default(),
                seed,
                output: out,
                probes: 0,
                density_samples: 0,
                quasiconvexity_pairs: 0,
                quasiconvexity_cells: 4.0,
                regularity_limit: 64.0,
                quasiconvexity_limit: 10.0,
                calderon: false,
                base_dir: cwd,
            };
            cfg.validate()?;
            let study = run_norm_study(&cfg, cli.jobs)?;
            print!("{}", study.summary.render());
            Ok(study.outcome)
        }
        Command::Extend {
            factor1,
            factor2,
            field,
            out,
            epsilon,
            delta_s,
            csv,
        } => {
            let opts = ExtensionOptions {
                epsilon,
                delta_s,
                ..Default::default()
            };
            extend(
                &factor1,
                factor2.as_deref(),
                &field,
                &out,
                &opts,
                csv.as_deref(),
            )?;
            Ok(Outcome::Pass)
        }
    }
}

/// 1 for bad input (config, files, arguments), else the outcome code.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Json(_)
        | Error::Format(_)
        | Error::InvalidArgument(_)
        | Error::Shape(_) => 1,
        _ => Outcome::of_error(e).exit_code() as u8,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) => ExitCode::from(o.exit_code() as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
