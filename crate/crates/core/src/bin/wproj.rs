use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wproj::fit::{fit_measure, FitSettings};
use wproj::io::{load_dataset, parse_dataset, read_fit, write_fit, write_plot, FitDocument};
use wproj::quantile::sample;
use wproj::verify::{consistency_experiment, first_order_residual_with, ExperimentConfig};
use wproj::{wp_distance, EmpiricalMeasure, Error, Model, Quantile, SolverStatus};

#[derive(Parser)]
#[command(name = "wproj", version, about = "Shape-constrained density estimation by Wasserstein projection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FitArgs {
    /// Data file: one value per line or `value,weight`; `-` reads stdin.
    #[arg(long)]
    input: PathBuf,
    /// Fit document path; printed to stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Cells of the uniform grid merged with the data's quantile levels.
    #[arg(long, default_value_t = 200)]
    grid_size: usize,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Write `x,density` on 512 points; defaults to `<output>.plot.csv`.
    #[arg(long, num_args = 0..=1)]
    emit_plot: Option<Option<PathBuf>>,
}

#[derive(Subcommand)]
enum Command {
    /// Project onto non-increasing densities on [0, ∞).
    FitMonotone(FitArgs),
    /// Project onto log-concave densities.
    FitLogconcave {
        #[command(flatten)]
        fit: FitArgs,
        /// Restrict the support to [0, ∞).
        #[arg(long)]
        nonneg_support: bool,
    },
    /// Grenander's estimator.
    Grenander {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, num_args = 0..=1)]
        emit_plot: Option<Option<PathBuf>>,
    },
    /// p-Wasserstein distance between two data files.
    Distance {
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        a: PathBuf,
        b: PathBuf,
    },
    /// Draw from a fitted model, one value per line.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Fit document.
        model: PathBuf,
    },
    /// Certify a fit against its data through the first-order conditions.
    Check {
        #[arg(long)]
        tol: Option<f64>,
        /// Fit document.
        model: PathBuf,
        data: PathBuf,
    },
    /// Run a consistency experiment described by a JSON config.
    Simulate {
        #[arg(long)]
        output: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        config: PathBuf,
    },
}

enum Failure {
    Input(String),
    Limit(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::Io(e.to_string()),
            Error::Infeasible(_) => Failure::Limit(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Limit(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Limit(m) | Failure::Io(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn load(path: &Path) -> Result<EmpiricalMeasure, Failure> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(|e| Failure::Io(e.to_string()))?;
        return Ok(parse_dataset(&text)?);
    }
    Ok(load_dataset(path)?)
}

fn settings(tol: Option<f64>, max_iter: Option<usize>) -> Result<FitSettings, Failure> {
    let mut s = FitSettings::default();
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(Failure::Input(format!("--tol must be positive, got {t}")));
        }
        s = s.with_tol(t);
    }
    if let Some(m) = max_iter {
        s = s.with_max_iter(m);
    }
    Ok(s)
}

// A closed pipe (e.g. `| head`) is not an error.
fn stdout(text: &str) -> Outcome {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Io(e.to_string())),
        _ => Ok(()),
    }
}

fn emit(text: &str, output: Option<&Path>) -> Outcome {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => stdout(text),
    }
}

fn save(doc: &FitDocument, output: Option<&Path>, plot: &Option<Option<PathBuf>>) -> Outcome {
    match output {
        Some(p) => write_fit(doc, p)?,
        None => stdout(&format!("{}\n", doc.to_json()?))?,
    }
    if let Some(explicit) = plot {
        let path = match (explicit, output) {
            (Some(p), _) => p.clone(),
            (None, Some(out)) => out.with_extension("plot.csv"),
            (None, None) => PathBuf::from("plot.csv"),
        };
        write_plot(&doc.density(), path)?;
    }
    Ok(())
}

fn fit_command(args: &FitArgs, model: Model, nonneg: bool) -> Outcome {
    let m = load(&args.input)?;
    let mut s = settings(args.tol, args.max_iter)?;
    s.logconcave.nonneg_support = nonneg;
    if args.grid_size == 0 {
        return Err(Failure::Input("--grid-size must be positive".into()));
    }
    let fit = fit_measure(&m, model, args.grid_size, &s)?;
    let doc = FitDocument::from_fit(&fit, &m, nonneg)?;
    save(&doc, args.output.as_deref(), &args.emit_plot)?;
    let report = fit.report();
    eprintln!("status {:?}, W2 {}, iterations {}", report.status, fit.w2(), report.iterations);
    for w in &doc.warnings {
        eprintln!("warning: {w}");
    }
    match report.status {
        SolverStatus::Optimal => Ok(()),
        status => Err(Failure::Limit(format!("solver stopped with status {status:?}"))),
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::FitMonotone(args) => fit_command(&args, Model::Monotone, false),
        Command::FitLogconcave { fit, nonneg_support } => fit_command(&fit, Model::LogConcave, nonneg_support),
        Command::Grenander { input, output, emit_plot } => {
            let m = load(&input)?;
            let doc = FitDocument::grenander(&m)?;
            save(&doc, output.as_deref(), &emit_plot)
        }
        Command::Distance { p, a, b } => {
            let qa = Quantile::Step(load(&a)?.step_quantile());
            let qb = Quantile::Step(load(&b)?.step_quantile());
            stdout(&format!("{}\n", wp_distance(&qa, &qb, p)?))
        }
        Command::Sample { n, seed, output, model } => {
            let doc = read_fit(&model)?;
            let xs = sample(&doc.quantile()?, n, seed)?;
            let text: String = xs.iter().map(|x| format!("{x}\n")).collect();
            emit(&text, output.as_deref())
        }
        Command::Check { tol, model, data } => {
            let doc = read_fit(&model)?;
            let fit = doc.to_fit()?;
            let m = load(&data)?;
            let q0 = m.step_on(fit.partition());
            let residual = first_order_residual_with(&fit.quantile(), &q0, fit.model(), doc.nonneg_support)?;
            let tol = tol.unwrap_or(10.0 * FitSettings::default().tol(fit.model()));
            stdout(&format!("{residual:e}\n"))?;
            if residual >= -tol {
                eprintln!("certified: residual {residual:e} ≥ −{tol:e}");
                Ok(())
            } else {
                Err(Failure::Limit(format!("first-order condition violated: residual {residual:e} < −{tol:e}")))
            }
        }
        Command::Simulate { output, seed, tol, max_iter, config } => {
            let text =
                std::fs::read_to_string(&config).map_err(|e| Failure::Io(format!("{}: {e}", config.display())))?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Failure::Input(e.to_string()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = consistency_experiment(&cfg, &settings(tol, max_iter)?)?;
            let mut json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Input(e.to_string()))?;
            json.push('\n');
            for row in &report.rows {
                eprintln!("n {:>7}  median W2 {:.6}  [{:.6}, {:.6}]", row.n, row.median, row.lower, row.upper);
            }
            emit(&json, output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
