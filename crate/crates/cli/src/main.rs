//! Command-line front end: solve, classify, sweep and analyze parametric
//! SOCO instances.
//!
//! Exit codes: 0 success, 2 usage or input errors, 3 numerical failures.

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use socopart::fileio;
use socopart::interval_scan::{self, ScanOptions};
use socopart::partition::{self, DEFAULT_CLASS_TOL, DEFAULT_RANK_TOL};
use socopart::report::{self, Format};
use socopart::solver::{self, SolveOptions};
use socopart::transition::{self, ClassifyOptions, PointVerdict};
use socopart::valuefn;
use socopart::ParametricInstance;

#[derive(Parser)]
#[command(name = "socopart")]
#[command(about = "Parametric analysis of second-order conic optimization")]
struct Cli {
    /// Instance file path, or a bundled name (p5, p6, p8, p14, p14mod, p15).
    #[arg(short, long, global = true, default_value = "p5")]
    instance: String,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value = "table")]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Table => Format::Table,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the primal-dual pair at a fixed parameter value.
    Solve {
        #[arg(long, allow_hyphen_values = true)]
        at: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Classify the optimal partition at a fixed parameter value.
    Partition {
        #[arg(long, allow_hyphen_values = true)]
        at: f64,
        #[arg(long, default_value_t = DEFAULT_CLASS_TOL)]
        tol: f64,
    },
    /// Expand a nonlinearity subinterval around a starting point.
    Nonlinearity {
        #[arg(long, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, default_value_t = 1e-7)]
        stop_tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
    },
    /// Run the higher-order derivative test at a point.
    Transition {
        #[arg(long, allow_hyphen_values = true)]
        at: f64,
        #[arg(long, default_value_t = 10)]
        order: usize,
    },
    /// Solve and classify over a parameter grid.
    Scan {
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Sample the optimal value function over a grid.
    Valuefn {
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
}

enum CliError {
    Input(String),
    Numerical(String),
}

fn load_instance(spec: &str) -> Result<ParametricInstance, CliError> {
    if let Some(inst) = fileio::bundled(spec) {
        return Ok(inst);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::Input(format!("cannot read {spec}: {e}")))?;
    fileio::parse_instance(&text)
        .map_err(|e| CliError::Input(format!("cannot parse {spec}: {e}")))
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let inst = load_instance(&cli.instance)?;
    let format: Format = cli.format.into();
    let started = Instant::now();
    let digest = fileio::instance_digest(&inst);
    let mut out = String::new();

    match &cli.command {
        Command::Solve { at, tol } => {
            let opts = SolveOptions::with_tol(*tol);
            let rep = solver::solve(&inst, *at, &opts)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let t = &rep.triple;
            out.push_str(&format!(
                "objective  {:.12}   # psi({at}) estimate; psi is the optimal value function\n",
                t.objective(&inst)
            ));
            out.push_str(&format!("gap        {:.3e}\n", t.gap()));
            out.push_str(&format!("primal_res {:.3e}\n", t.primal_residual(&inst)));
            out.push_str(&format!("dual_res   {:.3e}\n", t.dual_residual(&inst)));
            out.push_str(&format!("iterations {}\n", rep.iterations));
            out.push_str(&format!("final_mu   {:.3e}\n", rep.final_mu));
            out.push_str(&format!("sigma_min(dF) {:.6e}\n", rep.sigma_min_f));
            if let Some(p) = &rep.partition {
                out.push_str(&format!("partition  {}\n", p.display()));
            }
            out.push_str("x = ");
            out.push_str(&format!("{:?}\n", t.x.flat().as_slice()));
            out.push_str("y = ");
            out.push_str(&format!("{:?}\n", t.y.as_slice()));
            out.push_str("s = ");
            out.push_str(&format!("{:?}\n", t.s.flat().as_slice()));
        }
        Command::Partition { at, tol } => {
            let rep = solver::solve(&inst, *at, &SolveOptions::default())
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let part = partition::classify(&rep.raw_triple, *tol)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            out.push_str(&format!("partition  {}\n", part.display()));
            out.push_str(&format!(
                "strictly_complementary  {}\n",
                part.is_strictly_complementary()
            ));
            let rounded = partition::round_to_partition(&rep.raw_triple, &part);
            let primal =
                partition::primal_nondegenerate(&inst, &rounded, &part, DEFAULT_RANK_TOL);
            let dual = partition::dual_nondegenerate(&inst, &rounded, &part, DEFAULT_RANK_TOL);
            out.push_str(&format!("primal_nondegenerate  {primal}\n"));
            out.push_str(&format!("dual_nondegenerate    {dual}\n"));
            if !part.low_confidence().is_empty() {
                let blocks: Vec<String> =
                    part.low_confidence().iter().map(|b| (b + 1).to_string()).collect();
                out.push_str(&format!("LOW_CONFIDENCE blocks  {{{}}}\n", blocks.join(",")));
            }
            if part.is_strictly_complementary() {
                if let Ok(r) = partition::delta_radius(&rounded, &part) {
                    out.push_str(&format!(
                        "delta  {:.6e}  (delta_B {:.3e}, delta_N {:.3e}, delta_R {:.3e})\n",
                        r.delta, r.delta_b, r.delta_n, r.delta_r
                    ));
                }
            }
        }
        Command::Nonlinearity { start, stop_tol, max_iter } => {
            let mut opts = ScanOptions::default();
            opts.stop_tol = *stop_tol;
            opts.max_iter = *max_iter;
            let rep = interval_scan::run_algorithm1(&inst, *start, &opts)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            out.push_str(&report::render_interval_report(&rep, format));
        }
        Command::Transition { at, order } => {
            let mut opts = ClassifyOptions::default();
            opts.order = *order;
            let outcome = transition::classify_point(&inst, *at, &opts)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            match &outcome.verdict {
                PointVerdict::TransitionPoint { order, block, value } => {
                    let label = quantity_label(&outcome, *block);
                    out.push_str(&format!(
                        "TRANSITION POINT (order {order}, {label} = {value:.6})\n"
                    ));
                }
                PointVerdict::NonlinearityMember { checked_to_order, note } => {
                    out.push_str(&format!(
                        "NONLINEARITY_MEMBER (no violation up to order {checked_to_order})\n"
                    ));
                    if let Some(n) = note {
                        out.push_str(&format!("note: {n}\n"));
                    }
                }
                PointVerdict::Inapplicable { reason } => {
                    out.push_str(&format!("INAPPLICABLE: {reason}\n"));
                }
            }
            out.push_str(&format!("partition {}\n", outcome.partition.display()));
            if let Some(series) = &outcome.series {
                out.push('\n');
                out.push_str(&report::render_derivative_series(series, format));
            }
        }
        Command::Scan { from, to, points } => {
            if !(from < to) || *points < 2 {
                return Err(CliError::Input(
                    "scan needs --from < --to and --points >= 2".into(),
                ));
            }
            let scan = interval_scan::grid_scan(&inst, *from, *to, *points, &SolveOptions::default());
            out.push_str(&report::render_grid_scan(&scan, format));
        }
        Command::Valuefn { from, to, points } => {
            if !(from < to) || *points < 1 {
                return Err(CliError::Input(
                    "valuefn needs --from < --to and --points >= 1".into(),
                ));
            }
            let grid = valuefn::linspace(*from, *to, *points);
            let vf = valuefn::emit_value_function(&inst, &grid, &SolveOptions::default());
            out.push_str(&report::render_value_function(&vf, format));
            if !vf.concave_within(1e-7) {
                out.push_str("warning: midpoint concavity violated beyond tolerance\n");
            }
        }
    }

    // Stdout stays deterministic for a given instance and flags; the
    // command echo with the digest and timing goes to stderr.
    let elapsed = started.elapsed();
    let argv: Vec<String> = std::env::args().collect();
    eprintln!(
        "# {} | instance {} ({digest}) | wall time {:.3}s",
        argv.join(" "),
        cli.instance,
        elapsed.as_secs_f64()
    );
    Ok(out)
}

fn quantity_label(outcome: &transition::ClassifyOutcome, block: usize) -> String {
    use socopart::partition::BlockAssignment;
    match outcome.partition.assignment(block) {
        BlockAssignment::T1 => format!("||u_{}^(k)||", block + 1),
        BlockAssignment::T2 => format!("((u_{0}1)^2-||u_{0}t||^2)^(k)", block + 1),
        _ => format!("v_{}'", block + 1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
