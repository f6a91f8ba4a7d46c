//! Thin command-line harness over the library: convergence studies,
//! condition-number sweeps and the invariant self-test.

use clap::{Args, Parser, Subcommand, ValueEnum};
use cutdg::dg::{MEAN_FACTOR_AS_WRITTEN, MEAN_FACTOR_CLASSICAL};
use cutdg::geometry::{case_by_name, ProblemVariant};
use cutdg::harness::{
    self, emit_condnum_csv, emit_condnum_plotscript, emit_convergence_csv,
    emit_convergence_plotscript, run_condnum, run_convergence, StudyParams,
};
use cutdg::mesh::MeshSpec;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cutdg", about = "Cut discontinuous Galerkin Laplace-Beltrami solver")]
struct Cli {
    /// Plain-text key=value file with defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh-refinement convergence study of a built-in test case.
    Converge(ConvergeArgs),
    /// Surface-positioning condition-number sweep on the unit sphere.
    Condnum(CondnumArgs),
    /// Run the invariant suite and report one line per check.
    Selftest,
}

#[derive(Args, Default)]
struct ConvergeArgs {
    /// Test case: `sphere` or `orthocircle`.
    #[arg(long)]
    case: Option<String>,
    /// Number of refinement levels (level 0 is the coarsest).
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    beta_e: Option<f64>,
    #[arg(long)]
    beta_f: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Use the co-normal average exactly as written (twice the
    /// classical flat-case average).
    #[arg(long)]
    mean_as_written: bool,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    /// Cells per axis on the coarsest level.
    #[arg(long)]
    n0: Option<usize>,
    /// Output CSV path; a gnuplot script is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump the finest background mesh (legacy unstructured-grid text).
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Dump the finest discrete surface (triangle soup).
    #[arg(long)]
    dump_surface: Option<PathBuf>,
    /// Debug: dump the finest stiffness matrix in coordinate format.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Args, Default)]
struct CondnumArgs {
    /// Highest refinement level of the sweep (default 2).
    #[arg(long)]
    levels: Option<usize>,
    /// Number of translation steps; delta = l/steps for l = 0..steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    beta_e: Option<f64>,
    #[arg(long)]
    beta_f: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Report the condition number of the diagonally scaled matrix.
    #[arg(long, value_enum)]
    precond: Option<Precond>,
    /// Extend the sweep to level 3.
    #[arg(long)]
    deep: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Reaction,
    Pure,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precond {
    Jacobi,
}

/// key=value lines; `#` starts a comment.
fn parse_config(path: &Path) -> Result<HashMap<String, String>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!(
                "{}:{}: expected key=value, got `{raw}`",
                path.display(),
                lineno + 1
            ));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Config(HashMap<String, String>);

impl Config {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key `{key}`: cannot parse `{raw}`")),
        }
    }
}

fn write_file(
    path: &Path,
    emit: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), String> {
    let file = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    let mut out = BufWriter::new(file);
    emit(&mut out).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    out.flush().map_err(|e| e.to_string())
}

fn run_converge(args: ConvergeArgs, cfg: &Config) -> Result<(), String> {
    let case_name = args
        .case
        .or(cfg.get("case")?)
        .unwrap_or_else(|| "sphere".to_string());
    let case = case_by_name(&case_name)
        .ok_or_else(|| format!("unknown case `{case_name}` (expected sphere or orthocircle)"))?;
    let levels = args.levels.or(cfg.get("levels")?).unwrap_or(6);
    let mean_factor = if args.mean_as_written || cfg.get("mean_as_written")?.unwrap_or(false) {
        MEAN_FACTOR_AS_WRITTEN
    } else {
        MEAN_FACTOR_CLASSICAL
    };
    let variant = match args.variant {
        Some(Variant::Pure) => ProblemVariant::Pure,
        Some(Variant::Reaction) => ProblemVariant::Reaction,
        None => match cfg.get::<String>("variant")?.as_deref() {
            Some("pure") => ProblemVariant::Pure,
            Some("reaction") | None => ProblemVariant::Reaction,
            Some(other) => return Err(format!("config variant `{other}` unknown")),
        },
    };
    let params = StudyParams {
        beta_e: args.beta_e.or(cfg.get("beta_e")?).unwrap_or(50.0),
        beta_f: args.beta_f.or(cfg.get("beta_f")?).unwrap_or(50.0),
        gamma: args.gamma.or(cfg.get("gamma")?).unwrap_or(0.01),
        mean_factor,
        variant,
        n0: args.n0.or(cfg.get("n0")?).unwrap_or(5),
    };

    let reports = run_convergence(&case, levels, params).map_err(|e| e.to_string())?;
    println!("level,h,ndofs,err_h1,eoc_h1,err_l2,eoc_l2,err_linf,eoc_linf");
    for r in &reports {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        println!(
            "{},{:.4e},{},{:.4e},{},{:.4e},{},{:.4e},{}",
            r.level,
            r.h,
            r.n_dofs,
            r.err_h1,
            fmt(r.eoc_h1),
            r.err_l2,
            fmt(r.eoc_l2),
            r.err_linf,
            fmt(r.eoc_linf)
        );
    }
    if let Some(out) = &args.out {
        write_file(out, |w| emit_convergence_csv(&reports, w))?;
        let script = out.with_extension("gp");
        write_file(&script, |w| emit_convergence_plotscript(out, w))?;
        eprintln!("wrote {} and {}", out.display(), script.display());
    }

    // Optional dumps use the finest level of the study.
    if args.dump_mesh.is_some() || args.dump_surface.is_some() || args.dump_matrix.is_some() {
        let k = levels.saturating_sub(1);
        let mesh = MeshSpec::new(
            nalgebra::Point3::origin(),
            case.bounding_halfwidth,
            params.n0 << k,
        )
        .build();
        let complex = cutdg::CutComplex::build(&mesh, case.level_set.as_ref());
        if let Some(path) = &args.dump_mesh {
            write_file(path, |w| mesh.dump_vtk(w))?;
            eprintln!("wrote {}", path.display());
        }
        if let Some(path) = &args.dump_surface {
            write_file(path, |w| complex.dump_surface(w))?;
            eprintln!("wrote {}", path.display());
        }
        if let Some(path) = &args.dump_matrix {
            let space = cutdg::DgSpace::new(&mesh, &complex);
            let (ah, _) = cutdg::dg::assemble_ah(&complex, &space, params.beta_e, mean_factor);
            let (jh, _) = cutdg::dg::assemble_jh(&complex, &space, params.beta_f, params.gamma);
            let a = ah.add(&jh);
            write_file(path, |w| a.dump_coo(w))?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn run_condnum_cmd(args: CondnumArgs, cfg: &Config) -> Result<(), String> {
    let mut levels = args.levels.or(cfg.get("levels")?).unwrap_or(2);
    if args.deep || cfg.get("deep")?.unwrap_or(false) {
        levels = levels.max(3);
    }
    let steps = args.steps.or(cfg.get("steps")?).unwrap_or(50);
    let beta_e = args.beta_e.or(cfg.get("beta_e")?).unwrap_or(50.0);
    let beta_f = args.beta_f.or(cfg.get("beta_f")?).unwrap_or(50.0);
    let gamma = args.gamma.or(cfg.get("gamma")?).unwrap_or(0.01);
    let jacobi = matches!(args.precond, Some(Precond::Jacobi))
        || matches!(cfg.get::<String>("precond")?.as_deref(), Some("jacobi"));

    let reports =
        run_condnum(levels, steps, beta_e, beta_f, gamma, jacobi).map_err(|e| e.to_string())?;
    println!("level,delta,kappa");
    for r in &reports {
        println!("{},{:.4},{:.6e}", r.level, r.delta, r.kappa);
    }
    for k in 0..=levels {
        let at_level: Vec<f64> = reports
            .iter()
            .filter(|r| r.level == k)
            .map(|r| r.kappa)
            .collect();
        let max = at_level.iter().cloned().fold(f64::MIN, f64::max);
        let min = at_level.iter().cloned().fold(f64::MAX, f64::min);
        let h = 3.2 / 5.0 / (1 << k) as f64;
        eprintln!(
            "level {k}: max kappa {max:.6e}, spread {:.3e}, h^2 max {:.6e}",
            max / min,
            h * h * max
        );
    }
    if let Some(out) = &args.out {
        write_file(out, |w| emit_condnum_csv(&reports, w))?;
        let script = out.with_extension("gp");
        write_file(&script, |w| emit_condnum_plotscript(out, levels, w))?;
        eprintln!("wrote {} and {}", out.display(), script.display());
    }
    Ok(())
}

fn run_selftest() -> Result<(), String> {
    let results = harness::selftest();
    let mut failed = 0;
    for r in &results {
        if r.passed {
            println!("PASS {}", r.name);
        } else {
            println!("FAIL {}: {}", r.name, r.detail);
            failed += 1;
        }
    }
    if failed == 0 {
        println!("{} checks passed", results.len());
        Ok(())
    } else {
        Err(format!("{failed} of {} checks failed", results.len()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => match parse_config(path) {
            Ok(map) => Config(map),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        },
        None => Config(HashMap::new()),
    };
    let result = match cli.command {
        Command::Converge(args) => run_converge(args, &cfg),
        Command::Condnum(args) => run_condnum_cmd(args, &cfg),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
