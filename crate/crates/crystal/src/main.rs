use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crystal::cli_io::{parse_block_grid, parse_trace, render_frames, replay_trace, write_trace};
use crystal::hierarchy::HierarchyError;
use crystal::lattice::{BlockGrid, Configuration};
use crystal::planner::{canonicalize, compute_metrics, reconfigure, Metrics, Plan, PlanError};

#[derive(Parser)]
#[command(name = "crystal", version, about = "Plan and check crystalline robot reconfigurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a shape into the canonical ring of its square.
    Canonicalize {
        input: PathBuf,
        #[command(flatten)]
        out: Outputs,
    },
    /// Plan a source shape into a target shape with the same module count.
    Reconfigure {
        source: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        out: Outputs,
    },
    /// Replay a trace against a grid file and check every step.
    Verify { input: PathBuf, trace: PathBuf },
    /// Time canonicalization over a family of shapes.
    Bench {
        #[arg(long, value_enum, default_value = "square")]
        family: Family,
        #[arg(long, default_value_t = 4)]
        levels: u32,
        #[arg(long, default_value_t = 1)]
        repeat: u32,
    },
}

#[derive(Args)]
struct Outputs {
    /// Write the plan as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write SVG frames into this directory.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    every: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    /// Full square of side 2^h blocks.
    Square,
    /// Full square of side 2^h - 1 blocks (h >= 1), which does not fill
    /// its bounding square.
    Inset,
}

enum Failure {
    Input(String),
    Invalid(String),
    Trap(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Invalid(_) => 3,
            Failure::Trap(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Invalid(m) | Failure::Trap(m) => m,
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        let msg = e.to_string();
        match e {
            PlanError::CountMismatch { .. } | PlanError::FrameMismatch { .. } | PlanError::BadSide(_) => {
                Failure::Input(msg)
            }
            PlanError::Invalid { .. } | PlanError::Hierarchy(HierarchyError::Invalid { .. }) => Failure::Invalid(msg),
            _ => Failure::Trap(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Canonicalize { input, out } => {
            let cfg = load(&input)?;
            let (plan, _) = canonicalize(&cfg)?;
            emit(&cfg, &plan, &out)
        }
        Command::Reconfigure { source, target, out } => {
            let s = load(&source)?;
            let t = load(&target)?;
            let plan = reconfigure(&s, &t)?;
            emit(&s, &plan, &out)
        }
        Command::Verify { input, trace } => {
            let cfg = load(&input)?;
            let text = read(&trace)?;
            let steps = parse_trace(&text).map_err(|e| Failure::Input(format!("{}: {e}", trace.display())))?;
            let end = replay_trace(&cfg, &steps)
                .map_err(|(i, v)| Failure::Invalid(format!("step {i} is illegal: {v}")))?;
            if end.module_count() != cfg.module_count() {
                return Err(Failure::Invalid("module count changed".into()));
            }
            println!("ok steps={} modules={}", steps.len(), end.module_count());
            Ok(())
        }
        Command::Bench { family, levels, repeat } => bench(family, levels, repeat.max(1)),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Configuration, Failure> {
    let grid = parse_block_grid(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Configuration::from_block_grid(&grid).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn emit(start: &Configuration, plan: &Plan, out: &Outputs) -> Result<(), Failure> {
    let io = |p: &Path, e: std::io::Error| Failure::Input(format!("{}: {e}", p.display()));
    if let Some(path) = &out.trace {
        let file = fs::File::create(path).map_err(|e| io(path, e))?;
        write_trace(&plan.steps, &mut BufWriter::new(file)).map_err(|e| io(path, e))?;
    }
    if let Some(dir) = &out.frames {
        render_frames(start, &plan.steps, dir, out.every as usize).map_err(|e| io(dir, e))?;
    }
    print_metrics(&compute_metrics(plan, start));
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!("n_atoms={}", m.n_atoms);
    println!("parallel_steps={}", m.parallel_steps);
    println!("module_ops={}", m.module_ops);
    println!("atom_ops={}", m.atom_ops);
    println!("levels={}", m.levels);
}

fn bench(family: Family, levels: u32, repeat: u32) -> Result<(), Failure> {
    println!("{:>3} {:>10} {:>14} {:>12} {:>10}", "h", "n_atoms", "parallel_steps", "module_ops", "ms");
    let first = match family {
        Family::Square => 0,
        Family::Inset => 1,
    };
    for h in first..=levels {
        let side = match family {
            Family::Square => 1usize << h,
            Family::Inset => (1usize << h) - 1,
        };
        let cfg = Configuration::from_block_grid(&BlockGrid::from_rows(&vec![vec![true; side]; side]))
            .map_err(|e| Failure::Trap(e.to_string()))?;
        let mut best = f64::INFINITY;
        let mut metrics = None;
        for _ in 0..repeat {
            let t0 = Instant::now();
            let (plan, _) = canonicalize(&cfg)?;
            best = best.min(t0.elapsed().as_secs_f64() * 1e3);
            metrics = Some(compute_metrics(&plan, &cfg));
        }
        let m = metrics.expect("at least one repeat");
        println!(
            "{h:>3} {:>10} {:>14} {:>12} {best:>10.1}",
            m.n_atoms, m.parallel_steps, m.module_ops
        );
    }
    Ok(())
}
