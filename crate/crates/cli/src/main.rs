//! `iobf`: obfuscate a textual IR module or a whole corpus directory.
//!
//! Exit status: 0 success, 1 I/O failure, 2 parse or validation error,
//! 3 bad parameter, 4 semantic oracle failure in batch mode.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use iobf::identifier::Dictionary;
use iobf::ir::export_dot;
use iobf::metrics::{similarity, space_ratio};
use iobf::pipeline::{batch, parse_passes, Pipeline, PipelineConfig, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "iobf", version, about = "Obfuscating compiler middle-end for a small textual IR")]
struct Cli {
    /// Input IR file (omit with --batch).
    #[arg(required_unless_present = "batch", conflicts_with = "batch")]
    input: Option<PathBuf>,
    /// Output file; in batch mode a directory. Defaults to stdout / no output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Comma-separated passes applied in order.
    #[arg(long, default_value = "")]
    passes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batch seeds, comma-separated; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Only obfuscate functions with these source names (comma-separated).
    #[arg(long, value_delimiter = ',')]
    funcs: Option<Vec<String>>,
    /// Decoy inner cases per outer case for `nested`.
    #[arg(long)]
    bogus_count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    indeg_margin: usize,
    /// Per-block probability for `bcf`.
    #[arg(long, default_value_t = 0.3)]
    prob: f64,
    /// Replacement-name dictionary, one identifier per line.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Decoy overloads per function.
    #[arg(long, default_value_t = 2)]
    decoys: usize,
    /// Write one Graphviz file per function into this directory.
    #[arg(long)]
    emit_dot: Option<PathBuf>,
    /// Write a JSON report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Process every manifest in this corpus directory.
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Measure run time with this many repetitions per input.
    #[arg(long)]
    time_reps: Option<usize>,
    /// Print the batch report as a table.
    #[arg(long)]
    table: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: e.exit_code() as u8, message: e.to_string() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure { code: 1, message: format!("{e:#}") }
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let dict = match &cli.dict {
        None => Dictionary::bundled(),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Dictionary::parse(&text).map_err(|e| Failure { code: 3, message: e.to_string() })?
        }
    };
    let config = PipelineConfig {
        passes: parse_passes(&cli.passes)?,
        seed: cli.seed,
        funcs: cli.funcs.clone(),
        bogus_count: cli.bogus_count,
        indeg_margin: cli.indeg_margin,
        prob: cli.prob,
        dict,
        decoys_per_fn: cli.decoys,
        time_reps: cli.time_reps,
    };
    config.check()?;
    Ok(config)
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run_single(cli: &Cli, input: &Path, pipeline: &Pipeline) -> Result<(), Failure> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let original = iobf::ir::parse_module(&text).map_err(PipelineError::from)?;
    let out = pipeline.run_module(&original)?;
    match &cli.output {
        Some(path) => write(path, &out.text)?,
        None => print!("{}", out.text),
    }
    if let Some(dir) = &cli.emit_dot {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for f in &out.module.functions {
            write(&dir.join(format!("{}.dot", f.mangled_name)), &export_dot(f))?;
        }
    }
    if let Some(path) = &cli.report {
        let report = serde_json::json!({
            "seed": pipeline.config.seed,
            "passes": out.reports,
            "names": out.names,
            "similarity": similarity(&original, &out.module),
            "space_ratio": space_ratio(&original, &out.module),
        });
        write(path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    Ok(())
}

fn run_batch(cli: &Cli, dir: &Path, pipeline: &Pipeline) -> Result<(), Failure> {
    let seeds = if cli.seeds.is_empty() { vec![cli.seed] } else { cli.seeds.clone() };
    let outcome = batch(dir, pipeline, &seeds).with_context(|| format!("reading {}", dir.display()))?;
    if let Some(out_dir) = &cli.output {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        for (file, seed, text) in &outcome.outputs {
            let stem = Path::new(file).file_stem().and_then(|s| s.to_str()).unwrap_or(file);
            write(&out_dir.join(format!("{stem}.s{seed}.ir")), text)?;
        }
    }
    if let Some(path) = &cli.report {
        write(path, &(outcome.report.to_json() + "\n"))?;
    }
    if cli.table {
        print!("{}", outcome.report.to_table());
    }
    for m in &outcome.mismatches {
        eprintln!("oracle mismatch in {} (seed {}, input {:?}): expected {}, got {}", m.file, m.seed, m.input, m.expected, m.actual);
    }
    for (file, why) in &outcome.report.failures {
        eprintln!("{file}: {why}");
    }
    match outcome.exit_code() {
        0 => Ok(()),
        code => Err(Failure { code: code as u8, message: format!("batch finished with exit status {code}") }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(3);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = config(&cli).and_then(|config| {
        let pipeline = Pipeline::new(config);
        match (&cli.batch, &cli.input) {
            (Some(dir), _) => run_batch(&cli, dir, &pipeline),
            (None, Some(input)) => run_single(&cli, input, &pipeline),
            (None, None) => unreachable!("clap requires an input or --batch"),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("iobf: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
