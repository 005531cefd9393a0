use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qbnn::bayes::{BayesianModel, Executable, Method, Mode, QuantisedModel};
use qbnn::train::TrainLog;
use qbnn_harness::error::io_err;
use qbnn_harness::pipeline::{evaluate_all, eval_sets, prepare_data, quantise_model, run_sweep, train_float};
use qbnn_harness::results::{emit_csv_file, parse_csv, CsvSink, FLOAT_BITS};
use qbnn_harness::{plot, ExperimentConfig, HarnessError, Result, ResultRow};

#[derive(Parser)]
#[command(name = "qbnn", version, about = "Quantised Bayesian neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a float model and report its test metrics.
    Train(Common),
    /// Train (or load) a float model, fine-tune it with simulated
    /// quantisation and report simulated and integer metrics.
    Qat(Common),
    /// Evaluate a saved or freshly trained model in one mode.
    Eval(Common),
    /// Run every configured method, seed and bit-width cell.
    Sweep(Common),
    /// Aggregate a results CSV into per-figure tables.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the configured method list.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    bits_w: Option<u32>,
    #[arg(long)]
    bits_a: Option<u32>,
    /// Replaces the configured mode list.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Load a float model checkpoint instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Load a finalised quantised model (eval only).
    #[arg(long)]
    quantised: Option<PathBuf>,
    /// Save the trained float model (train) or quantised model (qat).
    #[arg(long)]
    save: Option<PathBuf>,
    /// Training log, one JSON record per line.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV produced by another subcommand.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the tables.
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: qbnn::Error| e.to_string())
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(m) = self.method {
            cfg.methods = vec![m];
        }
        if let Some(w) = self.bits_w {
            cfg.sweep.bits_w = vec![w];
            cfg.qat.bits_w = w;
        }
        if let Some(a) = self.bits_a {
            cfg.sweep.bits_a = vec![a];
            cfg.qat.bits_a = a;
        }
        if let Some(m) = self.mode {
            cfg.modes = vec![m];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn single(&self, cfg: &ExperimentConfig) -> Result<(Method, u64)> {
        match (cfg.methods.as_slice(), cfg.seeds.as_slice()) {
            ([m], [s]) => Ok((*m, *s)),
            _ => Err(HarnessError::Config(
                "this command runs one method and one seed; pass --method and --seed or configure exactly one".into(),
            )),
        }
    }

    fn with_log<T>(&self, f: impl FnOnce(&mut TrainLog<'_>) -> Result<T>) -> Result<T> {
        match &self.log {
            Some(p) => {
                let file = File::create(p).map_err(io_err(p))?;
                let mut w = BufWriter::new(file);
                let out = f(&mut TrainLog::to(&mut w))?;
                w.flush().map_err(io_err(p))?;
                Ok(out)
            }
            None => f(&mut TrainLog::none()),
        }
    }

    fn float_model(&self, cfg: &ExperimentConfig, data: &qbnn_harness::data::Prepared, method: Method, seed: u64) -> Result<BayesianModel<f32>> {
        match &self.model {
            Some(p) => Ok(BayesianModel::load(p)?),
            None => self.with_log(|log| train_float(cfg, data, method, seed, log)),
        }
    }
}

fn single_cell(cfg: &ExperimentConfig) -> Result<(u32, u32)> {
    match cfg.cells().as_slice() {
        [c] => Ok(*c),
        [] => Err(HarnessError::Config("the overflow guard excludes the requested bit-widths".into())),
        _ => Err(HarnessError::Config("pass --bits-w and --bits-a to choose one bit-width cell".into())),
    }
}

fn write_rows(rows: &[ResultRow], out: &Path) -> Result<()> {
    emit_csv_file(rows, out)
}

fn cmd_train(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let (method, seed) = args.single(&cfg)?;
    let data = prepare_data(&cfg, seed)?;
    let sets = eval_sets(&cfg, &data)?;
    let model = args.float_model(&cfg, &data, method, seed)?;
    if let Some(p) = &args.save {
        model.save(p)?;
    }
    let rows = evaluate_all(&cfg, &data, &sets, &Executable::Float(&model), seed, (FLOAT_BITS, FLOAT_BITS), Mode::Float)?;
    write_rows(&rows, &args.out)
}

fn cmd_qat(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let (method, seed) = args.single(&cfg)?;
    let bits = single_cell(&cfg)?;
    let data = prepare_data(&cfg, seed)?;
    let sets = eval_sets(&cfg, &data)?;
    let model = args.float_model(&cfg, &data, method, seed)?;
    let outcome = args.with_log(|log| quantise_model(&cfg, &data, &model, seed, bits.0, bits.1, log))?;
    if let Some(p) = &args.save {
        outcome.quantised.save(p)?;
    }
    let mut rows = Vec::new();
    for mode in cfg.modes.iter().filter(|m| **m != Mode::Float) {
        let exe = Executable::select(&model, Some(&outcome.quantised), *mode, cfg.requant)?;
        rows.extend(evaluate_all(&cfg, &data, &sets, &exe, seed, bits, *mode)?);
    }
    write_rows(&rows, &args.out)
}

fn cmd_eval(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let seed = match cfg.seeds.as_slice() {
        [s] => *s,
        _ => return Err(HarnessError::Config("eval needs exactly one seed".into())),
    };
    let mode = match cfg.modes.as_slice() {
        [m] => *m,
        _ => return Err(HarnessError::Config("eval needs exactly one --mode".into())),
    };
    let data = prepare_data(&cfg, seed)?;
    let sets = eval_sets(&cfg, &data)?;
    let quantised = args.quantised.as_deref().map(QuantisedModel::<f32>::load).transpose()?;
    let rows = match (&quantised, mode) {
        (Some(q), Mode::Simulated | Mode::Integer) => {
            let exe = Executable::Quantised(q, match mode {
                Mode::Simulated => qbnn::bayes::ExecMode::Simulated,
                _ => qbnn::bayes::ExecMode::Integer(cfg.requant),
            });
            evaluate_all(&cfg, &data, &sets, &exe, seed, (q.bits_w, q.bits_a), mode)?
        }
        _ => {
            let method = match (&args.model, cfg.methods.as_slice()) {
                (Some(_), _) => None,
                (None, [m]) => Some(*m),
                _ => return Err(HarnessError::Config("eval needs --model or exactly one method".into())),
            };
            let model = args.float_model(&cfg, &data, method.unwrap_or(Method::Pointwise), seed)?;
            let exe = Executable::select(&model, None, mode, cfg.requant)?;
            evaluate_all(&cfg, &data, &sets, &exe, seed, (FLOAT_BITS, FLOAT_BITS), mode)?
        }
    };
    write_rows(&rows, &args.out)
}

fn cmd_sweep(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let file = File::create(&args.out).map_err(io_err(&args.out))?;
    let mut sink = CsvSink::new(BufWriter::new(file))?;
    run_sweep(&cfg, |rows| {
        for r in rows {
            sink.write(r)?;
        }
        sink.flush()
    })?;
    sink.flush()
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let file = File::open(&args.input).map_err(io_err(&args.input))?;
    let rows = parse_csv(file)?;
    for p in plot::write_tables(&rows, &args.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Qat(a) => cmd_qat(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::PlotData(a) => cmd_plot(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
