//! `hadanet`: train, evaluate and inspect HadaNets, and run the kernel
//! benchmark and analysis studies.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hadanet::analysis::{
    angle_study, arch_layers, correlation_study, grid_sensitivity, memory_saving, model_summary, write_angle_csv,
    write_correlation_csv, write_memory_csv, Arch, ModelSummary,
};
use hadanet::bench::{bench_compare, write_bench_csv};
use hadanet::config::parse_beta;
use hadanet::network::{
    evaluate_with, lenet, load_model, save_model, train, write_metrics_csv, InferencePath,
};
use hadanet::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "hadanet", version, about = "Block-wise Hadamard binarized networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a LeNet-style network and write the model and per-epoch metrics.
    Train(TrainArgs),
    /// Report top-1 test accuracy of a saved model.
    Eval(EvalArgs),
    /// Time the bit-packed kernel against the dense one.
    Bench(BenchArgs),
    /// Mean angle between random vectors and their binarization.
    Angle(AngleArgs),
    /// Correlate layer outputs of a saved model across a (β_w, β_a) grid.
    Correlate(CorrelateArgs),
    /// Model size with binarized inner layers for a reference architecture.
    Memsize(MemsizeArgs),
    /// Per-layer summary of a saved model.
    Inspect(InspectArgs),
}

/// Options shared by every command that reads a dataset.
#[derive(Args)]
struct DataArgs {
    /// Config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the MNIST IDX files (falls back to $HADANET_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Use generated digits instead of MNIST.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Use only the first N test samples.
    #[arg(long)]
    test_limit: Option<usize>,
    /// Threads for the bit-packed kernels.
    #[arg(long)]
    workers: Option<usize>,
}

impl DataArgs {
    fn run_config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data_dir {
            cfg.data_dir = Some(d.clone());
        }
        if self.synthetic {
            cfg.synthetic = true;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(n) = self.test_limit {
            cfg.test_limit = n;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Weight block size on inner layers: an integer or `full`.
    #[arg(long)]
    beta_w: Option<String>,
    /// Activation block size on inner layers: an integer or `full`.
    #[arg(long)]
    beta_a: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Evaluation batch size; defaults to the config's eval_batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Run binarized dense layers through the bit-packed kernel.
    #[arg(long)]
    packed: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Square matrix sizes M.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    beta: usize,
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; metadata goes to the same path with `.meta` appended.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct AngleArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
    betas: Vec<usize>,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "angle.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Block sizes for both axes: `lo..hi` for every integer in that
    /// range, or a comma-separated list.
    #[arg(long, default_value = "1..8")]
    grid: String,
    /// Test samples pushed through every grid cell.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "correlation.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct MemsizeArgs {
    /// resnet18 or alexnet.
    #[arg(long, default_value = "resnet18")]
    arch: String,
    #[arg(long, default_value_t = 16)]
    beta_w: usize,
    /// Width of a full-precision value in bits.
    #[arg(long, default_value_t = 32)]
    bits: u32,
    /// Optional per-layer CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Print the summary as JSON.
    #[arg(long)]
    json: bool,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Data { .. } => 3,
            Error::Divergence { .. } => 4,
            Error::Model(_) => 5,
            Error::Analysis(_) => 6,
            Error::Shape(_) | Error::Io(_) => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

/// Model files that cannot be read at all are model errors too.
fn model_failure(e: Error) -> Failure {
    match e {
        Error::Io(io) => Failure {
            code: 5,
            message: format!("model file error: {io}"),
        },
        e => e.into(),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Angle(a) => cmd_angle(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Memsize(a) => cmd_memsize(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = a.data.run_config()?;
    if let Some(b) = &a.beta_w {
        cfg.net.beta_w = parse_beta(b)?;
    }
    if let Some(b) = &a.beta_a {
        cfg.net.beta_a = parse_beta(b)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = a.train_limit {
        cfg.train_limit = n;
    }
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(m) = a.metrics {
        cfg.metrics = m;
    }
    cfg.validate()?;

    let (train_set, test_set) = cfg.datasets()?;
    let mut net = lenet(&cfg.net, cfg.train.seed)?;
    eprintln!(
        "training {} params on {} samples, testing on {}",
        net.param_count(),
        train_set.len(),
        test_set.len()
    );
    let metrics = train(&mut net, &train_set, Some(&test_set), &cfg.train, |m| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.4}  test {:.4}  {:.1}s",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_acc,
            m.test_acc.unwrap_or(f32::NAN),
            m.seconds
        );
    })?;
    save_model(&net, &cfg.model)?;
    write_file(&cfg.metrics, |w| write_metrics_csv(w, &metrics))?;
    let last = metrics.last().and_then(|m| m.test_acc).unwrap_or(f32::NAN);
    println!("test_acc={last:.4}");
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let cfg = a.data.run_config()?;
    let batch = a.batch.unwrap_or(cfg.eval_batch);
    if batch == 0 {
        return Err(Error::Config("batch must be >= 1".into()).into());
    }
    let net = load_model(&a.model).map_err(model_failure)?;
    let (_, test_set) = cfg.datasets()?;
    let path = if a.packed {
        InferencePath::Packed { workers: cfg.workers }
    } else {
        InferencePath::Dense
    };
    let acc = evaluate_with(&net, &test_set, batch, path).map_err(|e| match e {
        Error::Shape(m) => Error::Model(format!("model does not fit the dataset: {m}")),
        e => e,
    })?;
    println!("test_acc={acc:.4}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.repeats == 1 {
        eprintln!("warning: --repeats 1 gives a single sample per kernel; medians are not robust");
    }
    let report = bench_compare(&a.sizes, a.beta, a.repeats, a.seed, a.workers)?;
    write_file(&a.out, |w| write_bench_csv(w, &report.records))?;
    let meta = meta_path(&a.out);
    write_file(&meta, |w| {
        for (k, v) in &report.metadata {
            writeln!(w, "{k}={v}")?;
        }
        Ok(())
    })?;
    println!("{:>6} {:>6} {:>14} {:>14} {:>8}", "M", "beta", "CMMA ns", "xHBNN ns", "speedup");
    for pair in report.records.chunks(2) {
        println!(
            "{:>6} {:>6} {:>14} {:>14} {:>8.2}",
            pair[0].m, pair[0].beta, pair[0].median_ns, pair[1].median_ns, pair[1].speedup
        );
    }
    Ok(())
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn cmd_angle(a: AngleArgs) -> Result<(), Failure> {
    let rows = angle_study(a.n, &a.betas, a.trials, a.seed)?;
    write_file(&a.out, |w| write_angle_csv(w, &rows))?;
    for r in &rows {
        println!("beta={:<6} mean_deg={:.4} stderr={:.4}", r.beta, r.mean_deg, r.stderr);
    }
    Ok(())
}

/// `lo..hi` gives every integer in `[lo, hi]`; otherwise a comma list.
fn parse_grid(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::Config(format!("grid {s:?}: expected `lo..hi` or a comma-separated list of sizes"));
    let betas: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if betas.is_empty() || betas.contains(&0) {
        return Err(bad());
    }
    Ok(betas)
}

fn cmd_correlate(a: CorrelateArgs) -> Result<(), Failure> {
    let betas = parse_grid(&a.grid)?;
    if a.samples == 0 {
        return Err(Error::Config("samples must be >= 1".into()).into());
    }
    let net = load_model(&a.model).map_err(model_failure)?;
    let cfg = a.data.run_config()?;
    let (_, test_set) = cfg.datasets()?;
    let batch = test_set.take(a.samples).images();
    let rows = correlation_study(&net, &betas, &batch)?;
    write_file(&a.out, |w| write_correlation_csv(w, &rows))?;
    for s in grid_sensitivity(&rows) {
        println!(
            "layer {:>2}: max |dr| over beta_w {:.6}, over beta_a {:.6}",
            s.layer, s.max_delta_over_beta_w, s.max_delta_over_beta_a
        );
    }
    Ok(())
}

fn cmd_memsize(a: MemsizeArgs) -> Result<(), Failure> {
    let arch: Arch = a.arch.parse()?;
    if a.beta_w == 0 {
        return Err(Error::Config("beta_w must be >= 1".into()).into());
    }
    let report = memory_saving(&arch_layers(arch, a.beta_w), a.bits)?;
    if let Some(out) = &a.out {
        write_file(out, |w| write_memory_csv(w, &report))?;
    }
    println!(
        "{} params, dense {:.0} bytes, packed {:.0} bytes",
        report.rows.iter().map(|r| r.params).sum::<u64>(),
        report.dense_bytes,
        report.packed_bytes
    );
    println!("ratio={:.4}", report.ratio);
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<(), Failure> {
    let net = load_model(&a.model).map_err(model_failure)?;
    let summary = model_summary(&net)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let res = if a.json {
        serde_json::to_writer_pretty(&mut out, &summary)
            .map_err(io::Error::from)
            .and_then(|_| writeln!(out))
    } else {
        print_summary(&mut out, &summary)
    };
    res.map_err(|e| Failure {
        code: 1,
        message: format!("cannot write summary: {e}"),
    })
}

fn print_summary(out: &mut impl Write, s: &ModelSummary) -> io::Result<()> {
    let dims = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
    let opt = |v: Option<usize>| v.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
    writeln!(out, "input {}", dims(&s.input_shape))?;
    writeln!(
        out,
        "{:>3} {:<11} {:<12} {:<14} {:>5} {:>5} {:>9} {:>11} {:>11}",
        "#", "layer", "output", "weight", "b_w", "b_a", "params", "dense_B", "stored_B"
    )?;
    for r in &s.layers {
        writeln!(
            out,
            "{:>3} {:<11} {:<12} {:<14} {:>5} {:>5} {:>9} {:>11} {:>11}",
            r.index,
            r.kind,
            dims(&r.output_shape),
            r.weight_shape.as_deref().map(dims).unwrap_or_else(|| "-".into()),
            opt(r.beta_w),
            opt(r.beta_a),
            r.params,
            r.dense_bytes,
            r.stored_bytes
        )?;
    }
    writeln!(
        out,
        "total {} params, dense file {} bytes, packed file {} bytes, ratio {:.4}",
        s.params, s.dense_file_bytes, s.packed_file_bytes, s.ratio
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ranges_are_inclusive() {
        assert_eq!(parse_grid("1..8").unwrap(), (1..=8).collect::<Vec<_>>());
        assert_eq!(parse_grid("3..3").unwrap(), vec![3]);
        assert_eq!(parse_grid("1,3, 5").unwrap(), vec![1, 3, 5]);
        for bad in ["", "8..1", "a..4", "0", "1,,2"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn meta_sits_next_to_the_csv() {
        assert_eq!(meta_path(Path::new("out/b.csv")), PathBuf::from("out/b.csv.meta"));
    }
}
