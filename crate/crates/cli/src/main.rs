use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landnet::arch::ArchKind;
use landnet::checkpoint::load_checkpoint_with_classes;
use landnet::data::load_dataset_resized;
use landnet::metrics::{classification_report, confusion_matrix};
use landnet::optim::OptimizerKind;
use landnet::runner::{
    best_summary, emit_report, parse_results_csv, prepare_data, results_markdown, run_prepared, CellStatus,
    DataSource, GridConfig, SynthSpec,
};
use landnet::train::evaluate;

const USAGE: u8 = 1;
const DATA: u8 = 2;
const CELL_FAILED: u8 = 3;

/// Train and evaluate land-structure scene classifiers.
#[derive(Parser)]
#[command(name = "landnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one architecture/optimizer/learning-rate combination.
    Train(TrainArgs),
    /// Run every cell of a grid described by a JSON config file.
    Grid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labelled image directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write confusion.csv, report.csv and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild results.md and best.txt from a run directory's results.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Image root with one sub-directory per class.
    #[arg(long, required_unless_present = "synth", conflicts_with = "synth")]
    data: Option<PathBuf>,
    /// Synthetic texture corpus as `n_per_class,side,seed`.
    #[arg(long, value_parser = parse_synth)]
    synth: Option<SynthSpec>,
    #[arg(long, default_value = "cnn", value_parser = parse_arch)]
    arch: ArchKind,
    #[arg(long, default_value = "rmsprop", value_parser = parse_opt)]
    opt: OptimizerKind,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 10, conflicts_with = "no_early_stop")]
    patience: usize,
    /// Train for every epoch regardless of validation loss.
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-class image count after augmentation; 0 disables augmentation.
    #[arg(long, default_value_t = 3500)]
    augment_to: usize,
    /// Train, test and validation fractions.
    #[arg(long, default_value = "0.6,0.3,0.1", value_parser = parse_split)]
    split: [f64; 3],
    /// Side length images are resized to.
    #[arg(long)]
    image_size: Option<usize>,
    /// Split the originals first and augment each split separately.
    #[arg(long)]
    split_first: bool,
    /// Fill the seconds column of results.csv.
    #[arg(long)]
    record_seconds: bool,
}

fn parse_arch(s: &str) -> Result<ArchKind, String> {
    s.parse().map_err(|e: landnet::Error| e.to_string())
}

fn parse_opt(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: landnet::Error| e.to_string())
}

fn parse_synth(s: &str) -> Result<SynthSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts[..] {
        [n, side, seed] => Ok(SynthSpec {
            n: n.parse().map_err(|_| format!("bad count '{n}'"))?,
            side: side.parse().map_err(|_| format!("bad side '{side}'"))?,
            seed: seed.parse().map_err(|_| format!("bad seed '{seed}'"))?,
        }),
        _ => Err("expected n,side,seed".into()),
    }
}

fn parse_split(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad fraction '{p}'")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected three fractions".to_string())
}

/// A message and the process exit status it maps to.
struct Failure(u8, String);

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure(code, e.to_string()))
    }
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

impl TrainArgs {
    fn grid_config(&self) -> Result<GridConfig, Failure> {
        let data = match (&self.data, self.synth) {
            (Some(root), _) => DataSource::Root { root: root.clone() },
            (None, Some(synth)) => DataSource::Synth { synth },
            (None, None) => return Err(Failure(USAGE, "one of --data or --synth is required".into())),
        };
        let cfg = GridConfig {
            architectures: vec![self.arch],
            optimizers: vec![self.opt],
            learning_rates: vec![self.lr],
            epochs: self.epochs,
            batch_size: self.batch,
            patience: (!self.no_early_stop).then_some(self.patience),
            seed: self.seed,
            data,
            augment_to: (self.augment_to > 0).then_some(self.augment_to),
            split: self.split,
            image_size: self.image_size,
            split_first: self.split_first,
            record_seconds: self.record_seconds,
        };
        cfg.validate().or_exit(USAGE)?;
        Ok(cfg)
    }
}

fn run_config(cfg: &GridConfig, out: &Path) -> Result<(), Failure> {
    log("preparing data");
    let data = prepare_data(cfg).or_exit(DATA)?;
    log(&format!(
        "train {} / test {} / val {} images of shape {:?}, classes {:?}",
        data.train.len(),
        data.test.len(),
        data.val.len(),
        data.input_shape(),
        data.class_names()
    ));
    let rows = run_prepared(cfg, &data, out, log).or_exit(DATA)?;
    print!("{}", results_markdown(&rows, cfg.record_seconds));
    print!("\n{}", best_summary(&rows));
    let failed = rows.iter().filter(|r| matches!(r.status, CellStatus::Failed { .. })).count();
    if failed > 0 {
        return Err(Failure(
            CELL_FAILED,
            format!("{failed} of {} cells failed, see {}", rows.len(), out.join("failures.txt").display()),
        ));
    }
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let (mut net, classes) = load_checkpoint_with_classes::<f32>(checkpoint).or_exit(DATA)?;
    let (h, w) = match net.input_shape() {
        [h, w, _] => (*h, *w),
        other => return Err(Failure(DATA, format!("checkpoint expects input {other:?}, not an image"))),
    };
    let ds = load_dataset_resized(data, Some((h, w))).or_exit(DATA)?;
    if let Some(classes) = &classes {
        if classes.as_slice() != ds.encoder().names() {
            return Err(Failure(
                DATA,
                format!(
                    "checkpoint classes {classes:?} differ from data classes {:?}",
                    ds.encoder().names()
                ),
            ));
        }
    }
    let (loss, preds) = evaluate(&mut net, &ds).or_exit(DATA)?;
    let cm = confusion_matrix(&ds.labels(), &preds, ds.num_classes())
        .and_then(|cm| cm.with_class_names(ds.encoder().names()))
        .or_exit(DATA)?;
    let report = classification_report(&cm).or_exit(DATA)?;
    print!("{}", report.to_text());
    println!("\naccuracy_pct: {}\nloss: {loss}", cm.accuracy().or_exit(DATA)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir).or_exit(DATA)?;
        fs::write(dir.join("confusion.csv"), cm.to_csv()).or_exit(DATA)?;
        fs::write(dir.join("report.csv"), report.to_csv()).or_exit(DATA)?;
        fs::write(dir.join("report.txt"), report.to_text()).or_exit(DATA)?;
    }
    Ok(())
}

fn report(dir: &Path) -> Result<(), Failure> {
    let path = dir.join("results.csv");
    let text = fs::read_to_string(&path).map_err(|e| Failure(DATA, format!("{}: {e}", path.display())))?;
    let rows = parse_results_csv(&text).or_exit(DATA)?;
    let with_seconds = rows.iter().all(|r| r.seconds.is_some());
    emit_report(&rows, dir, with_seconds).or_exit(DATA)?;
    print!("{}", results_markdown(&rows, with_seconds));
    print!("\n{}", best_summary(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => run_config(&args.grid_config()?, &args.out),
        Command::Grid { config, out } => run_config(&GridConfig::load(&config).or_exit(USAGE)?, &out),
        Command::Eval { checkpoint, data, out } => eval(&checkpoint, &data, out.as_deref()),
        Command::Report { input } => report(&input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
