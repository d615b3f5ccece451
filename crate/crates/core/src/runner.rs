//! Experiment grids: one shared data preparation, then one training run per
//! architecture × optimizer × learning-rate cell, each isolated so a failing
//! cell is recorded without stopping the rest.

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchKind;
use crate::checkpoint::save_checkpoint_with_classes;
use crate::data::{
    augment_to_count, load_dataset_resized, split_first_then_augment, stratified_split, synth_dataset, Dataset,
    SplitSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, confusion_matrix, ConfusionMatrix, ClassificationReport};
use crate::network::Network;
use crate::optim::OptimizerKind;
use crate::train::{evaluate, train, TrainConfig, TrainHistory};

/// Default side length for images loaded from a directory.
pub const DEFAULT_IMAGE_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub side: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DataSource {
    Root { root: PathBuf },
    Synth { synth: SynthSpec },
}

fn default_learning_rates() -> Vec<f64> {
    vec![1e-3, 1e-4]
}
fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    64
}
fn default_patience() -> Option<usize> {
    Some(10)
}
fn default_augment_to() -> Option<usize> {
    Some(3500)
}
fn default_split() -> [f64; 3] {
    [0.6, 0.3, 0.1]
}

/// Grid description as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub architectures: Vec<ArchKind>,
    pub optimizers: Vec<OptimizerKind>,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// `null` disables early stopping.
    #[serde(default = "default_patience")]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    /// Per-class count after augmentation; `null` skips augmentation.
    #[serde(default = "default_augment_to")]
    pub augment_to: Option<usize>,
    /// Train, test and validation fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Square side every image is resized to. Defaults to 224 for
    /// directories and to the native side for synthetic data.
    #[serde(default)]
    pub image_size: Option<usize>,
    /// Split the originals before augmenting each split separately, so no
    /// augmented copy shares a source with an image in another split.
    #[serde(default)]
    pub split_first: bool,
    /// Fill the `seconds` column of `results.csv`. Off by default because
    /// wall time would make reruns differ.
    #[serde(default)]
    pub record_seconds: bool,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("grid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() || self.optimizers.is_empty() || self.learning_rates.is_empty() {
            return Err(Error::Invalid(
                "architectures, optimizers and learning_rates must all be non-empty".into(),
            ));
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(**lr > 0.0 && lr.is_finite())) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if self.image_size == Some(0) || self.augment_to == Some(0) {
            return Err(Error::Invalid("image_size and augment_to must be at least 1".into()));
        }
        self.split_spec()?;
        self.train_config(OptimizerKind::Adam, self.learning_rates[0]).validate()
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.split[0], self.split[1], self.split[2])
    }

    pub fn train_config(&self, optimizer: OptimizerKind, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer,
            lr,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Cells in row-major `architecture × optimizer × lr` order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &architecture in &self.architectures {
            for &optimizer in &self.optimizers {
                for &lr in &self.learning_rates {
                    out.push(Cell {
                        index: out.len(),
                        architecture,
                        optimizer,
                        lr,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub architecture: ArchKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("{:02}-{}-{}-{:e}", self.index, self.architecture, self.optimizer, self.lr)
    }
}

/// The shared train/test/validation sets every cell trains on.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub val: Dataset,
}

impl PreparedData {
    pub fn input_shape(&self) -> Vec<usize> {
        self.train.items()[0].pixels.shape().to_vec()
    }

    pub fn class_names(&self) -> &[String] {
        self.train.encoder().names()
    }
}

/// Loads or synthesizes the corpus, resizes it, then augments and splits
/// it. Augmentation precedes splitting unless `split_first` is set.
pub fn prepare_data(cfg: &GridConfig) -> Result<PreparedData> {
    let spec = cfg.split_spec()?;
    let ds = match &cfg.data {
        DataSource::Root { root } => {
            let side = cfg.image_size.unwrap_or(DEFAULT_IMAGE_SIZE);
            load_dataset_resized(root, Some((side, side)))?
        }
        DataSource::Synth { synth } => {
            let ds = synth_dataset(synth.n, synth.side, synth.seed)?;
            match cfg.image_size {
                Some(side) if side != synth.side => ds.resized(side, side),
                _ => ds,
            }
        }
    };
    let (train, test, val) = match (cfg.augment_to, cfg.split_first) {
        (Some(target), true) => split_first_then_augment(&ds, spec, target, cfg.seed)?,
        (Some(target), false) => stratified_split(&augment_to_count(&ds, target, cfg.seed)?, spec, cfg.seed)?,
        (None, _) => stratified_split(&ds, spec, cfg.seed)?,
    };
    Ok(PreparedData { train, test, val })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done {
        accuracy_pct: f64,
        loss: f64,
        epochs_run: usize,
    },
    Failed {
        reason: String,
    },
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub architecture: String,
    pub optimizer: String,
    pub lr: f64,
    pub status: CellStatus,
    pub seconds: Option<f64>,
}

impl ResultRow {
    fn metrics(&self) -> Option<(f64, f64, usize)> {
        match self.status {
            CellStatus::Done {
                accuracy_pct,
                loss,
                epochs_run,
            } => Some((accuracy_pct, loss, epochs_run)),
            CellStatus::Failed { .. } => None,
        }
    }
}

/// Everything one successful cell produced.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub network: Network<f32>,
    pub history: TrainHistory,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
    pub test_loss: f64,
}

/// Trains one cell from a network initialized under `seed`, then
/// evaluates it on the test split.
pub fn run_cell(cell: &Cell, data: &PreparedData, cfg: &GridConfig) -> Result<CellOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net: Network<f32> = cell
        .architecture
        .build(&data.input_shape(), data.train.num_classes(), &mut rng)?;
    let (mut net, history) = train(net, &data.train, &data.val, &cfg.train_config(cell.optimizer, cell.lr))?;
    let (test_loss, preds) = evaluate(&mut net, &data.test)?;
    let confusion =
        confusion_matrix(&data.test.labels(), &preds, data.test.num_classes())?.with_class_names(data.class_names())?;
    let report = classification_report(&confusion)?;
    Ok(CellOutcome {
        network: net,
        history,
        confusion,
        report,
        test_loss,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_cell_artifacts(dir: &Path, outcome: &CellOutcome, classes: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("history.csv"), outcome.history.to_csv())?;
    write(&dir.join("confusion.csv"), outcome.confusion.to_csv())?;
    write(&dir.join("report.csv"), outcome.report.to_csv())?;
    write(&dir.join("report.txt"), outcome.report.to_text())?;
    save_checkpoint_with_classes(&outcome.network, Some(classes), dir.join("model.ckpt"))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs every cell on already-prepared data and writes all artifacts under
/// `out_dir`. Per-cell files go to `out_dir/cells/<NN-arch-opt-lr>/`.
pub fn run_prepared(
    cfg: &GridConfig,
    data: &PreparedData,
    out_dir: &Path,
    mut log: impl FnMut(&str),
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cells = cfg.cells();
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        log(&format!(
            "cell {}/{}: {} / {} / lr {}",
            cell.index + 1,
            cells.len(),
            cell.architecture,
            cell.optimizer,
            cell.lr
        ));
        let start = Instant::now();
        let dir = out_dir.join("cells").join(cell.dir_name());
        let result = catch_unwind(AssertUnwindSafe(|| {
            let outcome = run_cell(cell, data, cfg)?;
            write_cell_artifacts(&dir, &outcome, data.class_names())?;
            Ok::<_, Error>(outcome)
        }))
        .unwrap_or_else(|p| Err(Error::State(format!("cell panicked: {}", panic_message(p)))));
        let status = match result {
            Ok(o) => CellStatus::Done {
                accuracy_pct: o.confusion.accuracy()?,
                loss: o.test_loss,
                epochs_run: o.history.epochs.len(),
            },
            Err(e) => CellStatus::Failed { reason: e.to_string() },
        };
        match &status {
            CellStatus::Done {
                accuracy_pct, loss, epochs_run, ..
            } => log(&format!("  accuracy {accuracy_pct:.2}%, loss {loss:.4}, {epochs_run} epochs")),
            CellStatus::Failed { reason } => log(&format!("  FAILED: {reason}")),
        }
        rows.push(ResultRow {
            architecture: cell.architecture.to_string(),
            optimizer: cell.optimizer.to_string(),
            lr: cell.lr,
            status,
            seconds: Some(start.elapsed().as_secs_f64()),
        });
    }
    emit_report(&rows, out_dir, cfg.record_seconds)?;
    Ok(rows)
}

/// [`prepare_data`] followed by [`run_prepared`].
pub fn run_grid(cfg: &GridConfig, out_dir: &Path, log: impl FnMut(&str)) -> Result<Vec<ResultRow>> {
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data, out_dir, log)
}

/// Index of the best successful row: highest accuracy, then lowest loss,
/// then earliest row.
pub fn best_row(rows: &[ResultRow]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, row) in rows.iter().enumerate() {
        if let Some((acc, loss, _)) = row.metrics() {
            let better = match best {
                None => true,
                Some((_, b_acc, b_loss)) => acc > b_acc || (acc == b_acc && loss < b_loss),
            };
            if better {
                best = Some((i, acc, loss));
            }
        }
    }
    best.map(|(i, _, _)| i)
}

/// Reason given to failed rows read back from `results.csv`.
const UNKNOWN_REASON: &str = "see failures.txt";

pub const RESULTS_HEADER: &str = "architecture,optimizer,lr,accuracy_pct,loss,epochs_run,seconds";

pub fn results_csv(rows: &[ResultRow], record_seconds: bool) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for row in rows {
        let seconds = match (record_seconds, row.seconds) {
            (true, Some(s)) => format!("{s:.3}"),
            _ => String::new(),
        };
        let (acc, loss, epochs) = match row.metrics() {
            Some((a, l, e)) => (a.to_string(), l.to_string(), e.to_string()),
            None => ("FAILED".into(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{acc},{loss},{epochs},{seconds}",
            row.architecture, row.optimizer, row.lr
        );
    }
    out
}

/// Reads back a `results.csv`. Failure reasons are not stored there.
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Data(format!("results table must start with '{RESULTS_HEADER}'")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::Data(format!("results line {}: {what}: '{line}'", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let lr = f[2].parse().map_err(|_| bad("bad lr"))?;
            let status = if f[3] == "FAILED" {
                CellStatus::Failed {
                    reason: UNKNOWN_REASON.into(),
                }
            } else {
                CellStatus::Done {
                    accuracy_pct: f[3].parse().map_err(|_| bad("bad accuracy"))?,
                    loss: f[4].parse().map_err(|_| bad("bad loss"))?,
                    epochs_run: f[5].parse().map_err(|_| bad("bad epoch count"))?,
                }
            };
            let seconds = match f[6] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad seconds"))?),
            };
            Ok(ResultRow {
                architecture: f[0].to_string(),
                optimizer: f[1].to_string(),
                lr,
                status,
                seconds,
            })
        })
        .collect()
}

fn table(header: &[&str], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect()));
    for row in body {
        out.push_str(&line(row.clone()));
    }
    out
}

/// One table per architecture, rows in grid order.
pub fn results_markdown(rows: &[ResultRow], record_seconds: bool) -> String {
    let mut archs: Vec<&str> = Vec::new();
    for row in rows {
        if !archs.contains(&row.architecture.as_str()) {
            archs.push(&row.architecture);
        }
    }
    let mut header = vec!["Optimizer", "Learning rate", "Test accuracy (%)", "Test loss", "Epochs"];
    if record_seconds {
        header.push("Seconds");
    }
    let mut out = String::from("# Results\n");
    for arch in archs {
        let body: Vec<Vec<String>> = rows
            .iter()
            .filter(|r| r.architecture == arch)
            .map(|r| {
                let mut cells = vec![r.optimizer.clone(), r.lr.to_string()];
                match r.metrics() {
                    Some((acc, loss, epochs)) => {
                        cells.extend([format!("{acc:.1}"), format!("{loss:.4}"), epochs.to_string()])
                    }
                    None => cells.extend(["FAILED".to_string(), "-".into(), "-".into()]),
                }
                if record_seconds {
                    cells.push(r.seconds.map_or("-".into(), |s| format!("{s:.1}")));
                }
                cells
            })
            .collect();
        let _ = write!(out, "\n## {arch}\n\n{}", table(&header, &body));
    }
    out
}

pub fn best_summary(rows: &[ResultRow]) -> String {
    match best_row(rows) {
        Some(i) => {
            let r = &rows[i];
            let (acc, loss, epochs) = r.metrics().expect("best row succeeded");
            format!(
                "best: {} / {} / lr {}\naccuracy_pct: {acc}\nloss: {loss}\nepochs_run: {epochs}\nrow: {}\n",
                r.architecture,
                r.optimizer,
                r.lr,
                i + 1
            )
        }
        None => "best: none, every cell failed\n".into(),
    }
}

/// Writes `results.csv`, `results.md`, `best.txt`, plus `timings.csv` when
/// `record_seconds` is set and `failures.txt` whenever a cell failed. Wall
/// time stays out of every CSV unless asked for, so reruns are byte-identical.
pub fn emit_report(rows: &[ResultRow], out_dir: &Path, record_seconds: bool) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Invalid("no result rows to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("results.csv"), results_csv(rows, record_seconds))?;
    write(&out_dir.join("results.md"), results_markdown(rows, record_seconds))?;
    write(&out_dir.join("best.txt"), best_summary(rows))?;
    if record_seconds && rows.iter().all(|r| r.seconds.is_some()) {
        let mut t = String::from("architecture,optimizer,lr,seconds\n");
        for r in rows {
            let _ = writeln!(t, "{},{},{},{:.3}", r.architecture, r.optimizer, r.lr, r.seconds.unwrap_or(0.0));
        }
        write(&out_dir.join("timings.csv"), t)?;
    }
    let failures: Vec<String> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match &r.status {
            CellStatus::Failed { reason } => Some(format!(
                "row {}: {} / {} / lr {}: {reason}\n",
                i + 1,
                r.architecture,
                r.optimizer,
                r.lr
            )),
            CellStatus::Done { .. } => None,
        })
        .collect();
    let failures_path = out_dir.join("failures.txt");
    let reasons_known = !rows
        .iter()
        .any(|r| matches!(&r.status, CellStatus::Failed { reason } if reason == UNKNOWN_REASON));
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|e| Error::io(&failures_path, e))?;
        }
    } else if reasons_known {
        write(&failures_path, failures.concat())?;
    }
    Ok(())
}
