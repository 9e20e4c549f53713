//! Training loop with confusion-driven metric regeneration.
//!
//! Epoch 0 always trains under the identity metric. At the end of each
//! epoch the epoch's training-set confusion counts are normalized, folded
//! into the EMA, and a metric is built from the EMA. Curved losses train
//! the next epoch under that metric; flat losses ignore it but it is still
//! exported, so any run reports the class geometry its classifier implies.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use curved_label::confusion::metric_from_history;
use curved_label::metric::OffDiagonalSummary;
use curved_label::{
    data, distance_report, Batch, ConfusionAccumulator, Dataset, EmaState, Gradients, Metric,
    Network, NetworkCheckpoint, TrainState,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Cadence, ExperimentConfig};
use crate::error::{HarnessError, Result};

pub const REPORTS_FILE: &str = "epochs.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    /// Mean per-example training loss over the epoch, measured before each
    /// step.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Training-set confusion counts of this epoch (rows = true class).
    pub confusion: Vec<Vec<u64>>,
    /// Off-diagonal summary of the metric the loss used at the start of the
    /// epoch.
    pub metric_in_use: OffDiagonalSummary,
    /// Off-diagonal summary of the metric built at the end of the epoch;
    /// matches the exported metric file.
    pub metric_exported: OffDiagonalSummary,
    pub batch_losses: Vec<f64>,
    /// Examples whose loss gradient hit the log clamp.
    pub clamped: usize,
    /// Excluded from the serialized stream so reports stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    /// Completed epochs.
    pub epoch: u64,
    pub network: NetworkCheckpoint,
    pub velocity: Gradients,
    pub ema: EmaState,
    pub metric_in_use: Metric,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<EpochReport>,
    pub network: Network,
    pub ema: EmaState,
    /// Metric built from the EMA after the final epoch.
    pub final_metric: Metric,
    /// Ground-truth superclass map of generated data.
    pub superclass_of: Option<Vec<usize>>,
}

impl RunOutcome {
    pub fn final_test_accuracy(&self) -> f64 {
        self.reports.last().map_or(0.0, |r| r.test_accuracy)
    }
}

/// One epoch's output from a [`Session`].
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub report: EpochReport,
    pub exported_metric: Metric,
}

/// Shuffling seed for one epoch; independent of earlier epochs so resumed
/// runs replay exactly.
fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ (epoch.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// An in-progress training run.
pub struct Session {
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    identity: Metric,
    state: TrainState,
    ema: EmaState,
    metric_in_use: Metric,
}

impl Session {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = prepare_data(cfg)?;
        let k = train.classes();
        let network = Network::init(&cfg.layer_dims(train.dim(), k), cfg.seed)?;
        Ok(Self {
            identity: Metric::identity(k)?,
            metric_in_use: Metric::identity(k)?,
            ema: EmaState::new(k, cfg.metric.lambda)?,
            state: TrainState::new(network, cfg.seed),
            cfg: cfg.clone(),
            train,
            test,
        })
    }

    pub fn from_checkpoint(cfg: &ExperimentConfig, ck: &RunCheckpoint) -> Result<Self> {
        let mut session = Self::new(cfg)?;
        let network = Network::from_checkpoint(&ck.network)?;
        if network.layer_dims() != session.state.network.layer_dims() {
            return Err(HarnessError::Validation(
                "checkpoint network shape does not match the config".into(),
            ));
        }
        if ck.ema.k() != session.train.classes() || ck.metric_in_use.k() != session.train.classes() {
            return Err(HarnessError::Validation(
                "checkpoint class count does not match the data".into(),
            ));
        }
        session.state = TrainState {
            network,
            velocity: ck.velocity.clone(),
            epoch: ck.epoch,
            rng_seed: cfg.seed,
        };
        session.ema = ck.ema.clone();
        session.metric_in_use = ck.metric_in_use.clone();
        Ok(session)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.state.epoch
    }

    pub fn network(&self) -> &Network {
        &self.state.network
    }

    pub fn ema(&self) -> &EmaState {
        &self.ema
    }

    pub fn metric_in_use(&self) -> &Metric {
        &self.metric_in_use
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn test_data(&self) -> &Dataset {
        &self.test
    }

    pub fn checkpoint(&self) -> RunCheckpoint {
        RunCheckpoint {
            epoch: self.state.epoch,
            network: self.state.network.to_checkpoint(self.state.epoch),
            velocity: self.state.velocity.clone(),
            ema: self.ema.clone(),
            metric_in_use: self.metric_in_use.clone(),
        }
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        accuracy(&self.state.network, &self.test)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let started = Instant::now();
        let epoch = self.state.epoch;
        let k = self.train.classes();
        let curved = self.cfg.loss.is_curved();
        let in_use_summary = self.metric_in_use.off_diagonal_summary();

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(self.cfg.seed, epoch)));

        let mut epoch_counts = ConfusionAccumulator::new(k);
        let mut batch_losses = Vec::new();
        let mut loss_sum = 0.0;
        let mut clamped = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let inputs = chunk.iter().map(|&i| self.train.example(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| self.train.label(i)).collect();
            let batch = Batch::new(inputs, labels.clone())?;
            let loss_metric = if curved { &self.metric_in_use } else { &self.identity };
            let outcome = self
                .state
                .network
                .evaluate_batch(&batch, self.cfg.loss, loss_metric)
                .map_err(|e| {
                    HarnessError::Runtime(format!(
                        "epoch {epoch}: {e}; aborting, earlier artifacts are kept"
                    ))
                })?;
            let mut batch_counts = ConfusionAccumulator::new(k);
            for (&truth, &pred) in labels.iter().zip(&outcome.predictions) {
                epoch_counts.record(truth, pred)?;
                batch_counts.record(truth, pred)?;
            }
            self.state
                .sgd_step(&outcome.grads, self.cfg.lr, self.cfg.momentum)
                .map_err(|e| HarnessError::Runtime(format!("epoch {epoch}: {e}")))?;
            loss_sum += outcome.mean_loss * chunk.len() as f64;
            batch_losses.push(outcome.mean_loss);
            clamped += outcome.clamped;

            if self.cfg.cadence == Cadence::Batch {
                self.ema.update(&batch_counts.normalize())?;
                // The first epoch stays flat whatever the cadence.
                if curved && epoch > 0 {
                    self.metric_in_use = metric_from_history(&self.ema, &self.cfg.metric)?;
                }
            }
        }
        if self.cfg.cadence == Cadence::Epoch {
            self.ema.update(&epoch_counts.normalize())?;
        }
        let exported = metric_from_history(&self.ema, &self.cfg.metric)?;
        if curved {
            self.metric_in_use = exported.clone();
        }
        self.state.epoch += 1;

        let test_accuracy = accuracy(&self.state.network, &self.test)?;
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / self.train.len() as f64,
            train_accuracy: epoch_counts.accuracy(),
            test_accuracy,
            confusion: epoch_counts.to_rows(),
            metric_in_use: in_use_summary,
            metric_exported: exported.off_diagonal_summary(),
            batch_losses,
            clamped,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        Ok(EpochRecord {
            report,
            exported_metric: exported,
        })
    }

    fn outcome(&self, reports: Vec<EpochReport>) -> Result<RunOutcome> {
        Ok(RunOutcome {
            reports,
            network: self.state.network.clone(),
            ema: self.ema.clone(),
            final_metric: metric_from_history(&self.ema, &self.cfg.metric)?,
            superclass_of: self.train.superclass_of().map(<[usize]>::to_vec),
        })
    }
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let ds = cfg.load_data()?;
    Ok(data::split(&ds, cfg.train_frac, cfg.seed)?)
}

pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let inputs: Vec<&[f64]> = (0..ds.len()).map(|i| ds.example(i)).collect();
    let preds = net.predict(&inputs)?;
    let correct = preds
        .iter()
        .zip(ds.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Trains without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut session = Session::new(cfg)?;
    let mut reports = Vec::with_capacity(cfg.epochs as usize);
    while session.epoch() < cfg.epochs {
        reports.push(session.run_epoch()?.report);
    }
    session.outcome(reports)
}

/// Trains and writes the run directory `cfg.output_dir`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = output_dir(cfg)?;
    fs::create_dir_all(dir.join("metrics"))?;
    fs::create_dir_all(dir.join("ema"))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    File::create(dir.join(REPORTS_FILE))?;
    File::create(dir.join("timing.csv"))?.write_all(b"epoch,wall_time_secs\n")?;
    let session = Session::new(cfg)?;
    drive(session, &dir, Vec::new())
}

/// Continues the run in `run_dir` from its checkpoint, optionally
/// extending the epoch budget.
pub fn resume_train(run_dir: &Path, epochs: Option<u64>) -> Result<RunOutcome> {
    let mut cfg = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.output_dir = Some(run_dir.to_path_buf());
    let ck: RunCheckpoint =
        serde_json::from_str(&fs::read_to_string(run_dir.join(CHECKPOINT_FILE))?)?;
    let session = Session::from_checkpoint(&cfg, &ck)?;

    // Keep only the reports the checkpoint covers, then append.
    let previous = read_reports(&run_dir.join(REPORTS_FILE))?;
    let kept: Vec<EpochReport> = previous.into_iter().take(ck.epoch as usize).collect();
    let mut file = File::create(run_dir.join(REPORTS_FILE))?;
    for r in &kept {
        writeln!(file, "{}", serde_json::to_string(r)?)?;
    }
    fs::write(run_dir.join(CONFIG_FILE), cfg.to_toml())?;
    drive(session, run_dir, kept)
}

pub fn read_reports(path: &Path) -> Result<Vec<EpochReport>> {
    let file = File::open(path)?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.output_dir
        .clone()
        .ok_or_else(|| HarnessError::Validation("an output directory is required".into()))
}

fn metric_provenance(cfg: &ExperimentConfig, epoch: u64, m: &Metric) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("epoch".into(), epoch.to_string());
    p.insert("loss".into(), cfg.loss.to_string());
    p.insert("scale".into(), format!("{:?}", cfg.metric.scale));
    p.insert("lambda".into(), format!("{:?}", cfg.metric.lambda));
    if let Some(cap) = cfg.metric.clamp_max {
        p.insert("clamp_max".into(), format!("{cap:?}"));
    }
    p.insert("source".into(), "ema of training-set confusion".into());
    p.insert("min_eigenvalue".into(), format!("{:?}", m.min_eigenvalue()));
    p
}

fn drive(mut session: Session, dir: &Path, mut reports: Vec<EpochReport>) -> Result<RunOutcome> {
    let cfg = session.config().clone();
    let mut stream = OpenOptions::new().append(true).open(dir.join(REPORTS_FILE))?;
    let mut timing = OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("timing.csv"))?;
    while session.epoch() < cfg.epochs {
        let record = match session.run_epoch() {
            Ok(r) => r,
            Err(e) => {
                fs::write(
                    dir.join("summary.txt"),
                    format!("run aborted after {} epoch(s): {e}\n", session.epoch()),
                )?;
                return Err(e);
            }
        };
        let epoch = record.report.epoch;
        writeln!(stream, "{}", serde_json::to_string(&record.report)?)?;
        stream.flush()?;
        writeln!(timing, "{epoch},{}", record.report.wall_time_secs)?;
        fs::write(
            dir.join("metrics").join(format!("epoch_{epoch:04}.csv")),
            record.exported_metric.to_csv(),
        )?;
        fs::write(
            dir.join("ema").join(format!("epoch_{epoch:04}.json")),
            session.ema().to_json(),
        )?;
        fs::write(
            dir.join(CHECKPOINT_FILE),
            serde_json::to_string(&session.checkpoint())?,
        )?;
        reports.push(record.report);
    }
    let outcome = session.outcome(reports)?;
    write_final_artifacts(&session, &outcome, dir)?;
    Ok(outcome)
}

fn write_final_artifacts(session: &Session, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    let cfg = session.config();
    let last = outcome.reports.last();
    let epoch = last.map_or(0, |r| r.epoch);
    let m = &outcome.final_metric;
    if m.min_eigenvalue() < 0.0 {
        eprintln!(
            "note: final metric is not positive semidefinite (min eigenvalue {:e})",
            m.min_eigenvalue()
        );
    }
    fs::write(dir.join("metric_final.csv"), m.to_csv())?;
    fs::write(
        dir.join("metric_final.json"),
        m.to_json(metric_provenance(cfg, epoch, m)),
    )?;
    fs::write(dir.join("ema_final.json"), outcome.ema.to_json())?;
    fs::write(dir.join("distance_table.csv"), distance_report(m).to_csv())?;
    fs::write(
        dir.join("network.json"),
        serde_json::to_string_pretty(&outcome.network.to_checkpoint(session.epoch()))?,
    )?;
    if let Some(r) = last {
        let counts = ConfusionAccumulator::from_counts(r.confusion.clone())?;
        fs::write(dir.join("confusion_final.csv"), counts.to_csv())?;
    }
    fs::write(dir.join("summary.txt"), summary_text(cfg, outcome))?;
    Ok(())
}

fn summary_text(cfg: &ExperimentConfig, outcome: &RunOutcome) -> String {
    let mut s = String::new();
    s.push_str(&format!("loss: {}\n", cfg.loss));
    s.push_str(&format!(
        "metric: scale={:?} lambda={:?} cadence={:?}\n",
        cfg.metric.scale, cfg.metric.lambda, cfg.cadence
    ));
    s.push_str(&format!("epochs: {}\n", outcome.reports.len()));
    if let Some(r) = outcome.reports.last() {
        s.push_str(&format!("final train loss: {:.6}\n", r.train_loss));
        s.push_str(&format!("final train accuracy: {:.4}\n", r.train_accuracy));
        s.push_str(&format!("final test accuracy: {:.4}\n", r.test_accuracy));
    }
    let g = outcome.final_metric.off_diagonal_summary();
    s.push_str(&format!(
        "final metric off-diagonal: min={:.6} mean={:.6} max={:.6}\n",
        g.min, g.mean, g.max
    ));
    let pairs = distance_report(&outcome.final_metric).sorted_pairs();
    s.push_str("closest class pairs:\n");
    for (a, b, d) in pairs.iter().take(3) {
        s.push_str(&format!("  {a}-{b}: {d:.6}\n"));
    }
    s
}
