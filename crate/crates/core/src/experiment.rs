//! End-to-end experiment: dataset, features, split, partition, federated
//! rounds with per-round evaluation, plus the file formats around it.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::esn::{argmax, init_reservoir, run_sequence, ReadoutWeights, ReservoirConfig, ReservoirWeights};
use crate::features::{record_sequence, Stft, MIN_SAMPLES};
use crate::federated::{plan_round, run_round, Client, Regularization, Server, Shard};
use crate::par::{try_map_range, Execution};
use crate::partition::{partition_dirichlet, partition_iid, split_train_test, Partition, SchemeKind};
use crate::signal::{entry_path, read_manifest, read_record_file, DatasetSpec, JammerClass, SignalParams};

const MODEL_MAGIC: &[u8; 4] = b"FRCM";
pub const METRICS_HEADER: &str = "round,loss,accuracy,participants,cumulative_samples,wall_time_ms";

/// Input scaling used by experiments unless configured otherwise. The
/// normalized spectrogram inputs lie in [0, 1]; at this scale the reservoir
/// operates in its nonlinear range.
pub const DEFAULT_INPUT_SCALING: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub signal: SignalParams,
    /// `input_dim` is fixed by the feature pipeline and `seed` follows [`ExperimentConfig::seed`].
    pub reservoir: ReservoirConfig,
    pub per_class: usize,
    pub beta: f64,
    pub n_clients: usize,
    pub fraction: f64,
    pub rounds: usize,
    pub scheme: SchemeKind,
    pub alpha: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub client_side_regularization: bool,
    pub execution: Execution,
    /// Read records from this directory instead of synthesizing them.
    pub data_dir: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            signal: SignalParams::default(),
            reservoir: ReservoirConfig {
                input_scaling: DEFAULT_INPUT_SCALING,
                ..ReservoirConfig::default()
            },
            per_class: 500,
            beta: 1e-2,
            n_clients: 10,
            fraction: 0.9,
            rounds: 50,
            scheme: SchemeKind::Dirichlet,
            alpha: 0.1,
            train_fraction: 0.8,
            seed: 0,
            client_side_regularization: false,
            execution: Execution::Parallel,
            data_dir: None,
            model_out: None,
            metrics_out: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key} must be true or false, got {value:?}"))),
    }
}

impl ExperimentConfig {
    /// Every key accepted in a configuration file.
    pub const KEYS: &'static [&'static str] = &[
        "sample_rate",
        "duration_samples",
        "snr_db",
        "jsr_min_db",
        "jsr_max_db",
        "chip_rate",
        "offset_fraction",
        "per_class",
        "units",
        "spectral_radius",
        "leaking_rate",
        "input_scaling",
        "input_connectivity",
        "recurrent_connectivity",
        "washout",
        "beta",
        "n_clients",
        "fraction",
        "rounds",
        "scheme",
        "alpha",
        "train_fraction",
        "seed",
        "client_side_regularization",
        "execution",
        "data_dir",
        "model_out",
        "metrics_out",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sample_rate" => self.signal.sample_rate = parse_value(key, value)?,
            "duration_samples" => self.signal.duration_samples = parse_value(key, value)?,
            "snr_db" => self.signal.snr_db = parse_value(key, value)?,
            "jsr_min_db" => self.signal.jsr_db.lo = parse_value(key, value)?,
            "jsr_max_db" => self.signal.jsr_db.hi = parse_value(key, value)?,
            "chip_rate" => self.signal.chip_rate = parse_value(key, value)?,
            "offset_fraction" => self.signal.class_params.offset_fraction = parse_value(key, value)?,
            "per_class" => self.per_class = parse_value(key, value)?,
            "units" => self.reservoir.units = parse_value(key, value)?,
            "spectral_radius" => self.reservoir.spectral_radius = parse_value(key, value)?,
            "leaking_rate" => self.reservoir.leaking_rate = parse_value(key, value)?,
            "input_scaling" => self.reservoir.input_scaling = parse_value(key, value)?,
            "input_connectivity" => self.reservoir.input_connectivity = parse_value(key, value)?,
            "recurrent_connectivity" => self.reservoir.recurrent_connectivity = parse_value(key, value)?,
            "washout" => self.reservoir.washout = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "n_clients" => self.n_clients = parse_value(key, value)?,
            "fraction" => self.fraction = parse_value(key, value)?,
            "rounds" => self.rounds = parse_value(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "client_side_regularization" => self.client_side_regularization = parse_bool(key, value)?,
            "execution" => {
                self.execution = match value.to_ascii_lowercase().as_str() {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(Error::Config(format!("execution must be parallel or sequential, got {value:?}"))),
                }
            }
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "model_out" => self.model_out = Some(PathBuf::from(value)),
            "metrics_out" => self.metrics_out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            config.set(key, value)?;
        }
        config.sync_seeds();
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Renders the configuration in the format [`ExperimentConfig::parse`] reads.
    pub fn to_config_string(&self) -> String {
        let r = &self.reservoir;
        let s = &self.signal;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("sample_rate", s.sample_rate.to_string());
        line("duration_samples", s.duration_samples.to_string());
        line("snr_db", s.snr_db.to_string());
        line("jsr_min_db", s.jsr_db.lo.to_string());
        line("jsr_max_db", s.jsr_db.hi.to_string());
        line("chip_rate", s.chip_rate.to_string());
        line("offset_fraction", s.class_params.offset_fraction.to_string());
        line("per_class", self.per_class.to_string());
        line("units", r.units.to_string());
        line("spectral_radius", r.spectral_radius.to_string());
        line("leaking_rate", r.leaking_rate.to_string());
        line("input_scaling", r.input_scaling.to_string());
        line("input_connectivity", r.input_connectivity.to_string());
        line("recurrent_connectivity", r.recurrent_connectivity.to_string());
        line("washout", r.washout.to_string());
        line("beta", self.beta.to_string());
        line("n_clients", self.n_clients.to_string());
        line("fraction", self.fraction.to_string());
        line("rounds", self.rounds.to_string());
        let scheme = match self.scheme {
            SchemeKind::Iid => "iid",
            SchemeKind::Dirichlet => "dirichlet",
        };
        line("scheme", scheme.to_string());
        line("alpha", self.alpha.to_string());
        line("train_fraction", self.train_fraction.to_string());
        line("seed", self.seed.to_string());
        line("client_side_regularization", self.client_side_regularization.to_string());
        let exec = match self.execution {
            Execution::Parallel => "parallel",
            Execution::Sequential => "sequential",
        };
        line("execution", exec.to_string());
        for (k, v) in [("data_dir", &self.data_dir), ("model_out", &self.model_out), ("metrics_out", &self.metrics_out)] {
            if let Some(p) = v {
                line(k, p.display().to_string());
            }
        }
        out
    }

    /// Propagates the experiment seed to the signal and reservoir settings.
    pub fn sync_seeds(&mut self) {
        self.signal.seed = self.seed;
        self.reservoir.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        if self.signal.duration_samples < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "duration_samples {} is below the {MIN_SAMPLES} the spectrogram needs",
                self.signal.duration_samples
            )));
        }
        if self.reservoir.input_dim != 256 {
            return Err(Error::Config("input_dim is fixed at 256 by the feature pipeline".into()));
        }
        self.reservoir.validate()?;
        if self.reservoir.washout >= 256 {
            return Err(Error::Config(format!(
                "washout {} must be below the 256 sequence steps",
                self.reservoir.washout
            )));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and positive", self.beta)));
        }
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {} must lie in (0, 1]", self.fraction)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.scheme == SchemeKind::Dirichlet && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be finite and positive", self.alpha)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean squared error of the scores against one-hot targets on the test set.
    pub loss: f64,
    pub accuracy: f64,
    pub participants: usize,
    pub cumulative_samples: u64,
    /// Milliseconds since the first round started, taken at the end of this round.
    pub wall_time_ms: f64,
}

/// Everything a run produces besides the files it writes.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub metrics: Vec<RoundMetrics>,
    pub readout: ReadoutWeights,
    /// `features × samples`, one column per dataset record.
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub partition: Partition,
    /// Samples folded into the statistics the final readout was solved from.
    pub delivered: Vec<usize>,
}

/// One-hot targets, `classes × labels.len()`.
pub fn one_hot(labels: &[usize], classes: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(classes, labels.len());
    for (n, &l) in labels.iter().enumerate() {
        y[(l, n)] = 1.0;
    }
    y
}

/// Copies the listed columns into a new matrix.
pub fn select_columns(m: &DMatrix<f64>, columns: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), columns.len(), |r, c| m[(r, columns[c])])
}

/// `(loss, accuracy)` of `theta` on feature columns `phi` with `labels`.
pub fn evaluate(theta: &ReadoutWeights, phi: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, f64)> {
    if labels.is_empty() || phi.ncols() == 0 {
        return Err(Error::Input("evaluation needs a non-empty test set".into()));
    }
    if phi.ncols() != labels.len() {
        return Err(Error::Input(format!(
            "{} feature columns but {} labels",
            phi.ncols(),
            labels.len()
        )));
    }
    if phi.nrows() != theta.features() {
        return Err(Error::Input(format!(
            "features have dimension {}, readout expects {}",
            phi.nrows(),
            theta.features()
        )));
    }
    let classes = theta.classes();
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside the {classes} readout classes")));
    }
    let scores = theta.theta() * phi;
    let mut squared = 0.0;
    let mut correct = 0usize;
    for (n, &label) in labels.iter().enumerate() {
        let column: Vec<f64> = scores.column(n).iter().copied().collect();
        for (c, s) in column.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            squared += (s - target).powi(2);
        }
        if argmax(&column) == label {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    Ok((squared / (n * classes as f64), correct as f64 / n))
}

/// Features of records `0..n`, computed in parallel from `load(i)`.
fn extract_features<F>(weights: &ReservoirWeights, n: usize, exec: Execution, load: F) -> Result<DMatrix<f64>>
where
    F: Fn(usize) -> Result<Vec<rustfft::num_complex::Complex64>> + Sync + Send,
{
    let stft = Stft::default();
    let columns = try_map_range(exec, n, |i| {
        let samples = load(i)?;
        let seq = record_sequence(&stft, &samples)?;
        Ok(run_sequence(weights, &seq.steps)?.into_vec())
    })?;
    let dim = weights.feature_dim();
    Ok(DMatrix::from_iterator(dim, n, columns.into_iter().flatten()))
}

/// Features and labels of every record in a dataset directory.
pub fn features_from_dir(dir: &Path, weights: &ReservoirWeights, exec: Execution) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let entries = read_manifest(dir)?;
    if entries.is_empty() {
        return Err(Error::Input(format!("dataset {} has no records", dir.display())));
    }
    let labels = entries.iter().map(|e| e.label.label()).collect();
    let phi = extract_features(weights, entries.len(), exec, |i| read_record_file(&entry_path(dir, &entries[i])))?;
    Ok((phi, labels))
}

fn dataset_features(config: &ExperimentConfig, weights: &ReservoirWeights) -> Result<(DMatrix<f64>, Vec<usize>)> {
    match &config.data_dir {
        Some(dir) => features_from_dir(dir, weights, config.execution),
        None => {
            let spec = DatasetSpec::new(config.signal.clone(), config.per_class)?;
            let phi = extract_features(weights, spec.len(), config.execution, |i| Ok(spec.record(i)?.samples))?;
            Ok((phi, spec.labels()))
        }
    }
}

/// Splits `items` into `parts` contiguous chunks whose sizes differ by at most one.
fn equal_shards(items: &[usize], parts: usize) -> Vec<&[usize]> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut at = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let chunk = &items[at..at + len];
            at += len;
            chunk
        })
        .collect()
}

fn with_round(round: usize, err: Error) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!("round {round}: {msg}")),
        other => other,
    }
}

/// Runs a full experiment and writes the configured model and metrics files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut config = config.clone();
    config.sync_seeds();
    config.validate()?;

    let weights = init_reservoir(&config.reservoir)?;
    let (phi, labels) = dataset_features(&config, &weights)?;
    let classes = JammerClass::COUNT;
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} is not a jammer class")));
    }
    let features = phi.nrows();
    let targets = one_hot(&labels, classes);

    let (train, test) = split_train_test(&labels, config.train_fraction, config.seed)?;
    let partition = match config.scheme {
        SchemeKind::Iid => partition_iid(&train, &labels, config.n_clients, config.seed)?,
        SchemeKind::Dirichlet => partition_dirichlet(&train, &labels, config.n_clients, config.alpha, config.seed)?,
    };
    let phi_test = select_columns(&phi, &test);
    let test_labels: Vec<usize> = test.iter().map(|&i| labels[i]).collect();

    let regularization = if config.client_side_regularization {
        Regularization::ClientSide
    } else {
        Regularization::Server
    };
    let mut server = Server::new(classes, features, config.n_clients, config.beta, regularization)?;
    let mut clients: Vec<Client> = (0..config.n_clients)
        .map(|u| Client::new(u as u32, classes, features))
        .collect();
    let shards: Vec<Vec<&[usize]>> = partition
        .assignments
        .iter()
        .map(|held| equal_shards(held, config.rounds))
        .collect();

    let start = Instant::now();
    let mut metrics = Vec::with_capacity(config.rounds);
    let mut readout = None;
    for round in 0..config.rounds {
        for (client, own) in clients.iter_mut().zip(&shards) {
            let ids = own[round];
            client.receive(Shard {
                phi: select_columns(&phi, ids),
                y: select_columns(&targets, ids),
                sample_ids: ids.to_vec(),
            });
        }
        let plan = plan_round(round, config.n_clients, config.fraction, config.seed)?;
        let (agg, theta) = run_round(&mut server, &mut clients, &plan, config.execution).map_err(|e| with_round(round, e))?;
        let (loss, accuracy) = evaluate(&theta, &phi_test, &test_labels)?;
        metrics.push(RoundMetrics {
            round,
            loss,
            accuracy,
            participants: plan.participants.len(),
            cumulative_samples: agg.total_samples,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        readout = Some(theta);
    }
    let readout = readout.expect("at least one round");

    if let Some(path) = &config.model_out {
        write_model(&readout, path)?;
    }
    if let Some(path) = &config.metrics_out {
        write_metrics(&metrics, path)?;
    }
    let mut delivered: Vec<usize> = clients.iter().flat_map(|c| c.ingested().iter().copied()).collect();
    delivered.sort_unstable();
    Ok(ExperimentReport {
        metrics,
        readout,
        features: phi,
        labels,
        train,
        test,
        partition,
        delivered,
    })
}

pub fn write_metrics(metrics: &[RoundMetrics], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{METRICS_HEADER}").map_err(io)?;
    for m in metrics {
        writeln!(
            out,
            "{},{:.6},{:.6},{},{},{:.3}",
            m.round, m.loss, m.accuracy, m.participants, m.cumulative_samples, m.wall_time_ms
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(METRICS_HEADER) {
        return Err(Error::format("metrics", "missing or wrong header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::format("metrics", format!("line {}", n + 2));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(bad());
            }
            Ok(RoundMetrics {
                round: cols[0].parse().map_err(|_| bad())?,
                loss: cols[1].parse().map_err(|_| bad())?,
                accuracy: cols[2].parse().map_err(|_| bad())?,
                participants: cols[3].parse().map_err(|_| bad())?,
                cumulative_samples: cols[4].parse().map_err(|_| bad())?,
                wall_time_ms: cols[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn model_to_bytes(theta: &ReadoutWeights) -> Vec<u8> {
    let m = theta.theta();
    let mut out = Vec::with_capacity(12 + 8 * m.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for r in 0..m.nrows() {
        for v in m.row(r).iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ReadoutWeights> {
    if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::format("model", "missing FRCM header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12));
    if expected != Some(bytes.len()) {
        return Err(Error::format("model", format!("{rows}x{cols} does not match {} bytes", bytes.len())));
    }
    let values = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    ReadoutWeights::new(DMatrix::from_row_iterator(rows, cols, values))
}

pub fn write_model(theta: &ReadoutWeights, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(theta)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ReadoutWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// Default experiment shrunk for quick runs. Record length is fixed by the
/// spectrogram, so only the dataset, reservoir and round count shrink.
pub fn small_config(per_class: usize, units: usize, rounds: usize) -> ExperimentConfig {
    ExperimentConfig {
        per_class,
        rounds,
        reservoir: ReservoirConfig {
            units,
            input_scaling: DEFAULT_INPUT_SCALING,
            ..ReservoirConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esn::solve_readout;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::parse("units = 50\n# comment\nscheme = iid  # trailing\nbeta=0.5\nseed = 9\n").unwrap();
        assert_eq!(cfg.reservoir.units, 50);
        assert_eq!(cfg.scheme, SchemeKind::Iid);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!((cfg.reservoir.seed, cfg.signal.seed), (9, 9));

        for bad in ["bogus = 1", "units = x", "units = 5\nunits = 6", "rounds = 0", "fraction = 1.5", "beta = 0", "no equals sign", "scheme = other", "recurrent_connectivity = 600"] {
            let err = ExperimentConfig::parse(bad).unwrap_err();
            assert!(err.is_configuration(), "{bad}: {err}");
        }
    }

    #[test]
    fn config_text_roundtrip() {
        let mut cfg = small_config(3, 40, 4);
        cfg.data_dir = Some("/tmp/x".into());
        cfg.execution = Execution::Sequential;
        cfg.sync_seeds();
        assert_eq!(ExperimentConfig::parse(&cfg.to_config_string()).unwrap(), cfg);
        let text = cfg.to_config_string();
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        assert!(keys.iter().all(|k| ExperimentConfig::KEYS.contains(k)));
    }

    #[test]
    fn evaluate_trivial_cases() {
        let labels = vec![0, 1, 2, 3, 4, 5];
        let phi = DMatrix::<f64>::identity(6, 6);
        let perfect = ReadoutWeights::new(DMatrix::identity(6, 6)).unwrap();
        assert_eq!(evaluate(&perfect, &phi, &labels).unwrap(), (0.0, 1.0));

        let zero = ReadoutWeights::new(DMatrix::zeros(6, 6)).unwrap();
        let (loss, acc) = evaluate(&zero, &phi, &labels).unwrap();
        assert!((loss - 1.0 / 6.0).abs() < 1e-15);
        assert!((acc - 1.0 / 6.0).abs() < 1e-15);

        assert!(matches!(evaluate(&zero, &DMatrix::zeros(6, 0), &[]), Err(Error::Input(_))));
    }

    #[test]
    fn evaluate_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = ReadoutWeights::new(DMatrix::from_fn(6, 9, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let phi = DMatrix::from_fn(9, 200, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..6)).collect();
        let (loss, acc) = evaluate(&theta, &phi, &labels).unwrap();
        let mut hits = 0;
        let mut sq = 0.0;
        for n in 0..200 {
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..6 {
                let s: f64 = (0..9).map(|j| theta.theta()[(c, j)] * phi[(j, n)]).sum();
                sq += (s - if c == labels[n] { 1.0 } else { 0.0 }).powi(2);
                if s > best.0 {
                    best = (s, c);
                }
            }
            hits += usize::from(best.1 == labels[n]);
        }
        assert_eq!(acc, hits as f64 / 200.0);
        assert!((loss - sq / 1200.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{METRICS_HEADER}\n"));
        let rows: Vec<RoundMetrics> = (0..50)
            .map(|r| RoundMetrics {
                round: r,
                loss: 1.0 / (r as f64 + 3.0),
                accuracy: r as f64 / 50.0,
                participants: 9,
                cumulative_samples: 10 * r as u64,
                wall_time_ms: r as f64 * 1.5,
            })
            .collect();
        write_metrics(&rows, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 51);
        let back = read_metrics(&path).unwrap();
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.round, b.round);
            assert!((a.loss - b.loss).abs() <= 5e-7);
            assert!((a.accuracy - b.accuracy).abs() <= 5e-7);
            assert_eq!(a.cumulative_samples, b.cumulative_samples);
        }
    }

    #[test]
    fn model_roundtrip() {
        let theta = ReadoutWeights::new(DMatrix::from_fn(6, 11, |r, c| r as f64 - 0.25 * c as f64)).unwrap();
        let bytes = model_to_bytes(&theta);
        assert_eq!(&bytes[..4], b"FRCM");
        assert_eq!(model_from_bytes(&bytes).unwrap(), theta);
        assert!(model_from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn shards_are_equal_and_complete() {
        let items: Vec<usize> = (0..23).collect();
        let parts = equal_shards(&items, 5);
        let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert_eq!(parts.concat(), items);
        assert!(equal_shards(&items[..2], 4).iter().filter(|p| p.is_empty()).count() == 2);
    }

    #[test]
    fn single_round_full_participation_is_centralized() {
        let mut cfg = small_config(4, 30, 1);
        cfg.fraction = 1.0;
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.metrics.len(), 1);
        let y = one_hot(&report.train.iter().map(|&i| report.labels[i]).collect::<Vec<_>>(), 6);
        let central = solve_readout(&select_columns(&report.features, &report.train), &y, cfg.beta).unwrap();
        let rel = (report.readout.theta() - central.theta()).norm() / central.theta().norm();
        assert!(rel < 1e-10, "{rel}");
        let test_labels: Vec<usize> = report.test.iter().map(|&i| report.labels[i]).collect();
        let (loss, acc) = evaluate(&central, &select_columns(&report.features, &report.test), &test_labels).unwrap();
        assert!((report.metrics[0].loss - loss).abs() < 1e-9);
        assert_eq!(report.metrics[0].accuracy, acc);
    }
}
