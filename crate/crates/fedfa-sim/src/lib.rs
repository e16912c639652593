//! Config resolution and experiment pipelines behind the `fedfa-sim` binary.
//!
//! Everything here is a pure function of the resolved [`ExperimentConfig`]:
//! repeated invocations with the same config produce byte-identical output
//! files. Flags override config-file values; unset keys fall back to
//! per-algorithm defaults; the root seed falls back to the `FEDFA_SEED`
//! environment variable and finally to 42.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedfa::data::{generate_synthetic, load_csv_dataset, FederatedDataset, SyntheticConfig};
use fedfa::federation::{run_experiment, AggregationPolicy, AlgorithmKind, ExperimentResult};
use fedfa::metrics::{accuracy_stats, emit_history, AccuracyStats};
use fedfa::optim::LocalTrainConfig;
use fedfa::rng::derive_seed;
use fedfa::FedError;

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV_VAR: &str = "FEDFA_SEED";

/// CLI-level errors carrying the exit-code contract:
/// 1 = configuration, 2 = data/IO, 3 = numeric (NaN/Inf).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(FedError),
    Numeric(FedError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn classify(err: FedError) -> Self {
        match err.root_cause() {
            FedError::NonFinite(_) => CliError::Numeric(err),
            _ => CliError::Data(err),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(err) => write!(f, "data error: {err}"),
            CliError::Numeric(err) => write!(f, "numeric error: {err}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fedavg,
    Fedprox,
    Fedfa,
}

impl Algorithm {
    pub fn kind(self) -> AlgorithmKind {
        match self {
            Algorithm::Fedavg => AlgorithmKind::FedAvg,
            Algorithm::Fedprox => AlgorithmKind::FedProx,
            Algorithm::Fedfa => AlgorithmKind::FedFa,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedprox => "fedprox",
            Algorithm::Fedfa => "fedfa",
        }
    }

    fn default_lr(self) -> f64 {
        match self {
            Algorithm::Fedfa => 1e-4,
            _ => 0.01,
        }
    }
}

/// Partially specified configuration: the shape of both the JSON config file
/// and the command-line flags. `None` means "not provided".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PartialConfig {
    pub dataset: Option<String>,
    pub algorithm: Option<Algorithm>,
    pub rounds: Option<usize>,
    pub clients_per_round: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub gamma_c: Option<f64>,
    pub gamma_s: Option<f64>,
    pub eta_s: Option<f64>,
    pub round_b: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub prox_mu: Option<f64>,
    pub c_eps: Option<f64>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub output: Option<String>,
    pub n_devices: Option<usize>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub s_min: Option<usize>,
    pub pareto_shape: Option<f64>,
    pub data_alpha: Option<f64>,
    pub data_beta: Option<f64>,
    pub device_column: Option<String>,
    pub split_ratio: Option<f64>,
}

macro_rules! take_over {
    ($merged:ident, $flags:ident, $($field:ident),+ $(,)?) => {
        $( if $flags.$field.is_some() { $merged.$field = $flags.$field.clone(); } )+
    };
}

impl PartialConfig {
    /// Flags override file values.
    pub fn merged_over(file: PartialConfig, flags: PartialConfig) -> PartialConfig {
        let mut merged = file;
        take_over!(
            merged, flags, dataset, algorithm, rounds, clients_per_round, epochs, batch_size,
            lr, gamma_c, gamma_s, eta_s, round_b, alpha, beta, prox_mu, c_eps, seed, eval_every,
            output, n_devices, dim, classes, s_min, pareto_shape, data_alpha, data_beta,
            device_column, split_ratio
        );
        merged
    }
}

/// Loads and parses a JSON config file whose keys match the flag names.
pub fn load_config_file(path: &Path) -> Result<PartialConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config file {}: {e}", path.display())))
}

/// Fully resolved experiment configuration. This struct is echoed verbatim
/// into every summary file, so any emitted result can be re-run from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub clients_per_round: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma_c: f64,
    pub gamma_s: f64,
    pub eta_s: f64,
    pub round_b: usize,
    pub alpha: f64,
    pub beta: f64,
    pub prox_mu: f64,
    pub c_eps: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub output: String,
    pub n_devices: usize,
    pub dim: usize,
    pub classes: usize,
    pub s_min: usize,
    pub pareto_shape: f64,
    pub data_alpha: f64,
    pub data_beta: f64,
    pub iid: bool,
    pub device_column: String,
    pub split_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic { alpha: f64, beta: f64, iid: bool },
    Csv(PathBuf),
}

fn parse_dataset(
    name: &str,
    data_alpha: Option<f64>,
    data_beta: Option<f64>,
) -> Result<DatasetSpec, CliError> {
    let preset = |alpha: f64, beta: f64, iid: bool| -> Result<DatasetSpec, CliError> {
        if data_alpha.is_some() || data_beta.is_some() {
            return Err(CliError::Config(format!(
                "conflicting keys: dataset preset `{name}` fixes `data-alpha`/`data-beta`"
            )));
        }
        Ok(DatasetSpec::Synthetic { alpha, beta, iid })
    };
    match name {
        "synthetic_iid" => preset(0.0, 0.0, true),
        "synthetic_0_0" => preset(0.0, 0.0, false),
        "synthetic_0.5_0.5" => preset(0.5, 0.5, false),
        "synthetic_1_1" => preset(1.0, 1.0, false),
        "synthetic" => {
            let alpha = data_alpha.ok_or_else(|| {
                CliError::Config("missing key `data-alpha` for dataset `synthetic`".into())
            })?;
            let beta = data_beta.ok_or_else(|| {
                CliError::Config("missing key `data-beta` for dataset `synthetic`".into())
            })?;
            Ok(DatasetSpec::Synthetic { alpha, beta, iid: false })
        }
        other => {
            if let Some(path) = other.strip_prefix("csv:") {
                if data_alpha.is_some() || data_beta.is_some() {
                    return Err(CliError::Config(
                        "conflicting keys: `data-alpha`/`data-beta` do not apply to csv datasets"
                            .into(),
                    ));
                }
                Ok(DatasetSpec::Csv(PathBuf::from(path)))
            } else {
                Err(CliError::Config(format!(
                    "invalid value for `dataset`: `{other}` (expected synthetic_iid, \
                     synthetic_0_0, synthetic_0.5_0.5, synthetic_1_1, synthetic, or csv:<path>)"
                )))
            }
        }
    }
}

fn seed_fallback() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "invalid value for `{SEED_ENV_VAR}`: `{text}` is not a 64-bit seed"
            ))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn require<T>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
}

/// Resolves a merged partial configuration into a concrete one, applying
/// per-algorithm defaults and validating every key.
pub fn resolve_config(partial: PartialConfig) -> Result<ExperimentConfig, CliError> {
    let dataset = require(partial.dataset, "dataset")?;
    let algorithm = require(partial.algorithm, "algorithm")?;
    let spec = parse_dataset(&dataset, partial.data_alpha, partial.data_beta)?;

    let lr = partial.lr.unwrap_or_else(|| algorithm.default_lr());
    let gamma_c = partial
        .gamma_c
        .unwrap_or(if algorithm == Algorithm::Fedfa { 0.5 } else { 0.0 });
    let gamma_s = partial
        .gamma_s
        .unwrap_or(if algorithm == Algorithm::Fedfa { 0.5 } else { 0.0 });
    let eta_s = partial.eta_s.unwrap_or(lr);
    let prox_mu = partial
        .prox_mu
        .unwrap_or(if algorithm == Algorithm::Fedprox { 1.0 } else { 0.0 });
    let seed = match partial.seed {
        Some(seed) => seed,
        None => seed_fallback()?,
    };

    let (data_alpha, data_beta, iid) = match &spec {
        DatasetSpec::Synthetic { alpha, beta, iid } => (*alpha, *beta, *iid),
        DatasetSpec::Csv(_) => (0.0, 0.0, false),
    };
    let (dim, classes) = match &spec {
        DatasetSpec::Csv(_) => (
            require(partial.dim, "dim (required for csv datasets)")?,
            require(partial.classes, "classes (required for csv datasets)")?,
        ),
        DatasetSpec::Synthetic { .. } => {
            (partial.dim.unwrap_or(60), partial.classes.unwrap_or(10))
        }
    };

    let cfg = ExperimentConfig {
        dataset,
        algorithm,
        rounds: partial.rounds.unwrap_or(200),
        clients_per_round: partial.clients_per_round.unwrap_or(10),
        epochs: partial.epochs.unwrap_or(20),
        batch_size: partial.batch_size.unwrap_or(10),
        lr,
        gamma_c,
        gamma_s,
        eta_s,
        round_b: partial.round_b.unwrap_or(3),
        alpha: partial.alpha.unwrap_or(0.5),
        beta: partial.beta.unwrap_or(0.5),
        prox_mu,
        c_eps: partial.c_eps.unwrap_or(1e-10),
        seed,
        eval_every: partial.eval_every.unwrap_or(10),
        output: partial.output.unwrap_or_else(|| "fedfa_out".into()),
        n_devices: partial.n_devices.unwrap_or(30),
        dim,
        classes,
        s_min: partial.s_min.unwrap_or(150),
        pareto_shape: partial.pareto_shape.unwrap_or(1.1),
        data_alpha,
        data_beta,
        iid,
        device_column: partial.device_column.unwrap_or_else(|| "device".into()),
        split_ratio: partial.split_ratio.unwrap_or(0.8),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!(
            "invalid value for `{key}`: {msg}"
        )));
        if self.rounds < 1 {
            return bad("rounds", "must be >= 1".into());
        }
        if self.clients_per_round < 1 {
            return bad("clients-per-round", "must be >= 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch-size", "must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.gamma_c) {
            return bad("gamma-c", format!("must be in [0, 1), got {}", self.gamma_c));
        }
        if !(0.0..1.0).contains(&self.gamma_s) {
            return bad("gamma-s", format!("must be in [0, 1), got {}", self.gamma_s));
        }
        if !(self.eta_s > 0.0) || !self.eta_s.is_finite() {
            return bad("eta-s", format!("must be > 0, got {}", self.eta_s));
        }
        if self.round_b < 1 {
            return bad("round-b", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", format!("must be in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", format!("must be in [0, 1], got {}", self.beta));
        }
        if self.algorithm == Algorithm::Fedfa && (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return bad(
                "alpha",
                format!(
                    "alpha + beta must equal 1 for fedfa, got {} + {} = {}",
                    self.alpha,
                    self.beta,
                    self.alpha + self.beta
                ),
            );
        }
        if self.prox_mu < 0.0 || !self.prox_mu.is_finite() {
            return bad("prox-mu", format!("must be >= 0, got {}", self.prox_mu));
        }
        if !(self.c_eps > 0.0) {
            return bad("c-eps", format!("must be > 0, got {}", self.c_eps));
        }
        if self.eval_every < 1 {
            return bad("eval-every", "must be >= 1".into());
        }
        if self.n_devices < 1 {
            return bad("n-devices", "must be >= 1".into());
        }
        if self.clients_per_round > self.n_devices && self.dataset.starts_with("synthetic") {
            return bad(
                "clients-per-round",
                format!("{} exceeds n-devices {}", self.clients_per_round, self.n_devices),
            );
        }
        if self.dim < 1 {
            return bad("dim", "must be >= 1".into());
        }
        if self.classes < 2 {
            return bad("classes", "must be >= 2".into());
        }
        if self.s_min < 2 {
            return bad("s-min", "must be >= 2".into());
        }
        if !(self.pareto_shape > 0.0) {
            return bad("pareto-shape", format!("must be > 0, got {}", self.pareto_shape));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(
                "split-ratio",
                format!("must be in (0, 1), got {}", self.split_ratio),
            );
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, CliError> {
        // data_alpha/data_beta are already folded into the echo; re-parse
        // without treating them as user-supplied extras.
        match parse_dataset(&self.dataset, None, None) {
            Ok(spec) => Ok(spec),
            Err(_) if self.dataset == "synthetic" => Ok(DatasetSpec::Synthetic {
                alpha: self.data_alpha,
                beta: self.data_beta,
                iid: self.iid,
            }),
            Err(e) => Err(e),
        }
    }

    pub fn synthetic_config(&self) -> Result<SyntheticConfig, CliError> {
        match self.dataset_spec()? {
            DatasetSpec::Synthetic { alpha, beta, iid } => Ok(SyntheticConfig {
                alpha,
                beta,
                iid,
                n_devices: self.n_devices,
                dim: self.dim,
                classes: self.classes,
                seed: derive_seed(self.seed, "data"),
                s_min: self.s_min,
                pareto_shape: self.pareto_shape,
            }),
            DatasetSpec::Csv(path) => Err(CliError::Config(format!(
                "dataset `csv:{}` is not synthetic",
                path.display()
            ))),
        }
    }

    pub fn build_dataset(&self) -> Result<FederatedDataset, CliError> {
        match self.dataset_spec()? {
            DatasetSpec::Synthetic { .. } => {
                generate_synthetic(&self.synthetic_config()?).map_err(CliError::classify)
            }
            DatasetSpec::Csv(path) => load_csv_dataset(
                &path,
                self.dim,
                self.classes,
                &self.device_column,
                self.split_ratio,
                derive_seed(self.seed, "data"),
            )
            .map_err(CliError::classify),
        }
    }

    pub fn policy(&self) -> AggregationPolicy {
        let fedfa = self.algorithm == Algorithm::Fedfa;
        AggregationPolicy {
            kind: self.algorithm.kind(),
            alpha: self.alpha,
            beta: self.beta,
            gamma_s: self.gamma_s,
            eta_s: self.eta_s,
            round_b: self.round_b,
            c_eps: self.c_eps,
            weighting_enabled: fedfa,
            server_momentum_enabled: fedfa,
        }
    }

    pub fn train_config(&self) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.gamma_c,
            prox_mu: self.prox_mu,
            // Overridden per client and round from the root seed.
            shuffle_seed: 0,
        }
    }
}

/// One finished run: the raw result, its fairness stats and the files written.
pub struct RunOutput {
    pub result: ExperimentResult,
    pub stats: AccuracyStats,
    pub files: Vec<PathBuf>,
}

/// Builds the dataset, runs the configured experiment and writes the three
/// metrics files under `cfg.output`.
pub fn run_files(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let dataset = cfg.build_dataset()?;
    let result = run_experiment(
        &dataset,
        &cfg.policy(),
        &cfg.train_config(),
        cfg.clients_per_round,
        cfg.rounds,
        cfg.eval_every,
        cfg.seed,
    )
    .map_err(CliError::classify)?;
    let stats = accuracy_stats(&result.final_per_device_test_acc).map_err(CliError::classify)?;
    let echo = serde_json::to_value(cfg)
        .map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
    let files = emit_history(&result, &stats, &echo, &cfg.output).map_err(CliError::classify)?;
    Ok(RunOutput { result, stats, files })
}

/// Resolves the three per-algorithm configurations of a `compare` run from
/// one shared partial config. An explicit `lr` applies to every algorithm;
/// otherwise each algorithm gets its own default.
pub fn resolve_compare(partial: PartialConfig) -> Result<Vec<ExperimentConfig>, CliError> {
    if partial.algorithm.is_some() {
        return Err(CliError::Config(
            "conflicting keys: `algorithm` does not apply to compare".into(),
        ));
    }
    let base_output = partial.output.clone().unwrap_or_else(|| "fedfa_out".into());
    [Algorithm::Fedavg, Algorithm::Fedprox, Algorithm::Fedfa]
        .into_iter()
        .map(|algorithm| {
            let mut p = partial.clone();
            p.algorithm = Some(algorithm);
            p.output = Some(format!("{base_output}_{}", algorithm.name()));
            resolve_config(p)
        })
        .collect()
}

/// Runs all three algorithms on the same dataset and seed, emits their
/// per-run files plus a combined `<output>_compare.json` holding the three
/// accuracy-distribution blocks.
pub fn compare_files(
    configs: &[ExperimentConfig],
    base_output: &str,
) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let mut results = serde_json::Map::new();
    let mut config_echo = serde_json::Map::new();
    for cfg in configs {
        let output = run_files(cfg)?;
        files.extend(output.files);
        let name = cfg.algorithm.name().to_string();
        results.insert(
            name.clone(),
            serde_json::to_value(&output.stats)
                .map_err(|e| CliError::Config(format!("cannot serialize stats: {e}")))?,
        );
        config_echo.insert(
            name,
            serde_json::to_value(cfg)
                .map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?,
        );
    }
    let summary = serde_json::json!({
        "config": config_echo,
        "results": results,
    });
    let path = PathBuf::from(format!("{base_output}_compare.json"));
    let file = File::create(&path).map_err(|source| {
        CliError::Data(FedError::Io { path: path.clone(), source })
    })?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &summary)
        .map_err(|e| CliError::Config(format!("cannot write summary: {e}")))?;
    writeln!(writer).map_err(|source| CliError::Data(FedError::Io { path: path.clone(), source }))?;
    files.push(path);
    Ok(files)
}

/// Writes the configured synthetic dataset as `<output>.csv` in the
/// `f0..f{d-1},label,device` schema, plus `<output>_meta.json`.
pub fn gen_data_files(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let synth = cfg.synthetic_config()?;
    let dataset = generate_synthetic(&synth).map_err(CliError::classify)?;

    let csv_path = PathBuf::from(format!("{}.csv", cfg.output));
    let io = |source: std::io::Error| CliError::Data(FedError::Io {
        path: csv_path.clone(),
        source,
    });
    let mut writer = BufWriter::new(File::create(&csv_path).map_err(io)?);
    let header: Vec<String> = (0..cfg.dim)
        .map(|j| format!("f{j}"))
        .chain(["label".to_string(), cfg.device_column.clone()])
        .collect();
    writeln!(writer, "{}", header.join(",")).map_err(io)?;
    for shard in &dataset.shards {
        for ex in shard.train.iter().chain(shard.test.iter()) {
            let mut row = String::new();
            for f in &ex.features {
                row.push_str(&format!("{f}"));
                row.push(',');
            }
            row.push_str(&format!("{},{}", ex.label, shard.device_id));
            writeln!(writer, "{row}").map_err(io)?;
        }
    }
    writer.flush().map_err(io)?;

    let meta_path = PathBuf::from(format!("{}_meta.json", cfg.output));
    let echo = serde_json::to_value(cfg)
        .map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
    let meta = serde_json::json!({
        "config": echo,
        "gen_meta": dataset.gen_meta,
    });
    let file = File::create(&meta_path).map_err(|source| CliError::Data(FedError::Io {
        path: meta_path.clone(),
        source,
    }))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &meta)
        .map_err(|e| CliError::Config(format!("cannot write meta: {e}")))?;
    writeln!(writer).map_err(|source| CliError::Data(FedError::Io {
        path: meta_path.clone(),
        source,
    }))?;
    Ok(vec![csv_path, meta_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> PartialConfig {
        let mut map = serde_json::Map::new();
        for (k, v) in pairs {
            let value: serde_json::Value = v.parse().unwrap_or(serde_json::json!(v));
            map.insert(k.to_string(), value);
        }
        serde_json::from_value(serde_json::Value::Object(map)).unwrap()
    }

    #[test]
    fn fedfa_defaults_follow_the_reference_setup() {
        let cfg = resolve_config(flags(&[
            ("dataset", "\"synthetic_1_1\""),
            ("algorithm", "\"fedfa\""),
            ("seed", "42"),
        ]))
        .unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.eta_s, 1e-4);
        assert_eq!(cfg.gamma_c, 0.5);
        assert_eq!(cfg.gamma_s, 0.5);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.clients_per_round, 10);
        assert_eq!(cfg.round_b, 3);
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.c_eps, 1e-10);
        assert_eq!(cfg.data_alpha, 1.0);
        assert_eq!(cfg.data_beta, 1.0);
        assert!(!cfg.iid);
    }

    #[test]
    fn baseline_defaults_differ() {
        let cfg = resolve_config(flags(&[
            ("dataset", "\"synthetic_0_0\""),
            ("algorithm", "\"fedavg\""),
            ("seed", "1"),
        ]))
        .unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.gamma_c, 0.0);
        assert_eq!(cfg.prox_mu, 0.0);
        let cfg = resolve_config(flags(&[
            ("dataset", "\"synthetic_0_0\""),
            ("algorithm", "\"fedprox\""),
            ("seed", "1"),
        ]))
        .unwrap();
        assert_eq!(cfg.prox_mu, 1.0);
    }

    #[test]
    fn simplex_violation_is_a_config_error() {
        let err = resolve_config(flags(&[
            ("dataset", "\"synthetic_1_1\""),
            ("algorithm", "\"fedfa\""),
            ("alpha", "0.7"),
            ("beta", "0.7"),
            ("seed", "1"),
        ]))
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("alpha + beta"), "{err}");
    }

    #[test]
    fn preset_conflicts_with_explicit_data_params() {
        let err = resolve_config(flags(&[
            ("dataset", "\"synthetic_1_1\""),
            ("algorithm", "\"fedfa\""),
            ("data-alpha", "0.3"),
            ("seed", "1"),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("conflicting keys"), "{err}");
    }

    #[test]
    fn csv_dataset_requires_schema() {
        let err = resolve_config(flags(&[
            ("dataset", "\"csv:/tmp/x.csv\""),
            ("algorithm", "\"fedavg\""),
            ("seed", "1"),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("dim"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let file = flags(&[("dataset", "\"synthetic_0_0\""), ("rounds", "5")]);
        let cli = flags(&[("algorithm", "\"fedavg\""), ("rounds", "9"), ("seed", "1")]);
        let cfg = resolve_config(PartialConfig::merged_over(file, cli)).unwrap();
        assert_eq!(cfg.rounds, 9);
        assert_eq!(cfg.dataset, "synthetic_0_0");
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<PartialConfig>("{\"not-a-key\": 1}");
        assert!(err.is_err());
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg = resolve_config(flags(&[
            ("dataset", "\"synthetic_0.5_0.5\""),
            ("algorithm", "\"fedfa\""),
            ("seed", "7"),
        ]))
        .unwrap();
        let echo = serde_json::to_value(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_value(echo).unwrap();
        assert_eq!(cfg, back);
    }
}
