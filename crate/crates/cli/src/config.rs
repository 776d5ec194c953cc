//! Run configuration: one TOML document covering every pipeline stage.
//!
//! Defaults mirror the library types so an empty config reproduces library
//! behavior exactly. Unknown keys are rejected everywhere — a typo must
//! fail loudly, not silently fall back to a default.

use serde::{Deserialize, Serialize};
use std::path::Path;
use stgf_core::data::SynthOptions;
use stgf_core::graph::{GraphParams, StgMode, StgOptions};
use stgf_core::layers::{Activation, Composition};
use stgf_core::model::{GraphSource, LossKind, ModelConfig};
use stgf_core::spectral::LiftOptions;
use stgf_core::train::{Hyperparams, Optimizer, StepDecay};

/// Configuration failure: bad file, bad TOML, unknown key, invalid value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CResult<T> = Result<T, ConfigError>;

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Input series CSV; relative paths resolve against the output directory.
    pub series: String,
    /// Treat the first CSV column as a timestamp instead of a station.
    pub timestamp_column: bool,
    pub units: String,
    /// Input window length l.
    pub window: usize,
    /// Forecast horizon T'.
    pub horizon: usize,
    /// Chronological train/validation/test fractions.
    pub fractions: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            series: "series.csv".into(),
            timestamp_column: false,
            units: String::new(),
            window: 12,
            horizon: 3,
            fractions: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub nodes: usize,
    pub steps: usize,
    pub noise: f64,
    pub gamma: f64,
    pub amplitude: f64,
    pub period: f64,
    pub radius: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let o = SynthOptions::default();
        Self {
            nodes: 16,
            steps: 2000,
            noise: 0.05,
            gamma: o.gamma,
            amplitude: o.amplitude,
            period: o.period,
            radius: o.radius,
        }
    }
}

impl SynthSection {
    pub fn options(&self) -> SynthOptions {
        SynthOptions {
            gamma: self.gamma,
            amplitude: self.amplitude,
            period: self.period,
            radius: self.radius,
            initial_value: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    pub sigma2: f64,
    pub epsilon: f64,
    /// "kernel" or "evolved".
    pub stg_mode: String,
    /// Evolution embedding rank, clamped to the node count at build time.
    pub embed_rank: usize,
    pub alpha: f64,
    /// How many training windows feed the distance computation.
    pub batch_windows: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        let p = GraphParams::default();
        let o = StgOptions::default();
        Self {
            sigma2: p.sigma2,
            epsilon: p.epsilon,
            stg_mode: "evolved".into(),
            embed_rank: o.embed_rank,
            alpha: o.alpha,
            batch_windows: 64,
        }
    }
}

impl GraphSection {
    pub fn params(&self) -> GraphParams {
        GraphParams {
            sigma2: self.sigma2,
            epsilon: self.epsilon,
        }
    }

    pub fn stg_options(&self, n_nodes: usize) -> CResult<StgOptions> {
        let mode = match self.stg_mode.as_str() {
            "kernel" => StgMode::Kernel,
            "evolved" => StgMode::Evolved,
            other => {
                return Err(ConfigError(format!(
                    "graph.stg_mode must be \"kernel\" or \"evolved\", got {other:?}"
                )))
            }
        };
        Ok(StgOptions {
            params: self.params(),
            mode,
            embed_rank: self.embed_rank.min(n_nodes).max(1),
            alpha: self.alpha,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftSection {
    pub k_a: usize,
    pub k_b: usize,
    pub symmetrize: bool,
    pub clamp_negative: bool,
}

impl Default for LiftSection {
    fn default() -> Self {
        let o = LiftOptions::default();
        Self {
            k_a: o.k,
            k_b: o.k,
            symmetrize: o.symmetrize,
            clamp_negative: o.clamp_negative,
        }
    }
}

impl LiftSection {
    pub fn options(&self, k: usize) -> LiftOptions {
        LiftOptions {
            k,
            symmetrize: self.symmetrize,
            clamp_negative: self.clamp_negative,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PepsSection {
    /// Node-factor rank; 0 means the size-based default (N/4 rounded up).
    pub r_n: usize,
    /// Time-factor rank; 0 means the size-based default (T/2 rounded up).
    pub r_t: usize,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for PepsSection {
    fn default() -> Self {
        Self {
            r_n: 0,
            r_t: 0,
            max_sweeps: 50,
            tol: 1e-6,
        }
    }
}

impl PepsSection {
    pub fn options(&self, n: usize, t: usize) -> stgf_core::peps::PepsOptions {
        let mut o = stgf_core::peps::PepsOptions::defaults_for(n, t);
        if self.r_n > 0 {
            o.r_n = self.r_n.min(n);
        }
        if self.r_t > 0 {
            o.r_t = self.r_t.min(t);
        }
        o.max_sweeps = self.max_sweeps;
        o.tol = self.tol;
        o
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub c_hidden: usize,
    pub n_blocks: usize,
    /// "sequential", "sandwich", or "additive".
    pub composition: String,
    /// "relu" or "none" (between blocks; never after the last).
    pub activation: String,
    /// "lifted" or "compressed" — which filter artifacts training reads.
    pub graph_source: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::default();
        Self {
            c_hidden: c.c_hidden,
            n_blocks: c.n_blocks,
            composition: "sequential".into(),
            activation: "relu".into(),
            graph_source: "lifted".into(),
        }
    }
}

impl ModelSection {
    pub fn composition(&self) -> CResult<Composition> {
        match self.composition.as_str() {
            "sequential" => Ok(Composition::Sequential),
            "sandwich" => Ok(Composition::Sandwich),
            "additive" => Ok(Composition::Additive),
            other => Err(ConfigError(format!(
                "model.composition must be \"sequential\", \"sandwich\", or \"additive\", got {other:?}"
            ))),
        }
    }

    pub fn activation(&self) -> CResult<Activation> {
        match self.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "none" => Ok(Activation::None),
            other => Err(ConfigError(format!(
                "model.activation must be \"relu\" or \"none\", got {other:?}"
            ))),
        }
    }

    pub fn graph_source(&self) -> CResult<GraphSource> {
        match self.graph_source.as_str() {
            "lifted" => Ok(GraphSource::Lifted),
            "compressed" => Ok(GraphSource::Compressed),
            other => Err(ConfigError(format!(
                "model.graph_source must be \"lifted\" or \"compressed\", got {other:?}"
            ))),
        }
    }

    pub fn model_config(&self) -> CResult<ModelConfig> {
        Ok(ModelConfig {
            c_hidden: self.c_hidden,
            n_blocks: self.n_blocks,
            composition: self.composition()?,
            activation: self.activation()?,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// "momentum" or "adam".
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// "mean" or "sum".
    pub loss: String,
    pub train_graphs: bool,
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Halve-style step decay period in epochs; 0 disables decay.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            optimizer: "momentum".into(),
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            loss: "mean".into(),
            train_graphs: false,
            parallel: true,
            decay_every: 0,
            decay_factor: 0.5,
        }
    }
}

impl TrainSection {
    pub fn hyperparams(&self, seed: u64) -> CResult<Hyperparams> {
        let optimizer = match self.optimizer.as_str() {
            "momentum" => Optimizer::Momentum {
                lr: self.lr,
                momentum: self.momentum,
            },
            "adam" => Optimizer::adam(self.lr),
            other => {
                return Err(ConfigError(format!(
                    "train.optimizer must be \"momentum\" or \"adam\", got {other:?}"
                )))
            }
        };
        let loss = match self.loss.as_str() {
            "mean" => LossKind::Mean,
            "sum" => LossKind::Sum,
            other => {
                return Err(ConfigError(format!(
                    "train.loss must be \"mean\" or \"sum\", got {other:?}"
                )))
            }
        };
        Ok(Hyperparams {
            optimizer,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            loss,
            train_graphs: self.train_graphs,
            seed,
            decay: (self.decay_every > 0).then_some(StepDecay {
                every: self.decay_every,
                factor: self.decay_factor,
            }),
            parallel: self.parallel,
        })
    }
}

/// The whole run: every stage reads the section it owns.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Label stamped on metrics records.
    pub tag: Option<String>,
    pub data: DataSection,
    pub synth: SynthSection,
    pub graph: GraphSection,
    pub lift: LiftSection,
    pub peps: PepsSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

impl RunConfig {
    pub fn tag(&self) -> &str {
        self.tag.as_deref().unwrap_or("model")
    }

    /// Cheap value checks that do not need data in hand.
    pub fn validate(&self) -> CResult<()> {
        if self.data.window == 0 || self.data.horizon == 0 {
            return Err(ConfigError(
                "data.window and data.horizon must be positive".into(),
            ));
        }
        for f in self.data.fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError(format!(
                    "split fractions must lie in [0, 1], got {f}"
                )));
            }
        }
        if self.data.fractions.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(ConfigError("split fractions must sum to at most 1".into()));
        }
        if !(self.graph.sigma2 > 0.0) {
            return Err(ConfigError(format!(
                "graph.sigma2 must be positive, got {}",
                self.graph.sigma2
            )));
        }
        if !(self.graph.epsilon > 0.0 && self.graph.epsilon <= 1.0) {
            return Err(ConfigError(format!(
                "graph.epsilon must lie in (0, 1], got {}",
                self.graph.epsilon
            )));
        }
        if !(self.graph.alpha >= 0.0) {
            return Err(ConfigError(format!(
                "graph.alpha must be non-negative, got {}",
                self.graph.alpha
            )));
        }
        if self.graph.batch_windows == 0 {
            return Err(ConfigError("graph.batch_windows must be positive".into()));
        }
        if self.lift.k_a == 0 || self.lift.k_b == 0 {
            return Err(ConfigError("lift.k_a and lift.k_b must be at least 1".into()));
        }
        if self.model.c_hidden == 0 || self.model.n_blocks == 0 {
            return Err(ConfigError(
                "model.c_hidden and model.n_blocks must be positive".into(),
            ));
        }
        if !(self.train.lr > 0.0) {
            return Err(ConfigError(format!(
                "train.lr must be positive, got {}",
                self.train.lr
            )));
        }
        if self.train.batch_size == 0 || self.train.max_epochs == 0 {
            return Err(ConfigError(
                "train.batch_size and train.max_epochs must be positive".into(),
            ));
        }
        if self.synth.nodes < 2 || self.synth.steps == 0 {
            return Err(ConfigError(
                "synth.nodes must be at least 2 and synth.steps positive".into(),
            ));
        }
        // Exercise the enum mappings so typos die here, not mid-pipeline.
        self.graph.stg_options(self.synth.nodes)?;
        self.model.model_config()?;
        self.model.graph_source()?;
        self.train.hyperparams(self.seed)?;
        Ok(())
    }

    /// Serialize the fully-resolved configuration; re-ingesting the output
    /// reproduces this run exactly.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse `key=value` into a dotted path and a TOML value. Values parse as
/// TOML scalars when possible, falling back to a plain string.
fn parse_set(spec: &str) -> CResult<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("--set needs key=value, got {spec:?}")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("--set key {key:?} has an empty segment")));
    }
    // A bare scalar is valid TOML after `v = `.
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn insert_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> CResult<()> {
    if path.len() == 1 {
        table.insert(path[0].clone(), value);
        return Ok(());
    }
    let entry = table
        .entry(path[0].clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => insert_path(t, &path[1..], value),
        _ => Err(ConfigError(format!(
            "--set path segment {:?} is not a table",
            path[0]
        ))),
    }
}

/// Load the configuration: file (if given), then `--set` overrides, then the
/// `--seed` flag, validated at the end.
pub fn load_config(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> CResult<RunConfig> {
    let mut table = match file {
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            raw.parse::<toml::Table>()
                .map_err(|e| ConfigError(format!("bad TOML in {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for spec in sets {
        let (path, value) = parse_set(spec)?;
        insert_path(&mut table, &path, value)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| ConfigError(e.to_string()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.data.window, 12);
        assert_eq!(c.graph.sigma2, 0.1);
        assert_eq!(c.graph.epsilon, 0.5);
        assert_eq!(c.model.c_hidden, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[graph]\nsigma = 0.2\n").unwrap();
        let err = load_config(Some(&p), &[], None).unwrap_err();
        assert!(err.0.contains("sigma"), "{}", err.0);
    }

    #[test]
    fn set_overrides_apply_and_round_trip() {
        let sets = vec![
            "graph.sigma2=0.25".to_string(),
            "model.composition=sandwich".to_string(),
            "data.fractions=[0.6, 0.2, 0.2]".to_string(),
            "tag=experiment".to_string(),
        ];
        let c = load_config(None, &sets, Some(9)).unwrap();
        assert_eq!(c.graph.sigma2, 0.25);
        assert_eq!(c.model.composition, "sandwich");
        assert_eq!(c.data.fractions, [0.6, 0.2, 0.2]);
        assert_eq!(c.seed, 9);
        assert_eq!(c.tag(), "experiment");
        // Round-trip through the dumped TOML.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eff.toml");
        std::fs::write(&p, c.to_toml()).unwrap();
        let back = load_config(Some(&p), &[], None).unwrap();
        assert_eq!(back.to_toml(), c.to_toml());
    }

    #[test]
    fn bad_values_fail_validation() {
        for spec in [
            "graph.epsilon=1.5",
            "graph.sigma2=0",
            "train.lr=-1",
            "data.fractions=[0.9, 0.3, 0.2]",
            "model.composition=stacked",
            "train.optimizer=sgd",
        ] {
            let err = load_config(None, &[spec.to_string()], None);
            assert!(err.is_err(), "{spec} should fail");
        }
    }

    #[test]
    fn bare_string_set_values_parse() {
        let c = load_config(None, &["graph.stg_mode=kernel".to_string()], None).unwrap();
        assert_eq!(c.graph.stg_mode, "kernel");
    }
}
