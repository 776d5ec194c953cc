//! Pipeline stages behind the CLI subcommands.
//!
//! Every stage reads its inputs from serialized artifacts and writes its
//! outputs back as artifacts; nothing is passed in memory between commands.
//! All writers are deterministic, so rerunning a stage with the same
//! configuration and seed reproduces the artifact byte for byte.

use std::path::{Path, PathBuf};

use stgf_core::data::{
    load_csv, synth_diffusion_with, window_split, CsvOptions, SeriesTable, SplitDatasets,
};
use stgf_core::graph::{build_stg, build_ttg, SpatialTensorGraph, TemporalTensorGraph};
use stgf_core::io::{
    read_checkpoint, read_dataset, read_lifted_graph, read_stg_weights, read_ttg_weights,
    write_checkpoint, write_dataset, write_lifted_graph, write_peps, write_stg, write_ttg,
    Container,
};
use stgf_core::metrics::evaluate;
use stgf_core::model::{model_forward, persistence_forecast, ForecastTask, GraphSource, ModelParams};
use stgf_core::peps::{compression_ratio, peps_fit, peps_reconstruct};
use stgf_core::spectral::{lift_stg, lift_ttg, LiftedGraph, Provenance};
use stgf_core::train::train;
use stgf_core::DenseTensor;

use crate::config::{ConfigError, RunConfig};

/// Anything a stage can fail with, mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(stgf_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    Missing { path: PathBuf, hint: &'static str },
}

impl CliError {
    /// 2 for configuration problems, 4 for numerical failures, 3 for
    /// everything else that stops a stage (missing or malformed data).
    pub fn exit_code(&self) -> i32 {
        fn core_code(e: &stgf_core::Error) -> i32 {
            use stgf_core::Error as E;
            match e {
                E::NonFinite { .. } | E::Divergence { .. } => 4,
                E::GraphSlice { source, .. } | E::EvolveStep { source, .. } => core_code(source),
                _ => 3,
            }
        }
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => core_code(e),
            CliError::Io { .. } | CliError::Missing { .. } => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Missing { path, hint } => {
                write!(f, "missing artifact {}: run `stgf {hint}` first", path.display())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<stgf_core::Error> for CliError {
    fn from(e: stgf_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Where artifacts live. `data_root` holds the artifacts shared between
/// ablation variants (series, dataset, graphs); everything else goes under
/// `root`. For ordinary runs the two coincide.
pub struct Paths {
    pub root: PathBuf,
    pub data_root: PathBuf,
}

impl Paths {
    pub fn new(out: PathBuf) -> Paths {
        Paths {
            data_root: out.clone(),
            root: out,
        }
    }

    /// The series CSV: relative config paths resolve against the data root.
    pub fn series(&self, cfg: &RunConfig) -> PathBuf {
        let p = Path::new(&cfg.data.series);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root.join(p)
        }
    }

    pub fn dataset(&self) -> PathBuf {
        self.data_root.join("dataset.bin")
    }
    pub fn manifest(&self) -> PathBuf {
        self.data_root.join("manifest.txt")
    }
    pub fn stg(&self) -> PathBuf {
        self.data_root.join("stg.bin")
    }
    pub fn ttg(&self) -> PathBuf {
        self.data_root.join("ttg.bin")
    }
    pub fn graph_summary(&self) -> PathBuf {
        self.data_root.join("graph_summary.txt")
    }
    pub fn a4(&self) -> PathBuf {
        self.root.join("a4.bin")
    }
    pub fn b4(&self) -> PathBuf {
        self.root.join("b4.bin")
    }
    pub fn peps(&self) -> PathBuf {
        self.root.join("peps.bin")
    }
    pub fn a4_compressed(&self) -> PathBuf {
        self.root.join("a4_compressed.bin")
    }
    pub fn b4_compressed(&self) -> PathBuf {
        self.root.join("b4_compressed.bin")
    }
    pub fn peps_summary(&self) -> PathBuf {
        self.root.join("peps_summary.txt")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.bin")
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.csv")
    }
    pub fn train_summary(&self) -> PathBuf {
        self.root.join("train_summary.txt")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.bin")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn plotdata(&self) -> PathBuf {
        self.root.join("plotdata.csv")
    }
    pub fn effective_config(&self) -> PathBuf {
        self.root.join("effective_config.toml")
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require(path: PathBuf, hint: &'static str) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Missing { path, hint })
    }
}

/// Create the run directory and record the fully-resolved configuration.
pub fn prepare_run_dir(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    std::fs::create_dir_all(&paths.root).map_err(|source| CliError::Io {
        path: paths.root.clone(),
        source,
    })?;
    write_text(&paths.effective_config(), &cfg.to_toml())
}

// ---------------------------------------------------------------- synth ---

pub fn cmd_synth(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let (table, _adj) = synth_diffusion_with(
        cfg.synth.nodes,
        cfg.synth.steps,
        cfg.seed,
        cfg.synth.noise,
        &cfg.synth.options(),
    )?;
    let path = paths.series(cfg);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    write_text(&path, &series_csv(&table))?;
    println!(
        "wrote {} ({} steps, {} stations)",
        path.display(),
        table.steps(),
        table.n_stations()
    );
    Ok(())
}

fn series_csv(table: &SeriesTable) -> String {
    let mut out = String::new();
    out.push_str(&table.station_ids.join(","));
    out.push('\n');
    for t in 0..table.steps() {
        for n in 0..table.n_stations() {
            if n > 0 {
                out.push(',');
            }
            out.push_str(&table.values.get(&[t, n, 0]).to_string());
        }
        out.push('\n');
    }
    out
}

// -------------------------------------------------------------- prepare ---

pub fn cmd_prepare(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let series_path = require(paths.series(cfg), "synth")?;
    let table = load_csv(
        &series_path,
        &CsvOptions {
            timestamp_column: cfg.data.timestamp_column,
            units: cfg.data.units.clone(),
        },
    )?;
    let [f_tr, f_val, f_te] = cfg.data.fractions;
    let splits = window_split(&table, cfg.data.window, cfg.data.horizon, (f_tr, f_val, f_te))?;
    write_dataset(
        &paths.dataset(),
        &splits,
        &table.station_ids,
        &table.units,
        table.steps(),
    )?;
    let manifest = format!(
        "series={}\nsteps={}\nstations={}\nfeatures={}\nimputed={}\nunits={}\nwindow={}\nhorizon={}\nfractions={},{},{}\nwindows={},{},{}\n",
        cfg.data.series,
        table.steps(),
        table.n_stations(),
        table.n_features(),
        table.imputed,
        table.units,
        cfg.data.window,
        cfg.data.horizon,
        f_tr,
        f_val,
        f_te,
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
    );
    write_text(&paths.manifest(), &manifest)?;
    println!(
        "wrote {} ({} train / {} val / {} test windows)",
        paths.dataset().display(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

fn load_dataset(paths: &Paths) -> CliResult<(SplitDatasets, Vec<String>, String, usize)> {
    let path = require(paths.dataset(), "prepare")?;
    Ok(read_dataset(&path)?)
}

// ---------------------------------------------------------- build-graph ---

pub fn cmd_build_graph(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let (splits, _, _, _) = load_dataset(paths)?;
    let train = &splits.train;
    let shape = train.x.shape().to_vec();
    let (l, n, d) = (shape[1], shape[2], shape[3]);
    let g = cfg.graph.batch_windows.min(train.len()).max(1);
    // The first g training windows, stacked; they are a contiguous prefix.
    let chunk = l * n * d;
    let mut xg = DenseTensor::zeros(&[g, l, n, d]);
    xg.data_mut().copy_from_slice(&train.x.data()[..g * chunk]);

    let stg = build_stg(&xg, &cfg.graph.stg_options(n)?)?;
    let ttg = build_ttg(&xg, &cfg.graph.params())?;
    write_stg(&paths.stg(), &stg)?;
    write_ttg(&paths.ttg(), &ttg)?;

    let mut summary = String::new();
    describe_stack(&mut summary, "stg", &stg.weights, &cfg.graph.stg_mode);
    describe_stack(&mut summary, "ttg", &ttg.weights, "kernel");
    write_text(&paths.graph_summary(), &summary)?;
    println!(
        "wrote {} and {} from {} windows",
        paths.stg().display(),
        paths.ttg().display(),
        g
    );
    Ok(())
}

/// Per-slice off-diagonal density plus the entry range of a [m, m, slices]
/// weight stack.
fn describe_stack(out: &mut String, name: &str, w: &DenseTensor, mode: &str) {
    let m = w.shape()[0];
    let slices = w.shape()[2];
    out.push_str(&format!("{name}.slices={slices}\n{name}.side={m}\n{name}.mode={mode}\n"));
    let mut densities = Vec::with_capacity(slices);
    let mut min_nonzero = f64::INFINITY;
    let mut max = 0.0f64;
    for s in 0..slices {
        let mut nonzero = 0usize;
        for i in 0..m {
            for j in 0..m {
                let v = w.get(&[i, j, s]);
                if v > max {
                    max = v;
                }
                if i != j && v != 0.0 {
                    nonzero += 1;
                    if v < min_nonzero {
                        min_nonzero = v;
                    }
                }
            }
        }
        let pairs = m * (m - 1);
        densities.push(if pairs == 0 {
            0.0
        } else {
            nonzero as f64 / pairs as f64
        });
    }
    let list: Vec<String> = densities.iter().map(|d| format!("{d:.4}")).collect();
    out.push_str(&format!("{name}.density={}\n", list.join(",")));
    if min_nonzero.is_finite() {
        out.push_str(&format!("{name}.min_nonzero={min_nonzero:.6}\n"));
    } else {
        out.push_str(&format!("{name}.min_nonzero=0\n"));
    }
    out.push_str(&format!("{name}.max={max:.6}\n"));
}

fn load_graphs(
    cfg: &RunConfig,
    paths: &Paths,
) -> CliResult<(SpatialTensorGraph, TemporalTensorGraph)> {
    let stg_w = read_stg_weights(&require(paths.stg(), "build-graph")?)?;
    let ttg_w = read_ttg_weights(&require(paths.ttg(), "build-graph")?)?;
    let n = stg_w.shape()[0];
    let opts = cfg.graph.stg_options(n)?;
    Ok((
        SpatialTensorGraph {
            weights: stg_w,
            sigma2: opts.params.sigma2,
            epsilon: opts.params.epsilon,
            mode: opts.mode,
        },
        TemporalTensorGraph {
            weights: ttg_w,
            sigma2: opts.params.sigma2,
            epsilon: opts.params.epsilon,
        },
    ))
}

// ----------------------------------------------------------------- lift ---

pub fn cmd_lift(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let (stg, ttg) = load_graphs(cfg, paths)?;
    let a4 = lift_stg(&stg, &cfg.lift.options(cfg.lift.k_a))?;
    let b4 = lift_ttg(&ttg, &cfg.lift.options(cfg.lift.k_b))?;
    write_lifted_graph(&paths.a4(), &a4)?;
    write_lifted_graph(&paths.b4(), &b4)?;
    println!(
        "wrote {} (K={}) and {} (K={})",
        paths.a4().display(),
        cfg.lift.k_a,
        paths.b4().display(),
        cfg.lift.k_b
    );
    Ok(())
}

// ----------------------------------------------------------------- peps ---

pub fn cmd_peps(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let (stg, ttg) = load_graphs(cfg, paths)?;
    let (n, t) = (stg.n_nodes(), stg.t_steps());
    let opts = cfg.peps.options(n, t);
    let pair = peps_fit(&stg, &ttg, &opts)?;
    write_peps(&paths.peps(), &pair)?;

    let (ra, rb) = peps_reconstruct(&pair)?;
    let stg_r = SpatialTensorGraph { weights: ra, ..stg };
    let ttg_r = TemporalTensorGraph { weights: rb, ..ttg };
    let a4 = lift_stg(&stg_r, &cfg.lift.options(cfg.lift.k_a))?;
    let b4 = lift_ttg(&ttg_r, &cfg.lift.options(cfg.lift.k_b))?;
    write_lifted_graph(&paths.a4_compressed(), &a4)?;
    write_lifted_graph(&paths.b4_compressed(), &b4)?;

    let summary = format!(
        "r_n={}\nr_t={}\nsweeps_used={}\njoint_error={}\ncompression_ratio={}\n",
        opts.r_n,
        opts.r_t,
        pair.sweeps_used,
        pair.joint_error,
        compression_ratio(&pair, n, t),
    );
    write_text(&paths.peps_summary(), &summary)?;
    println!(
        "wrote {} (joint error {:.6}, {} sweeps)",
        paths.peps().display(),
        pair.joint_error,
        pair.sweeps_used
    );
    Ok(())
}

// ---------------------------------------------------------------- train ---

fn load_lifted_pair(cfg: &RunConfig, paths: &Paths) -> CliResult<(LiftedGraph, LiftedGraph, GraphSource)> {
    let source = cfg.model.graph_source()?;
    let (pa, pb, hint): (PathBuf, PathBuf, &'static str) = match source {
        GraphSource::Lifted => (paths.a4(), paths.b4(), "lift"),
        GraphSource::Compressed => (paths.a4_compressed(), paths.b4_compressed(), "peps"),
    };
    let a4 = read_lifted_graph(&require(pa, hint)?)?;
    let b4 = read_lifted_graph(&require(pb, hint)?)?;
    Ok((a4, b4, source))
}

pub fn cmd_train(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let (splits, _, _, _) = load_dataset(paths)?;
    let (a4, b4, source) = load_lifted_pair(cfg, paths)?;
    let d_in = splits.train.x.shape()[3];
    let task = ForecastTask {
        window: cfg.data.window,
        horizon: cfg.data.horizon,
    };
    let init = ModelParams::init(task, d_in, &cfg.model.model_config()?, a4, b4, source, cfg.seed)?;
    let hp = cfg.train.hyperparams(cfg.seed)?;
    let outcome = train(init, &splits.train, Some(&splits.val), &hp)?;

    write_checkpoint(&paths.checkpoint(), &outcome.params)?;
    let mut history = String::from("epoch,train_loss,val_loss,lr\n");
    for r in &outcome.history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        history.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, r.lr));
    }
    write_text(&paths.history(), &history)?;
    write_text(
        &paths.train_summary(),
        &format!(
            "best_epoch={}\nstopped_early={}\nepochs_run={}\n",
            outcome.best_epoch,
            outcome.stopped_early,
            outcome.history.len()
        ),
    )?;
    println!(
        "wrote {} (best epoch {}, {} epochs run)",
        paths.checkpoint().display(),
        outcome.best_epoch,
        outcome.history.len()
    );
    Ok(())
}

// -------------------------------------------------------------- predict ---

pub fn cmd_predict(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let (splits, _, units, _) = load_dataset(paths)?;
    let params = read_checkpoint(&require(paths.checkpoint(), "train")?)?;
    let test = &splits.test;
    if test.is_empty() {
        return Err(CliError::Core(stgf_core::Error::EmptyInput { op: "predict" }));
    }
    let horizon = test.y.shape()[1];
    let mut prediction = model_forward(&params, &test.x)?;
    let mut persistence = persistence_forecast(&test.x, horizon)?;
    let mut truth = test.y.clone();
    splits.stats.denormalize(&mut prediction);
    splits.stats.denormalize(&mut persistence);
    splits.stats.denormalize(&mut truth);

    let starts: Vec<f64> = test.start_indices.iter().map(|&s| s as f64).collect();
    let n_starts = starts.len();
    let mut c = Container::new();
    c.push_text(
        "meta",
        format!(
            "window={}\nhorizon={}\ntag={}\nunits={}\n",
            cfg.data.window,
            horizon,
            cfg.tag(),
            units
        ),
    )?;
    c.push_tensor("prediction", prediction)?;
    c.push_tensor("truth", truth)?;
    c.push_tensor("persistence", persistence)?;
    c.push_tensor("starts", DenseTensor::from_vec(&[n_starts], starts)?)?;
    c.write(&paths.predictions())?;
    println!(
        "wrote {} ({} test windows)",
        paths.predictions().display(),
        n_starts
    );
    Ok(())
}

// ----------------------------------------------------------------- eval ---

#[derive(serde::Serialize, serde::Deserialize)]
struct MetricsRecord {
    tag: String,
    horizon: String,
    mae: f64,
    rmse: f64,
    mape: Option<f64>,
}

fn meta_get<'a>(meta: &'a str, key: &str) -> Option<&'a str> {
    meta.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// One [B, N, D] horizon slice of a [B, T', N, D] stack.
fn horizon_slice(t: &DenseTensor, h: usize) -> DenseTensor {
    let s = t.shape();
    DenseTensor::from_fn(&[s[0], s[2], s[3]], |ix| t.get(&[ix[0], h, ix[1], ix[2]]))
}

fn metric_lines(tag: &str, truth: &DenseTensor, pred: &DenseTensor) -> CliResult<String> {
    let horizon = truth.shape()[1];
    let mut out = String::new();
    for h in 0..horizon {
        let m = evaluate(&horizon_slice(truth, h), &horizon_slice(pred, h))?;
        let rec = MetricsRecord {
            tag: tag.to_string(),
            horizon: (h + 1).to_string(),
            mae: m.mae,
            rmse: m.rmse,
            mape: m.mape,
        };
        out.push_str(&serde_json::to_string(&rec).expect("metrics serialize"));
        out.push('\n');
    }
    let m = evaluate(truth, pred)?;
    let rec = MetricsRecord {
        tag: tag.to_string(),
        horizon: "all".to_string(),
        mae: m.mae,
        rmse: m.rmse,
        mape: m.mape,
    };
    out.push_str(&serde_json::to_string(&rec).expect("metrics serialize"));
    out.push('\n');
    Ok(out)
}

pub fn cmd_eval(_cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let path = require(paths.predictions(), "predict")?;
    let c = Container::read(&path)?;
    let bad = |message: &str| stgf_core::Error::Format {
        path: path.clone(),
        message: message.to_string(),
    };
    let meta = c.text("meta").ok_or_else(|| bad("missing meta"))?.to_string();
    let tag = meta_get(&meta, "tag").ok_or_else(|| bad("missing tag"))?.to_string();
    let window: usize = meta_get(&meta, "window")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing window"))?;
    let need = |name: &str| -> CliResult<DenseTensor> {
        c.tensor(name)
            .cloned()
            .ok_or_else(|| CliError::Core(bad(&format!("missing entry {name}"))))
    };
    let prediction = need("prediction")?;
    let truth = need("truth")?;
    let persistence = need("persistence")?;
    let starts = need("starts")?;

    let mut jsonl = metric_lines(&tag, &truth, &prediction)?;
    jsonl.push_str(&metric_lines("persistence", &truth, &persistence)?);
    write_text(&paths.metrics(), &jsonl)?;

    // Forecast-versus-truth pairs for the first feature, one row per
    // (window, horizon step, node); time is the absolute step forecast.
    let s = truth.shape().to_vec();
    let (b, horizon, n) = (s[0], s[1], s[2]);
    let mut plot = String::from("time,node,truth,prediction\n");
    for w in 0..b {
        let start = starts.get(&[w]) as usize;
        for h in 0..horizon {
            for j in 0..n {
                plot.push_str(&format!(
                    "{},{},{},{}\n",
                    start + window + h,
                    j,
                    truth.get(&[w, h, j, 0]),
                    prediction.get(&[w, h, j, 0]),
                ));
            }
        }
    }
    write_text(&paths.plotdata(), &plot)?;
    println!(
        "wrote {} and {} ({} horizons)",
        paths.metrics().display(),
        paths.plotdata().display(),
        horizon
    );
    Ok(())
}

// --------------------------------------------------------------- ablate ---

/// The three ablation variants, in report order.
const VARIANTS: [&str; 3] = ["stg", "stg_ttg", "stg_ttg_peps"];

pub fn cmd_ablate(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    // Shared inputs: series, dataset, and graphs are built once.
    if !paths.dataset().is_file() {
        if !paths.series(cfg).is_file() {
            cmd_synth(cfg, paths)?;
        }
        cmd_prepare(cfg, paths)?;
    }
    if !paths.stg().is_file() || !paths.ttg().is_file() {
        cmd_build_graph(cfg, paths)?;
    }
    let (splits, _, _, _) = load_dataset(paths)?;
    let n_stations = splits.train.x.shape()[2];
    drop(splits);

    for variant in VARIANTS {
        let vdir = paths.root.join("ablate").join(variant);
        let vpaths = Paths {
            root: vdir,
            data_root: paths.data_root.clone(),
        };
        let mut vcfg = cfg.clone();
        vcfg.tag = Some(variant.to_string());
        vcfg.model.graph_source = if variant == "stg_ttg_peps" {
            "compressed".into()
        } else {
            "lifted".into()
        };
        prepare_run_dir(&vcfg, &vpaths)?;
        match variant {
            "stg" => {
                // Spatial filters only: the temporal stack is swapped for
                // identity filters so the temporal pathway passes through.
                let (stg, _) = load_graphs(&vcfg, &vpaths)?;
                let a4 = lift_stg(&stg, &vcfg.lift.options(vcfg.lift.k_a))?;
                let b4 = LiftedGraph::identity(vcfg.data.window, n_stations, Provenance::Temporal);
                write_lifted_graph(&vpaths.a4(), &a4)?;
                write_lifted_graph(&vpaths.b4(), &b4)?;
            }
            "stg_ttg" => cmd_lift(&vcfg, &vpaths)?,
            _ => cmd_peps(&vcfg, &vpaths)?,
        }
        cmd_train(&vcfg, &vpaths)?;
        cmd_predict(&vcfg, &vpaths)?;
        cmd_eval(&vcfg, &vpaths)?;
    }

    aggregate_ablation(cfg, paths)
}

fn read_metric_records(path: &Path) -> CliResult<Vec<MetricsRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    raw.lines()
        .map(|l| {
            serde_json::from_str(l).map_err(|e| {
                CliError::Core(stgf_core::Error::Format {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            })
        })
        .collect()
}

fn aggregate_ablation(cfg: &RunConfig, paths: &Paths) -> CliResult<()> {
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut baseline: Vec<MetricsRecord> = Vec::new();
    for variant in VARIANTS {
        let vmetrics = paths.root.join("ablate").join(variant).join("metrics.jsonl");
        for r in read_metric_records(&vmetrics)? {
            if r.tag == variant {
                records.push(r);
            } else if variant == VARIANTS[0] && r.tag == "persistence" {
                // Identical across variants; keep the first copy, last in order.
                baseline.push(r);
            }
        }
    }
    records.extend(baseline);
    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        jsonl.push('\n');
    }
    write_text(&paths.metrics(), &jsonl)?;

    // One row per variant, three metrics per horizon.
    let horizon = cfg.data.horizon;
    let find = |tag: &str, h: usize| -> Option<&MetricsRecord> {
        let want = (h + 1).to_string();
        records.iter().find(|r| r.tag == tag && r.horizon == want)
    };
    let mut report = String::new();
    report.push_str(&format!("{:<14}", "variant"));
    for h in 1..=horizon {
        report.push_str(&format!(
            "{:>12}{:>12}{:>12}",
            format!("mae@{h}"),
            format!("rmse@{h}"),
            format!("mape@{h}")
        ));
    }
    report.push('\n');
    for tag in VARIANTS.iter().copied().chain(["persistence"]) {
        report.push_str(&format!("{tag:<14}"));
        for h in 0..horizon {
            match find(tag, h) {
                Some(r) => {
                    report.push_str(&format!("{:>12.6}{:>12.6}", r.mae, r.rmse));
                    match r.mape {
                        Some(m) => report.push_str(&format!("{m:>12.6}")),
                        None => report.push_str(&format!("{:>12}", "-")),
                    }
                }
                None => report.push_str(&format!("{:>12}{:>12}{:>12}", "-", "-", "-")),
            }
        }
        report.push('\n');
    }
    let report_path = paths.root.join("report.txt");
    write_text(&report_path, &report)?;
    println!("wrote {} and {}", paths.metrics().display(), report_path.display());
    Ok(())
}
