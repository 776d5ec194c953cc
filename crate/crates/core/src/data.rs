//! Series loading, windowing, normalization, and synthetic generation.
//!
//! A raw series is a `[steps, N, D]` tensor (time-major, one column per
//! station, D features). Forecasting samples are built by a chronological
//! three-way split followed by stride-1 windowing inside each segment, so no
//! window ever straddles a split boundary and test information cannot leak
//! into training statistics. Normalization is a per-(station, feature)
//! z-score fitted on the training segment only.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

/// A loaded multivariate series.
#[derive(Clone, Debug)]
pub struct SeriesTable {
    /// `[steps, N, D]`.
    pub values: DenseTensor,
    pub station_ids: Vec<String>,
    /// Strictly increasing when present.
    pub timestamps: Option<Vec<f64>>,
    /// Free-form unit label carried into reports.
    pub units: String,
    /// Number of cells filled in by imputation at load time.
    pub imputed: usize,
}

impl SeriesTable {
    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_stations(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.values.shape()[2]
    }

    /// One feature as a `steps x N` matrix.
    pub fn feature(&self, d: usize) -> Matrix {
        let (steps, n) = (self.steps(), self.n_stations());
        Matrix::from_fn(steps, n, |t, j| self.values.get(&[t, j, d]))
    }
}

/// CSV ingestion controls.
#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    /// Treat the first column as a strictly increasing timestamp.
    pub timestamp_column: bool,
    /// Unit label recorded on the table.
    pub units: String,
}

/// Load a rectangular CSV: header row of station ids, one row per time step,
/// one value per station. Empty cells are imputed by carrying the last
/// observation forward, with zero for cells that have no predecessor.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<SeriesTable> {
    let display = path.to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| Error::Format {
        path: display.clone(),
        message: format!("cannot read header row: {e}"),
    })?;
    let mut columns: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    if opts.timestamp_column && columns.is_empty() {
        return Err(Error::Format {
            path: display,
            message: "timestamp column requested but header row is empty".into(),
        });
    }
    if opts.timestamp_column {
        columns.remove(0);
    }
    let n = columns.len();
    if n == 0 {
        return Err(Error::Format {
            path: display,
            message: "no station columns".into(),
        });
    }

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut timestamps = Vec::new();
    for (ridx, record) in reader.records().enumerate() {
        let row_no = ridx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Format {
            path: display.clone(),
            message: format!("row {row_no}: {e}"),
        })?;
        let expected = n + usize::from(opts.timestamp_column);
        if record.len() != expected {
            return Err(Error::Csv {
                path: display,
                row: row_no,
                col: record.len(),
                message: format!("ragged row: expected {expected} cells, found {}", record.len()),
            });
        }
        let mut cells = record.iter();
        if opts.timestamp_column {
            let raw = cells.next().unwrap();
            let ts: f64 = raw.parse().map_err(|_| Error::Csv {
                path: display.clone(),
                row: row_no,
                col: 1,
                message: format!("timestamp {raw:?} is not numeric"),
            })?;
            if let Some(&last) = timestamps.last() {
                if ts <= last {
                    return Err(Error::Csv {
                        path: display.clone(),
                        row: row_no,
                        col: 1,
                        message: format!("timestamps must increase strictly ({last} then {ts})"),
                    });
                }
            }
            timestamps.push(ts);
        }
        let mut row = Vec::with_capacity(n);
        for (cidx, cell) in cells.enumerate() {
            let col_no = cidx + 1 + usize::from(opts.timestamp_column);
            if cell.is_empty() {
                row.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Csv {
                    path: display.clone(),
                    row: row_no,
                    col: col_no,
                    message: format!("cell {cell:?} is not numeric"),
                })?;
                row.push(Some(v));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput { op: "load_csv" });
    }

    // Last observation carried forward, then zero for leading gaps.
    let mut imputed = 0usize;
    let mut last: Vec<Option<f64>> = vec![None; n];
    let steps = rows.len();
    let mut values = DenseTensor::zeros(&[steps, n, 1]);
    for (t, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let v = match cell {
                Some(v) => {
                    last[j] = Some(*v);
                    *v
                }
                None => {
                    imputed += 1;
                    last[j].unwrap_or(0.0)
                }
            };
            values.set(&[t, j, 0], v);
        }
    }
    Ok(SeriesTable {
        values,
        station_ids: columns,
        timestamps: if opts.timestamp_column {
            Some(timestamps)
        } else {
            None
        },
        units: opts.units.clone(),
        imputed,
    })
}

/// Which segment a windowed dataset came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Per-(station, feature) z-score statistics fitted on the training segment.
#[derive(Clone, Debug)]
pub struct NormStats {
    /// `N x D`.
    pub mean: Matrix,
    /// `N x D`; constant columns get 1 so normalization stays defined.
    pub std: Matrix,
}

impl NormStats {
    /// Fit on a `[steps, N, D]` segment with the population standard deviation.
    pub fn fit(segment: &DenseTensor) -> NormStats {
        let (steps, n, d) = (
            segment.shape()[0],
            segment.shape()[1],
            segment.shape()[2],
        );
        let mut mean = Matrix::zeros(n, d);
        let mut std = Matrix::zeros(n, d);
        for j in 0..n {
            for f in 0..d {
                let mut acc = 0.0;
                for t in 0..steps {
                    acc += segment.get(&[t, j, f]);
                }
                let mu = acc / steps as f64;
                let mut var = 0.0;
                for t in 0..steps {
                    let dev = segment.get(&[t, j, f]) - mu;
                    var += dev * dev;
                }
                let sigma = (var / steps as f64).sqrt();
                mean.set(j, f, mu);
                std.set(j, f, if sigma > 1e-12 { sigma } else { 1.0 });
            }
        }
        NormStats { mean, std }
    }

    /// Normalize in place; the last two modes must be `[N, D]`.
    pub fn normalize(&self, x: &mut DenseTensor) {
        self.apply(x, |v, mu, sigma| (v - mu) / sigma);
    }

    /// Undo [`normalize`](Self::normalize).
    pub fn denormalize(&self, x: &mut DenseTensor) {
        self.apply(x, |v, mu, sigma| v * sigma + mu);
    }

    fn apply(&self, x: &mut DenseTensor, f: impl Fn(f64, f64, f64) -> f64) {
        let rank = x.rank();
        assert!(rank >= 2);
        let (n, d) = (x.shape()[rank - 2], x.shape()[rank - 1]);
        assert_eq!((n, d), (self.mean.rows(), self.mean.cols()));
        let lead: usize = x.shape()[..rank - 2].iter().product();
        let data = x.data_mut();
        for outer in 0..lead {
            for j in 0..n {
                for k in 0..d {
                    let off = (outer * n + j) * d + k;
                    data[off] = f(data[off], self.mean.get(j, k), self.std.get(j, k));
                }
            }
        }
    }
}

/// Forecasting samples cut from one segment.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    /// `[b, l, N, D]`, normalized.
    pub x: DenseTensor,
    /// `[b, t_prime, N, D]`, normalized.
    pub y: DenseTensor,
    pub split: SplitTag,
    /// Absolute series index of each window's first input step.
    pub start_indices: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One input window as a `[1, l, N, D]` tensor.
    pub fn sample_x(&self, b: usize) -> DenseTensor {
        self.slice_batch(&self.x, b)
    }

    /// One target as a `[1, t_prime, N, D]` tensor.
    pub fn sample_y(&self, b: usize) -> DenseTensor {
        self.slice_batch(&self.y, b)
    }

    fn slice_batch(&self, t: &DenseTensor, b: usize) -> DenseTensor {
        let mut shape = t.shape().to_vec();
        let per = t.len() / shape[0];
        shape[0] = 1;
        DenseTensor::from_vec(&shape, t.data()[b * per..(b + 1) * per].to_vec()).unwrap()
    }
}

/// The three windowed splits plus the statistics that normalized them.
#[derive(Clone, Debug)]
pub struct SplitDatasets {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub stats: NormStats,
    pub fractions: (f64, f64, f64),
}

fn count_windows(seg_len: usize, l: usize, t_prime: usize) -> usize {
    (seg_len + 1).saturating_sub(l + t_prime)
}

fn cut_windows(
    series: &DenseTensor,
    seg_start: usize,
    seg_len: usize,
    l: usize,
    t_prime: usize,
    stats: &NormStats,
    split: SplitTag,
) -> WindowedDataset {
    let (n, d) = (series.shape()[1], series.shape()[2]);
    let b = count_windows(seg_len, l, t_prime);
    let mut x = DenseTensor::zeros(&[b, l, n, d]);
    let mut y = DenseTensor::zeros(&[b, t_prime, n, d]);
    let mut start_indices = Vec::with_capacity(b);
    for w in 0..b {
        let start = seg_start + w;
        start_indices.push(start);
        for t in 0..l {
            for j in 0..n {
                for f in 0..d {
                    x.set(&[w, t, j, f], series.get(&[start + t, j, f]));
                }
            }
        }
        for t in 0..t_prime {
            for j in 0..n {
                for f in 0..d {
                    y.set(&[w, t, j, f], series.get(&[start + l + t, j, f]));
                }
            }
        }
    }
    stats.normalize(&mut x);
    stats.normalize(&mut y);
    WindowedDataset {
        x,
        y,
        split,
        start_indices,
    }
}

/// Chronological split into train/val/test segments, then stride-1 windows
/// within each. Fails when the training segment cannot hold a single window,
/// reporting the minimum series length that would.
pub fn window_split(
    s: &SeriesTable,
    l: usize,
    t_prime: usize,
    fractions: (f64, f64, f64),
) -> Result<SplitDatasets> {
    if l == 0 || t_prime == 0 {
        return Err(Error::InvalidArgument {
            op: "window_split",
            message: "window length and horizon must be positive".into(),
        });
    }
    let (f_tr, f_val, f_te) = fractions;
    for (name, f) in [("train", f_tr), ("val", f_val), ("test", f_te)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument {
                op: "window_split",
                message: format!("{name} fraction {f} outside [0, 1]"),
            });
        }
    }
    if f_tr + f_val + f_te > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument {
            op: "window_split",
            message: format!("fractions sum to {} > 1", f_tr + f_val + f_te),
        });
    }
    let steps = s.steps();
    let n_tr = (f_tr * steps as f64).floor() as usize;
    let n_val = (f_val * steps as f64).floor() as usize;
    let n_te = steps - n_tr - n_val;
    let min_seg = l + t_prime;
    if n_tr < min_seg {
        // Smallest total length whose train segment holds one window.
        let mut needed = if f_tr > 0.0 {
            (min_seg as f64 / f_tr).ceil() as usize
        } else {
            usize::MAX
        };
        while f_tr > 0.0 && ((f_tr * needed as f64).floor() as usize) < min_seg {
            needed += 1;
        }
        return Err(Error::InsufficientLength { needed, got: steps });
    }

    // Stats come from the raw training segment only.
    let mut train_seg = DenseTensor::zeros(&[n_tr, s.n_stations(), s.n_features()]);
    train_seg
        .data_mut()
        .copy_from_slice(&s.values.data()[..n_tr * s.n_stations() * s.n_features()]);
    let stats = NormStats::fit(&train_seg);

    let train = cut_windows(&s.values, 0, n_tr, l, t_prime, &stats, SplitTag::Train);
    let val = cut_windows(&s.values, n_tr, n_val, l, t_prime, &stats, SplitTag::Val);
    let test = cut_windows(&s.values, n_tr + n_val, n_te, l, t_prime, &stats, SplitTag::Test);
    Ok(SplitDatasets {
        train,
        val,
        test,
        stats,
        fractions,
    })
}

/// Synthetic generator controls beyond the required four arguments.
#[derive(Clone, Copy, Debug)]
pub struct SynthOptions {
    /// Diffusion mixing rate toward graph neighbors.
    pub gamma: f64,
    /// Daily-cycle sinusoid amplitude.
    pub amplitude: f64,
    /// Sinusoid period in steps.
    pub period: f64,
    /// Geometric-graph connection radius in the unit square.
    pub radius: f64,
    /// Start every node's latent state at this value instead of a random one.
    pub initial_value: Option<f64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            amplitude: 1.0,
            period: 288.0,
            radius: 0.4,
            initial_value: None,
        }
    }
}

/// Standard normal via Box-Muller.
fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Seeded diffusion-on-a-graph generator.
///
/// Builds a random geometric graph, then iterates
/// `z(t+1) = (1 - gamma) z(t) + gamma P z(t)` with P the row-normalized
/// adjacency. The observed series adds a per-node phase-shifted sinusoid and
/// Gaussian noise on top of the latent state, so with zero noise the latent
/// part stays inside the convex hull of its initial values. Returns the
/// generator adjacency for graph-recovery diagnostics.
pub fn synth_diffusion(
    n_nodes: usize,
    steps: usize,
    seed: u64,
    noise: f64,
) -> Result<(SeriesTable, Matrix)> {
    synth_diffusion_with(n_nodes, steps, seed, noise, &SynthOptions::default())
}

pub fn synth_diffusion_with(
    n_nodes: usize,
    steps: usize,
    seed: u64,
    noise: f64,
    opts: &SynthOptions,
) -> Result<(SeriesTable, Matrix)> {
    if n_nodes < 2 {
        return Err(Error::InvalidArgument {
            op: "synth_diffusion",
            message: format!("need at least 2 nodes, got {n_nodes}"),
        });
    }
    if steps == 0 {
        return Err(Error::EmptyInput {
            op: "synth_diffusion",
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let positions: Vec<(f64, f64)> = (0..n_nodes)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let mut adj = Matrix::zeros(n_nodes, n_nodes);
    for i in 0..n_nodes {
        for j in (i + 1)..n_nodes {
            let (dx, dy) = (
                positions[i].0 - positions[j].0,
                positions[i].1 - positions[j].1,
            );
            if (dx * dx + dy * dy).sqrt() < opts.radius {
                adj.set(i, j, 1.0);
                adj.set(j, i, 1.0);
            }
        }
    }
    // Tie isolated nodes to their nearest neighbor so diffusion reaches them.
    for i in 0..n_nodes {
        if adj.row(i).iter().sum::<f64>() == 0.0 {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..n_nodes {
                if j == i {
                    continue;
                }
                let (dx, dy) = (
                    positions[i].0 - positions[j].0,
                    positions[i].1 - positions[j].1,
                );
                let dist = (dx * dx + dy * dy).sqrt();
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            adj.set(i, best, 1.0);
            adj.set(best, i, 1.0);
        }
    }
    // Row-normalized diffusion operator.
    let p = Matrix::from_fn(n_nodes, n_nodes, |i, j| {
        let deg: f64 = adj.row(i).iter().sum();
        if deg > 0.0 {
            adj.get(i, j) / deg
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });

    let phases: Vec<f64> = (0..n_nodes)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    let mut latent: Vec<f64> = match opts.initial_value {
        Some(v) => vec![v; n_nodes],
        None => (0..n_nodes).map(|_| gauss(&mut rng)).collect(),
    };
    let mut values = DenseTensor::zeros(&[steps, n_nodes, 1]);
    for t in 0..steps {
        for (j, &z) in latent.iter().enumerate() {
            let season =
                opts.amplitude * (std::f64::consts::TAU * t as f64 / opts.period + phases[j]).sin();
            let eps = if noise > 0.0 { noise * gauss(&mut rng) } else { 0.0 };
            values.set(&[t, j, 0], z + season + eps);
        }
        let mut next = vec![0.0; n_nodes];
        for (i, nx) in next.iter_mut().enumerate() {
            let diff: f64 = (0..n_nodes).map(|j| p.get(i, j) * latent[j]).sum();
            *nx = (1.0 - opts.gamma) * latent[i] + opts.gamma * diff;
        }
        latent = next;
    }
    let table = SeriesTable {
        values,
        station_ids: (0..n_nodes).map(|i| format!("node{i}")).collect(),
        timestamps: None,
        units: "synthetic".into(),
        imputed: 0,
    };
    Ok((table, adj))
}
