//! Binary and text artifact formats.
//!
//! Every format here is fully deterministic — fixed field order, little-
//! endian integers, raw IEEE-754 doubles, no timestamps — so re-running a
//! pipeline with identical inputs reproduces identical bytes. Single tensors
//! use a four-byte magic, extent list, and row-major payload; compound
//! artifacts (checkpoints, compressed graph pairs, cached datasets) use a
//! named-entry container holding tensor and text records. Floats written
//! into text records use the shortest representation that parses back to the
//! same bits.
//!
//! Magic strings: `STG1`/`TTG1` for rank-3 graph tensors, `LG41` for rank-4
//! lifted filter stacks, `WA31`/`WB31` for rank-3 kernel tensors (plus one
//! layout byte; 0 is the merged filter-major row layout), `TC01` for the
//! container.

use crate::data::{NormStats, SplitDatasets, SplitTag, WindowedDataset};
use crate::error::{Error, Result};
use crate::graph::{SpatialTensorGraph, TemporalTensorGraph};
use crate::layers::{Activation, Composition, SpatialKernel, TemporalKernel};
use crate::matrix::Matrix;
use crate::model::{BlockParams, ForecastTask, GraphSource, ModelParams};
use crate::peps::PepsPair;
use crate::spectral::{LiftedGraph, Provenance};
use crate::tensor::DenseTensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Refuse to allocate tensors above this many elements when reading.
const MAX_READ_ELEMENTS: u64 = 1 << 32;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "truncated integer field"))?;
    Ok(u64::from_le_bytes(buf))
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "truncated float payload"))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_magic(r: &mut impl Read, path: &Path) -> Result<[u8; 4]> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|_| format_err(path, "missing magic"))?;
    Ok(m)
}

fn check_extents(extents: &[u64], path: &Path) -> Result<Vec<usize>> {
    let mut product: u64 = 1;
    for &e in extents {
        product = product
            .checked_mul(e)
            .filter(|&p| p <= MAX_READ_ELEMENTS)
            .ok_or_else(|| format_err(path, format!("extents {extents:?} overflow")))?;
    }
    Ok(extents.iter().map(|&e| e as usize).collect())
}

/// Write one tensor with the given magic and its shape as the extent list.
fn write_tensor_file(path: &Path, magic: &[u8; 4], t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(magic)?;
    for &e in t.shape() {
        write_u64(&mut w, e as u64)?;
    }
    write_f64s(&mut w, t.data())?;
    w.flush()?;
    Ok(())
}

fn read_tensor_file(path: &Path, magic: &[u8; 4], rank: usize) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let found = read_magic(&mut r, path)?;
    if &found != magic {
        return Err(format_err(
            path,
            format!(
                "magic {:?} does not match expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let mut extents = Vec::with_capacity(rank);
    for _ in 0..rank {
        extents.push(read_u64(&mut r, path)?);
    }
    let shape = check_extents(&extents, path)?;
    let len: usize = shape.iter().product();
    let data = read_f64s(&mut r, len, path)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after payload"));
    }
    DenseTensor::from_vec(&shape, data)
}

/// Serialize a spatial graph's weight tensor (`STG1`, 3 extents).
pub fn write_stg(path: &Path, g: &SpatialTensorGraph) -> Result<()> {
    write_tensor_file(path, b"STG1", &g.weights)
}

/// Read back an `STG1` weight tensor.
pub fn read_stg_weights(path: &Path) -> Result<DenseTensor> {
    read_tensor_file(path, b"STG1", 3)
}

/// Serialize a temporal graph's weight tensor (`TTG1`, 3 extents).
pub fn write_ttg(path: &Path, g: &TemporalTensorGraph) -> Result<()> {
    write_tensor_file(path, b"TTG1", &g.weights)
}

/// Read back a `TTG1` weight tensor.
pub fn read_ttg_weights(path: &Path) -> Result<DenseTensor> {
    read_tensor_file(path, b"TTG1", 3)
}

/// Serialize a lifted filter stack (`LG41`, 4 extents).
pub fn write_lifted(path: &Path, g: &LiftedGraph) -> Result<()> {
    write_tensor_file(path, b"LG41", &g.filters)
}

/// Read back an `LG41` filter stack.
pub fn read_lifted_filters(path: &Path) -> Result<DenseTensor> {
    read_tensor_file(path, b"LG41", 4)
}

/// Write a lifted graph together with its spectral metadata (container
/// format, unlike the filters-only `LG41`).
pub fn write_lifted_graph(path: &Path, g: &LiftedGraph) -> Result<()> {
    let mut meta = MetaText::new();
    meta.put(
        "provenance",
        match g.provenance {
            Provenance::Spatial => "spatial",
            Provenance::Temporal => "temporal",
        },
    )
    .put("warned", g.warned)
    .put_f64s("lambda_max", &g.lambda_max);
    let mut c = Container::new();
    c.push_text("meta", meta.0)?;
    c.push_tensor("filters", g.filters.clone())?;
    c.write(path)
}

/// Restore a lifted graph written by [`write_lifted_graph`].
pub fn read_lifted_graph(path: &Path) -> Result<LiftedGraph> {
    let c = Container::read(path)?;
    let meta = c
        .text("meta")
        .ok_or_else(|| format_err(path, "missing meta entry"))?;
    let filters = c
        .tensor("filters")
        .cloned()
        .ok_or_else(|| format_err(path, "missing filters entry"))?;
    if filters.rank() != 4 {
        return Err(format_err(
            path,
            format!("lifted filters must have rank 4, got {}", filters.rank()),
        ));
    }
    let provenance = match meta_lookup(meta, "provenance", path)? {
        "spatial" => Provenance::Spatial,
        "temporal" => Provenance::Temporal,
        other => return Err(format_err(path, format!("unknown provenance {other:?}"))),
    };
    let lambda_max = meta_parse_f64s(meta, "lambda_max", path)?;
    if lambda_max.len() != filters.shape()[3] {
        return Err(format_err(
            path,
            format!(
                "lambda count {} does not match slice count {}",
                lambda_max.len(),
                filters.shape()[3]
            ),
        ));
    }
    Ok(LiftedGraph {
        filters,
        provenance,
        lambda_max,
        warned: meta_parse(meta, "warned", path)?,
    })
}

/// The only kernel row layout currently defined: row index merges the filter
/// order and input channel with the filter order major.
pub const KERNEL_LAYOUT_MERGED_FILTER_MAJOR: u8 = 0;

fn write_kernel_file(path: &Path, magic: &[u8; 4], w: &DenseTensor) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(magic)?;
    for &e in w.shape() {
        write_u64(&mut out, e as u64)?;
    }
    out.write_all(&[KERNEL_LAYOUT_MERGED_FILTER_MAJOR])?;
    write_f64s(&mut out, w.data())?;
    out.flush()?;
    Ok(())
}

fn read_kernel_file(path: &Path, magic: &[u8; 4]) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let found = read_magic(&mut r, path)?;
    if &found != magic {
        return Err(format_err(
            path,
            format!("unexpected magic {:?}", String::from_utf8_lossy(&found)),
        ));
    }
    let mut extents = Vec::with_capacity(3);
    for _ in 0..3 {
        extents.push(read_u64(&mut r, path)?);
    }
    let shape = check_extents(&extents, path)?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| format_err(path, "missing layout tag"))?;
    if tag[0] != KERNEL_LAYOUT_MERGED_FILTER_MAJOR {
        return Err(format_err(path, format!("unknown layout tag {}", tag[0])));
    }
    let len: usize = shape.iter().product();
    let data = read_f64s(&mut r, len, path)?;
    DenseTensor::from_vec(&shape, data)
}

/// Serialize a spatial kernel (`WA31`, 3 extents, layout byte).
pub fn write_spatial_kernel(path: &Path, k: &SpatialKernel) -> Result<()> {
    write_kernel_file(path, b"WA31", &k.w)
}

pub fn read_spatial_kernel(path: &Path) -> Result<SpatialKernel> {
    SpatialKernel::new(read_kernel_file(path, b"WA31")?)
}

/// Serialize a temporal kernel (`WB31`, 3 extents, layout byte).
pub fn write_temporal_kernel(path: &Path, k: &TemporalKernel) -> Result<()> {
    write_kernel_file(path, b"WB31", &k.w)
}

pub fn read_temporal_kernel(path: &Path) -> Result<TemporalKernel> {
    TemporalKernel::new(read_kernel_file(path, b"WB31")?)
}

/// Human-readable nonzero entries of a rank-3 graph tensor, one
/// `i,j,t,weight` line per edge in row-major order.
pub fn write_edge_list(path: &Path, weights: &DenseTensor) -> Result<()> {
    if weights.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "write_edge_list",
            expected: vec![3],
            got: vec![weights.rank()],
        });
    }
    let (n0, n1, n2) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
    );
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..n0 {
        for j in 0..n1 {
            for t in 0..n2 {
                let v = weights.get(&[i, j, t]);
                if v != 0.0 {
                    writeln!(w, "{i},{j},{t},{v}")?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One named record inside a [`Container`].
#[derive(Clone, Debug, PartialEq)]
pub enum ContainerEntry {
    Tensor(DenseTensor),
    Text(String),
}

/// Ordered named-entry archive (`TC01`). Entry order is the insertion
/// order, which makes the byte stream a pure function of the content.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, ContainerEntry)>,
}

const ENTRY_TENSOR: u8 = 0;
const ENTRY_TEXT: u8 = 1;

impl Container {
    pub fn new() -> Container {
        Container::default()
    }

    pub fn push_tensor(&mut self, name: &str, t: DenseTensor) -> Result<()> {
        self.push(name, ContainerEntry::Tensor(t))
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) -> Result<()> {
        let t = DenseTensor::from_vec(&[m.rows(), m.cols()], m.data().to_vec())?;
        self.push(name, ContainerEntry::Tensor(t))
    }

    pub fn push_text(&mut self, name: &str, s: impl Into<String>) -> Result<()> {
        self.push(name, ContainerEntry::Text(s.into()))
    }

    fn push(&mut self, name: &str, entry: ContainerEntry) -> Result<()> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidArgument {
                op: "Container::push",
                message: format!("duplicate entry name {name:?}"),
            });
        }
        self.entries.push((name.to_string(), entry));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.iter().find_map(|(n, e)| match e {
            ContainerEntry::Tensor(t) if n == name => Some(t),
            _ => None,
        })
    }

    pub fn matrix(&self, name: &str) -> Option<Matrix> {
        let t = self.tensor(name)?;
        if t.rank() != 2 {
            return None;
        }
        Some(Matrix::from_vec(t.shape()[0], t.shape()[1], t.data().to_vec()).unwrap())
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.entries.iter().find_map(|(n, e)| match e {
            ContainerEntry::Text(s) if n == name => Some(s.as_str()),
            _ => None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"TC01")?;
        write_u64(&mut w, self.entries.len() as u64)?;
        for (name, entry) in &self.entries {
            write_u64(&mut w, name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            match entry {
                ContainerEntry::Tensor(t) => {
                    w.write_all(&[ENTRY_TENSOR])?;
                    write_u64(&mut w, t.rank() as u64)?;
                    for &e in t.shape() {
                        write_u64(&mut w, e as u64)?;
                    }
                    write_f64s(&mut w, t.data())?;
                }
                ContainerEntry::Text(s) => {
                    w.write_all(&[ENTRY_TEXT])?;
                    write_u64(&mut w, s.len() as u64)?;
                    w.write_all(s.as_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Container> {
        let mut r = BufReader::new(File::open(path)?);
        let magic = read_magic(&mut r, path)?;
        if &magic != b"TC01" {
            return Err(format_err(
                path,
                format!("unexpected magic {:?}", String::from_utf8_lossy(&magic)),
            ));
        }
        let count = read_u64(&mut r, path)?;
        if count > 1 << 20 {
            return Err(format_err(path, format!("implausible entry count {count}")));
        }
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = read_u64(&mut r, path)? as usize;
            if name_len > 1 << 16 {
                return Err(format_err(path, "implausible name length"));
            }
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)
                .map_err(|_| format_err(path, "truncated entry name"))?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| format_err(path, "entry name is not UTF-8"))?;
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)
                .map_err(|_| format_err(path, "truncated entry kind"))?;
            match kind[0] {
                ENTRY_TENSOR => {
                    let rank = read_u64(&mut r, path)? as usize;
                    if rank > 8 {
                        return Err(format_err(path, format!("implausible rank {rank}")));
                    }
                    let mut extents = Vec::with_capacity(rank);
                    for _ in 0..rank {
                        extents.push(read_u64(&mut r, path)?);
                    }
                    let shape = check_extents(&extents, path)?;
                    let len: usize = shape.iter().product();
                    let data = read_f64s(&mut r, len, path)?;
                    c.push(&name, ContainerEntry::Tensor(DenseTensor::from_vec(&shape, data)?))?;
                }
                ENTRY_TEXT => {
                    let len = read_u64(&mut r, path)? as usize;
                    if len > 1 << 24 {
                        return Err(format_err(path, "implausible text length"));
                    }
                    let mut buf = vec![0u8; len];
                    r.read_exact(&mut buf)
                        .map_err(|_| format_err(path, "truncated text entry"))?;
                    let s = String::from_utf8(buf)
                        .map_err(|_| format_err(path, "text entry is not UTF-8"))?;
                    c.push(&name, ContainerEntry::Text(s))?;
                }
                other => {
                    return Err(format_err(path, format!("unknown entry kind {other}")));
                }
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(format_err(path, "trailing bytes after last entry"));
        }
        Ok(c)
    }
}

/// `key=value` line building for container metadata records.
struct MetaText(String);

impl MetaText {
    fn new() -> MetaText {
        MetaText(String::new())
    }

    fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.0.push_str(key);
        self.0.push('=');
        self.0.push_str(&value.to_string());
        self.0.push('\n');
        self
    }

    fn put_f64s(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.put(key, joined.join(","))
    }
}

fn meta_lookup<'a>(meta: &'a str, key: &str, path: &Path) -> Result<&'a str> {
    for line in meta.lines() {
        if let Some(rest) = line.strip_prefix(key) {
            if let Some(v) = rest.strip_prefix('=') {
                return Ok(v);
            }
        }
    }
    Err(format_err(path, format!("metadata key {key:?} missing")))
}

fn meta_parse<T: std::str::FromStr>(meta: &str, key: &str, path: &Path) -> Result<T> {
    meta_lookup(meta, key, path)?
        .parse()
        .map_err(|_| format_err(path, format!("metadata key {key:?} unparseable")))
}

fn meta_parse_f64s(meta: &str, key: &str, path: &Path) -> Result<Vec<f64>> {
    let raw = meta_lookup(meta, key, path)?;
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.parse()
                .map_err(|_| format_err(path, format!("bad float in {key:?}")))
        })
        .collect()
}

fn composition_name(c: Composition) -> &'static str {
    match c {
        Composition::Sequential => "sequential",
        Composition::Sandwich => "sandwich",
        Composition::Additive => "additive",
    }
}

fn composition_from_name(s: &str, path: &Path) -> Result<Composition> {
    match s {
        "sequential" => Ok(Composition::Sequential),
        "sandwich" => Ok(Composition::Sandwich),
        "additive" => Ok(Composition::Additive),
        other => Err(format_err(path, format!("unknown composition {other:?}"))),
    }
}

/// Write a model checkpoint.
pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut meta = MetaText::new();
    meta.put("window", params.task.window)
        .put("horizon", params.task.horizon)
        .put("d_in", params.d_in)
        .put("c_hidden", params.c_hidden)
        .put("n_blocks", params.blocks.len())
        .put("composition", composition_name(params.composition))
        .put(
            "activation",
            match params.activation {
                Activation::None => "none",
                Activation::Relu => "relu",
            },
        )
        .put(
            "graph_source",
            match params.graph_source {
                GraphSource::Lifted => "lifted",
                GraphSource::Compressed => "compressed",
            },
        )
        .put("a4_warned", params.a4.warned)
        .put("b4_warned", params.b4.warned)
        .put_f64s("a4_lambda", &params.a4.lambda_max)
        .put_f64s("b4_lambda", &params.b4.lambda_max);

    let mut c = Container::new();
    c.push_text("meta", meta.0)?;
    c.push_matrix("input_proj", &params.input_proj)?;
    for (i, blk) in params.blocks.iter().enumerate() {
        c.push_tensor(&format!("block{i}.w_a"), blk.w_a.w.clone())?;
        c.push_tensor(&format!("block{i}.w_b"), blk.w_b.w.clone())?;
        if let Some(w2) = &blk.w_b2 {
            c.push_tensor(&format!("block{i}.w_b2"), w2.w.clone())?;
        }
    }
    c.push_matrix("output_head", &params.output_head)?;
    c.push_tensor("a4", params.a4.filters.clone())?;
    c.push_tensor("b4", params.b4.filters.clone())?;
    c.write(path)
}

/// Restore a model checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let c = Container::read(path)?;
    let meta = c
        .text("meta")
        .ok_or_else(|| format_err(path, "missing meta entry"))?;
    let task = ForecastTask {
        window: meta_parse(meta, "window", path)?,
        horizon: meta_parse(meta, "horizon", path)?,
    };
    let d_in: usize = meta_parse(meta, "d_in", path)?;
    let c_hidden: usize = meta_parse(meta, "c_hidden", path)?;
    let n_blocks: usize = meta_parse(meta, "n_blocks", path)?;
    let composition = composition_from_name(meta_lookup(meta, "composition", path)?, path)?;
    let activation = match meta_lookup(meta, "activation", path)? {
        "none" => Activation::None,
        "relu" => Activation::Relu,
        other => return Err(format_err(path, format!("unknown activation {other:?}"))),
    };
    let graph_source = match meta_lookup(meta, "graph_source", path)? {
        "lifted" => GraphSource::Lifted,
        "compressed" => GraphSource::Compressed,
        other => return Err(format_err(path, format!("unknown graph source {other:?}"))),
    };
    let need_tensor = |name: &str| -> Result<DenseTensor> {
        c.tensor(name)
            .cloned()
            .ok_or_else(|| format_err(path, format!("missing tensor entry {name:?}")))
    };
    let need_matrix = |name: &str| -> Result<Matrix> {
        c.matrix(name)
            .ok_or_else(|| format_err(path, format!("missing matrix entry {name:?}")))
    };
    let mut blocks = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        let w_a = SpatialKernel::new(need_tensor(&format!("block{i}.w_a"))?)?;
        let w_b = TemporalKernel::new(need_tensor(&format!("block{i}.w_b"))?)?;
        let w_b2 = match c.tensor(&format!("block{i}.w_b2")) {
            Some(t) => Some(TemporalKernel::new(t.clone())?),
            None => None,
        };
        blocks.push(BlockParams { w_a, w_b, w_b2 });
    }
    let a4 = LiftedGraph {
        filters: need_tensor("a4")?,
        provenance: Provenance::Spatial,
        lambda_max: meta_parse_f64s(meta, "a4_lambda", path)?,
        warned: meta_parse(meta, "a4_warned", path)?,
    };
    let b4 = LiftedGraph {
        filters: need_tensor("b4")?,
        provenance: Provenance::Temporal,
        lambda_max: meta_parse_f64s(meta, "b4_lambda", path)?,
        warned: meta_parse(meta, "b4_warned", path)?,
    };
    Ok(ModelParams {
        input_proj: need_matrix("input_proj")?,
        blocks,
        output_head: need_matrix("output_head")?,
        a4,
        b4,
        composition,
        activation,
        task,
        d_in,
        c_hidden,
        graph_source,
    })
}

/// Write a compressed graph pair with its fit metadata.
pub fn write_peps(path: &Path, p: &PepsPair) -> Result<()> {
    let mut meta = MetaText::new();
    meta.put("r_n", p.r_n())
        .put("r_t", p.r_t())
        .put("sweeps_used", p.sweeps_used)
        .put("joint_error", p.joint_error)
        .put_f64s("history", &p.history);
    let mut c = Container::new();
    c.push_text("meta", meta.0)?;
    c.push_matrix("node_factor", &p.node_factor)?;
    c.push_matrix("time_factor", &p.time_factor)?;
    c.push_tensor("core_a", p.core_a.clone())?;
    c.push_tensor("core_b", p.core_b.clone())?;
    c.write(path)
}

/// Restore a compressed graph pair written by [`write_peps`].
pub fn read_peps(path: &Path) -> Result<PepsPair> {
    let c = Container::read(path)?;
    let meta = c
        .text("meta")
        .ok_or_else(|| format_err(path, "missing meta entry"))?;
    let need_matrix = |name: &str| -> Result<Matrix> {
        c.matrix(name)
            .ok_or_else(|| format_err(path, format!("missing matrix entry {name:?}")))
    };
    let need_tensor = |name: &str| -> Result<DenseTensor> {
        c.tensor(name)
            .cloned()
            .ok_or_else(|| format_err(path, format!("missing tensor entry {name:?}")))
    };
    Ok(PepsPair {
        node_factor: need_matrix("node_factor")?,
        time_factor: need_matrix("time_factor")?,
        core_a: need_tensor("core_a")?,
        core_b: need_tensor("core_b")?,
        joint_error: meta_parse(meta, "joint_error", path)?,
        sweeps_used: meta_parse(meta, "sweeps_used", path)?,
        history: meta_parse_f64s(meta, "history", path)?,
    })
}

fn split_name(tag: SplitTag) -> &'static str {
    match tag {
        SplitTag::Train => "train",
        SplitTag::Val => "val",
        SplitTag::Test => "test",
    }
}

fn push_split(c: &mut Container, ds: &WindowedDataset) -> Result<()> {
    let name = split_name(ds.split);
    c.push_tensor(&format!("{name}_x"), ds.x.clone())?;
    c.push_tensor(&format!("{name}_y"), ds.y.clone())?;
    let starts: Vec<f64> = ds.start_indices.iter().map(|&s| s as f64).collect();
    c.push_tensor(
        &format!("{name}_starts"),
        DenseTensor::from_vec(&[starts.len()], starts)?,
    )?;
    Ok(())
}

fn read_split(c: &Container, tag: SplitTag, path: &Path) -> Result<WindowedDataset> {
    let name = split_name(tag);
    let need = |suffix: &str| -> Result<DenseTensor> {
        c.tensor(&format!("{name}_{suffix}"))
            .cloned()
            .ok_or_else(|| format_err(path, format!("missing entry {name}_{suffix}")))
    };
    let x = need("x")?;
    let y = need("y")?;
    let starts = need("starts")?;
    Ok(WindowedDataset {
        x,
        y,
        split: tag,
        start_indices: starts.data().iter().map(|&v| v as usize).collect(),
    })
}

/// Cache windowed splits plus their normalization statistics and station
/// labels in one container.
pub fn write_dataset(
    path: &Path,
    splits: &SplitDatasets,
    station_ids: &[String],
    units: &str,
    steps: usize,
) -> Result<()> {
    let mut meta = MetaText::new();
    meta.put("fractions", {
        let (a, b, cf) = splits.fractions;
        format!("{a},{b},{cf}")
    })
    .put("units", units)
    .put("steps", steps)
    .put("stations", station_ids.join(","));
    let mut c = Container::new();
    c.push_text("meta", meta.0)?;
    push_split(&mut c, &splits.train)?;
    push_split(&mut c, &splits.val)?;
    push_split(&mut c, &splits.test)?;
    c.push_matrix("mean", &splits.stats.mean)?;
    c.push_matrix("std", &splits.stats.std)?;
    c.write(path)
}

/// Restore a dataset cache; returns the splits with the station labels, the
/// unit string, and the length of the source series.
pub fn read_dataset(path: &Path) -> Result<(SplitDatasets, Vec<String>, String, usize)> {
    let c = Container::read(path)?;
    let meta = c
        .text("meta")
        .ok_or_else(|| format_err(path, "missing meta entry"))?;
    let fr = meta_parse_f64s(meta, "fractions", path)?;
    if fr.len() != 3 {
        return Err(format_err(path, "fractions must have three components"));
    }
    let stats = NormStats {
        mean: c
            .matrix("mean")
            .ok_or_else(|| format_err(path, "missing mean"))?,
        std: c
            .matrix("std")
            .ok_or_else(|| format_err(path, "missing std"))?,
    };
    let splits = SplitDatasets {
        train: read_split(&c, SplitTag::Train, path)?,
        val: read_split(&c, SplitTag::Val, path)?,
        test: read_split(&c, SplitTag::Test, path)?,
        stats,
        fractions: (fr[0], fr[1], fr[2]),
    };
    let stations: Vec<String> = {
        let raw = meta_lookup(meta, "stations", path)?;
        if raw.is_empty() {
            Vec::new()
        } else {
            raw.split(',').map(|s| s.to_string()).collect()
        }
    };
    let units = meta_lookup(meta, "units", path)?.to_string();
    let steps = meta_parse_f64s(meta, "steps", path)?[0] as usize;
    Ok((splits, stations, units, steps))
}
