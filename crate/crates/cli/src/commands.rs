//! Subcommand implementations. Every run writes `resolved_config.json` and
//! `metadata.json` (timestamps, wall clock) into its output directory; all
//! other files depend only on the config.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use diffconv::amg::{build_hierarchy, VisitOrder};
use diffconv::bench::{cost_table, measure_latency, reference_specs, CostSpec, LatencySummary};
use diffconv::diffops::{
    assemble_edge_average, assemble_gradient, assemble_transposed_derivative, extract_stencil, fit_pattern,
    reference_pattern, Term,
};
use diffconv::geometry::io::{read_cloud, write_cloud};
use diffconv::geometry::{knn_graph, regular_grid, synth_dataset, PointCloud, Shape};
use diffconv::network::{evaluate, load_checkpoint, save_checkpoint, train as train_network, Network, NetworkConfig};
use diffconv::sparse::{read_matrix_market, write_matrix_market, SparseOperator};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{config, CliError, Common};

type Res = Result<(), CliError>;

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Res {
    let text = serde_json::to_string_pretty(v).expect("output serializes") + "\n";
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

/// An output directory with the resolved config already written.
struct Run {
    dir: PathBuf,
    command: &'static str,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    fn start<T: Serialize>(command: &'static str, dir: &Path, cfg: &T) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
        write_json(&dir.join("resolved_config.json"), cfg)?;
        Ok(Run { dir: dir.to_path_buf(), command, started: SystemTime::now(), clock: Instant::now() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn finish(self, extra: Value) -> Res {
        let mut meta = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_seconds": self.started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            "wall_clock_seconds": self.clock.elapsed().as_secs_f64(),
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
            m.extend(e);
        }
        write_json(&self.path("metadata.json"), &meta)
    }
}

fn load<T: Serialize + DeserializeOwned + Default>(common: &Common, mut overrides: Vec<(String, Value)>) -> Result<T, CliError> {
    if let Some(out) = &common.out {
        overrides.push(("out_dir".into(), json!(out)));
    }
    overrides.extend(common.set.iter().cloned());
    config::resolve(common.config.as_deref(), &overrides)
}

fn required<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::usage(format!("missing required config key '{key}'")))
}

fn input_cloud(path: &Path) -> Result<PointCloud, CliError> {
    read_cloud(path).map_err(|e| CliError::io(format!("cannot load cloud {}: {e}", path.display())))
}

// ---- gen-data ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataConfig {
    classes: String,
    n: usize,
    points: usize,
    noise: f64,
    seed: u64,
    out_dir: PathBuf,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            classes: "sphere,cube,torus,cone".into(),
            n: 50,
            points: 256,
            noise: 0.01,
            seed: 0,
            out_dir: "data".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub label: usize,
}

/// `index.json` of a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub classes: Vec<String>,
    pub clouds: Vec<IndexEntry>,
}

pub fn gen_data(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: GenDataConfig = load(common, flags)?;
    let shapes = Shape::parse_list(&cfg.classes)?;
    let clouds = synth_dataset(&shapes, cfg.n, cfg.points, cfg.noise, cfg.seed)?;
    let run = Run::start("gen-data", &cfg.out_dir, &cfg)?;
    let mut entries = Vec::with_capacity(clouds.len());
    for (i, c) in clouds.iter().enumerate() {
        let file = format!("cloud_{i:05}.csv");
        write_cloud(run.path(&file), c)?;
        entries.push(IndexEntry { file, label: c.label.expect("synthetic clouds are labelled") });
    }
    let index = DatasetIndex { classes: shapes.iter().map(|s| s.name().to_string()).collect(), clouds: entries };
    write_json(&run.path("index.json"), &index)?;
    println!("wrote {} clouds to {}", clouds.len(), cfg.out_dir.display());
    run.finish(json!({}))
}

fn load_dataset(dir: &Path) -> Result<(Vec<PointCloud>, usize), CliError> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let index: DatasetIndex =
        serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let clouds = index
        .clouds
        .iter()
        .map(|e| Ok(input_cloud(&dir.join(&e.file))?.with_label(e.label)))
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok((clouds, index.classes.len()))
}

// ---- stencil ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StencilConfig {
    grid: String,
    h: f64,
    term: String,
    vertex: Option<usize>,
    out_dir: PathBuf,
}

impl Default for StencilConfig {
    fn default() -> Self {
        StencilConfig { grid: "8x8".into(), h: 1.0, term: "lapx".into(), vertex: None, out_dir: "stencil".into() }
    }
}

fn parse_grid(s: &str) -> Result<[usize; 3], CliError> {
    let dims = s
        .split('x')
        .map(|d| d.trim().parse::<usize>().map_err(|_| CliError::usage(format!("bad grid '{s}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    match dims[..] {
        [x, y] => Ok([x, y, 1]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(CliError::usage(format!("grid '{s}' must be NXxNY or NXxNYxNZ"))),
    }
}

#[derive(Debug, Serialize)]
struct StencilEntry {
    offset: [i64; 3],
    value: f64,
}

#[derive(Debug, Serialize)]
struct StencilReport {
    term: String,
    grid: [usize; 3],
    h: f64,
    vertex: usize,
    entries: Vec<StencilEntry>,
    reference_pattern: Vec<StencilEntry>,
    scale: f64,
    max_deviation: f64,
    max_off_star: f64,
}

pub fn stencil(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: StencilConfig = load(common, flags)?;
    let term: Term = cfg.term.parse().map_err(|e: diffconv::Error| CliError::usage(e.to_string()))?;
    let dims = parse_grid(&cfg.grid)?;
    if let Some(&d) = dims.iter().find(|&&d| d == 0 || d == 2) {
        return Err(CliError::usage(format!("grid {} has an axis of {d} points and no interior vertex", cfg.grid)));
    }
    if let Some(a) = term.axis() {
        if dims[a] < 3 {
            return Err(CliError::usage(format!("term {term} needs at least 3 points along its axis")));
        }
    }
    let (cloud, graph) = regular_grid(dims[0], dims[1], dims[2], cfg.h)?;
    let vertex = cfg.vertex.unwrap_or(dims[0] / 2 + dims[0] * (dims[1] / 2 + dims[1] * (dims[2] / 2)));
    if vertex >= cloud.len() {
        return Err(CliError::usage(format!("vertex {vertex} out of range for {} vertices", cloud.len())));
    }
    let s = extract_stencil(&cloud, &graph, term, vertex)?;
    if s.boundary {
        return Err(CliError::usage(format!("vertex {vertex} lies on the grid boundary")));
    }
    let pattern = reference_pattern(term);
    let fit = fit_pattern(&s.entries, &pattern);
    let to_entries = |m: &std::collections::BTreeMap<[i64; 3], f64>| {
        m.iter().map(|(&offset, &value)| StencilEntry { offset, value }).collect::<Vec<_>>()
    };
    let report = StencilReport {
        term: term.name().into(),
        grid: dims,
        h: cfg.h,
        vertex,
        entries: to_entries(&s.entries),
        reference_pattern: to_entries(&pattern),
        scale: fit.scale,
        max_deviation: fit.max_deviation,
        max_off_star: s.max_off_star(),
    };
    println!("{term} stencil at vertex {vertex} of a {} grid, h = {}", cfg.grid, cfg.h);
    for e in &report.entries {
        println!("  {:>3} {:>3} {:>3}  {:>12.6}", e.offset[0], e.offset[1], e.offset[2], e.value);
    }
    let pat: Vec<String> = pattern.values().map(|v| format!("{v}")).collect();
    let inv = 1.0 / fit.scale;
    let frac = if (inv - inv.round()).abs() < 1e-9 { format!(" (1/{})", inv.round()) } else { String::new() };
    println!("pattern [{}] scale {:.6}{frac} deviation {:.1e}", pat.join(", "), fit.scale, fit.max_deviation);
    let run = Run::start("stencil", &cfg.out_dir, &cfg)?;
    write_json(&run.path("stencil.json"), &report)?;
    run.finish(json!({}))
}

// ---- assemble ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AssembleConfig {
    cloud: Option<PathBuf>,
    k: usize,
    out_dir: PathBuf,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig { cloud: None, k: 10, out_dir: "operators".into() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
}

fn write_operator(run: &Run, name: &str, a: &SparseOperator) -> Result<OperatorEntry, CliError> {
    let file = format!("{name}.mtx");
    write_matrix_market(run.path(&file), a)?;
    Ok(OperatorEntry { name: name.into(), file, rows: a.n_rows(), cols: a.n_cols(), nnz: a.nnz() })
}

pub fn assemble(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: AssembleConfig = load(common, flags)?;
    let cloud = input_cloud(required(&cfg.cloud, "cloud")?)?;
    let graph = knn_graph(&cloud.positions, cfg.k)?;
    let ops = [
        ("gradient", assemble_gradient(&graph, &cloud.positions)?),
        ("edge_average", assemble_edge_average(&graph)?),
        ("transposed_derivative", assemble_transposed_derivative(&graph, &cloud.positions)?),
    ];
    let run = Run::start("assemble", &cfg.out_dir, &cfg)?;
    let entries = ops.iter().map(|(n, a)| write_operator(&run, n, a)).collect::<Result<Vec<_>, _>>()?;
    for e in &entries {
        println!("{:<22} {}x{} nnz {}", e.name, e.rows, e.cols, e.nnz);
    }
    write_json(
        &run.path("manifest.json"),
        &json!({ "vertices": cloud.len(), "edges": graph.num_edges(), "k": cfg.k, "operators": entries }),
    )?;
    run.finish(json!({}))
}

// ---- pool ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PoolConfig {
    cloud: Option<PathBuf>,
    k: usize,
    depth: usize,
    visit_order: VisitOrder,
    out_dir: PathBuf,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { cloud: None, k: 10, depth: 2, visit_order: VisitOrder::Natural, out_dir: "hierarchy".into() }
    }
}

/// Largest `|P·1 − 1|` accepted when re-reading written prolongations.
const ROW_SUM_TOL: f64 = 1e-12;

pub fn pool(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: PoolConfig = load(common, flags)?;
    let cloud = input_cloud(required(&cfg.cloud, "cloud")?)?;
    let graph = knn_graph(&cloud.positions, cfg.k)?;
    let h = build_hierarchy(&graph, &cloud.positions, cfg.depth, cfg.visit_order)?;
    let run = Run::start("pool", &cfg.out_dir, &cfg)?;
    let mut files = Vec::new();
    let mut row_sum_error: f64 = 0.0;
    for (l, t) in h.transfers.iter().enumerate() {
        files.push(write_operator(&run, &format!("restriction_{l}"), &t.restriction)?);
        let p = write_operator(&run, &format!("prolongation_{l}"), &t.prolongation)?;
        let back = read_matrix_market(run.path(&p.file))?;
        row_sum_error = back.row_sums().iter().fold(row_sum_error, |m, s| m.max((s - 1.0).abs()));
        files.push(p);
    }
    let summary = h.summary();
    println!("level sizes {:?}", summary.level_sizes);
    write_json(
        &run.path("summary.json"),
        &json!({ "hierarchy": summary, "operators": files, "prolongation_row_sum_error": row_sum_error }),
    )?;
    if row_sum_error > ROW_SUM_TOL {
        return Err(CliError::io(format!("written prolongation rows sum to 1 ± {row_sum_error:e}")));
    }
    run.finish(json!({}))
}

// ---- train / eval ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    train_data: Option<PathBuf>,
    test_data: Option<PathBuf>,
    network: NetworkConfig,
    out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { train_data: None, test_data: None, network: NetworkConfig::default(), out_dir: "run".into() }
    }
}

pub fn train(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: TrainConfig = load(common, flags)?;
    cfg.network.validate()?;
    let (train_set, classes) = load_dataset(required(&cfg.train_data, "train_data")?)?;
    if classes > cfg.network.num_classes {
        return Err(CliError::usage(format!(
            "dataset has {classes} classes, network.num_classes is {}",
            cfg.network.num_classes
        )));
    }
    let test_set = cfg.test_data.as_deref().map(load_dataset).transpose()?.map(|(c, _)| c);
    let run = Run::start("train", &cfg.out_dir, &cfg)?;
    let mut net = Network::new(cfg.network.clone())?;
    let report = train_network(&mut net, &train_set, test_set.as_deref())?;
    save_checkpoint(&net, &run.path("checkpoint"))?;
    write_json(&run.path("report.json"), &report)?;
    let lines: String = report.epochs.iter().map(|e| serde_json::to_string(e).expect("stats serialize") + "\n").collect();
    fs::write(run.path("epochs.jsonl"), lines)?;
    if let Some(last) = report.epochs.last() {
        println!("epoch {} loss {:.4} train accuracy {:.3}", last.epoch, last.loss, last.train_accuracy);
    }
    if let (Some(oa), Some(mca)) = (report.final_overall_accuracy, report.final_mean_class_accuracy) {
        println!("test overall accuracy {oa:.4} mean class accuracy {mca:.4}");
    }
    run.finish(json!({ "training_wall_clock_seconds": report.wall_clock_seconds }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    out_dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { checkpoint: None, data: None, out_dir: "eval".into() }
    }
}

pub fn eval(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: EvalConfig = load(common, flags)?;
    let dir = required(&cfg.checkpoint, "checkpoint")?;
    let mut net = load_checkpoint(dir).map_err(|e| CliError::io(format!("cannot load checkpoint {}: {e}", dir.display())))?;
    let (data, _) = load_dataset(required(&cfg.data, "data")?)?;
    let (oa, mca) = evaluate(&mut net, &data)?;
    let run = Run::start("eval", &cfg.out_dir, &cfg)?;
    write_json(
        &run.path("eval.json"),
        &json!({ "clouds": data.len(), "overall_accuracy": oa, "mean_class_accuracy": mca }),
    )?;
    println!("overall accuracy {oa:.4} mean class accuracy {mca:.4} on {} clouds", data.len());
    run.finish(json!({}))
}

// ---- bench ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchConfig {
    /// Prepend the standard comparison set to `specs`.
    table1: bool,
    specs: Vec<CostSpec>,
    latency: bool,
    repetitions: usize,
    seed: u64,
    out_dir: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { table1: false, specs: Vec::new(), latency: true, repetitions: 20, seed: 0, out_dir: "bench".into() }
    }
}

pub fn bench(common: &Common, flags: Vec<(String, Value)>) -> Res {
    let cfg: BenchConfig = load(common, flags)?;
    let mut specs = if cfg.table1 { reference_specs() } else { Vec::new() };
    specs.extend(cfg.specs.iter().cloned());
    let table = cost_table(&specs)?;
    let mut latency: Vec<LatencySummary> = Vec::new();
    if cfg.latency {
        for s in &specs {
            latency.extend(measure_latency(s, cfg.repetitions, cfg.seed)?);
        }
    }
    let run = Run::start("bench", &cfg.out_dir, &cfg)?;
    write_json(&run.path("cost_table.json"), &table)?;
    fs::write(run.path("cost_table.txt"), table.to_text(&[]))?;
    print!("{}", table.to_text(&latency));
    run.finish(json!({ "latency": latency }))
}
