//! Analytic cost model for convolution families and a latency harness.
//!
//! Costs are multiply-accumulates of the dominant linear maps; activations
//! and normalization are not counted.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::Linear;
use crate::diffops::{DiffOperator, NUM_TERMS};
use crate::geometry::{knn_graph, synth_dataset, Graph, Shape};
use crate::{Error, Result};

/// Convolution families the model knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Dense 3D convolution over a cubic grid.
    Voxel,
    /// Shared per-point linear map.
    PointwiseMlp,
    /// Linear map applied to every (vertex, neighbour) pair, then reduced.
    EdgeMlp,
    /// Neighbourhood aggregated into 7 differential terms before the map.
    DiffConv,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Voxel, Method::PointwiseMlp, Method::EdgeMlp, Method::DiffConv];

    pub fn name(self) -> &'static str {
        match self {
            Method::Voxel => "voxel",
            Method::PointwiseMlp => "pointwise-mlp",
            Method::EdgeMlp => "edge-mlp",
            Method::DiffConv => "diffconv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

fn default_edge_width() -> usize {
    2
}

/// One convolution configuration to cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Row label in tables; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    pub method: String,
    /// Vertex count (ignored by the voxel family, which uses `grid_side³`).
    pub n: usize,
    /// Neighbourhood size.
    #[serde(default)]
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Kernel taps of the voxel family.
    #[serde(default)]
    pub kernel_volume: Option<usize>,
    /// Side of the cubic voxel grid.
    #[serde(default)]
    pub grid_side: Option<usize>,
    /// Per-edge feature multiplier of the edge-MLP family, 2 for
    /// `concat(x_i, x_i − x_j)`.
    #[serde(default = "default_edge_width")]
    pub edge_feature_width: usize,
    /// Published value to compare against, in MFLOPs.
    #[serde(default)]
    pub reference_mflops: Option<f64>,
}

impl CostSpec {
    pub fn new(method: Method, n: usize, k: usize, c_in: usize, c_out: usize) -> Self {
        CostSpec {
            label: None,
            method: method.name().into(),
            n,
            k,
            c_in,
            c_out,
            kernel_volume: None,
            grid_side: None,
            edge_feature_width: default_edge_width(),
            reference_mflops: None,
        }
    }

    pub fn labelled(mut self, label: &str, reference_mflops: f64) -> Self {
        self.label = Some(label.into());
        self.reference_mflops = Some(reference_mflops);
        self
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.method)
    }

    fn validate(&self) -> Result<Method> {
        let method = Method::parse(&self.method)?;
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{}: {name} must be positive", self.label())))
            } else {
                Ok(v)
            }
        };
        positive("c_in", self.c_in)?;
        positive("c_out", self.c_out)?;
        match method {
            Method::Voxel => {
                let need = |name: &str, v: Option<usize>| {
                    v.ok_or_else(|| Error::invalid(format!("{}: voxel cost needs {name}", self.label())))
                        .and_then(|v| positive(name, v))
                };
                need("grid_side", self.grid_side)?;
                need("kernel_volume", self.kernel_volume)?;
            }
            Method::PointwiseMlp => {
                positive("n", self.n)?;
            }
            Method::EdgeMlp => {
                positive("n", self.n)?;
                positive("k", self.k)?;
                positive("edge_feature_width", self.edge_feature_width)?;
            }
            Method::DiffConv => {
                positive("n", self.n)?;
                positive("k", self.k)?;
            }
        }
        Ok(method)
    }
}

/// Multiply-accumulate counts of one convolution application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    /// Dense linear map.
    pub mlp: u64,
    /// Building the differential terms from neighbours; zero for the other
    /// families.
    pub message: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.mlp + self.message
    }
}

/// Multiplies per directed edge and input channel when building the
/// gradient and second-derivative messages: three axis projections of the
/// difference for each of the two stages.
pub const MESSAGE_MULTIPLIES_PER_EDGE_CHANNEL: u64 = 6;

pub fn flop_count(spec: &CostSpec) -> Result<FlopCount> {
    let method = spec.validate()?;
    let (n, k, ci, co) = (spec.n as u64, spec.k as u64, spec.c_in as u64, spec.c_out as u64);
    Ok(match method {
        Method::Voxel => {
            let side = spec.grid_side.unwrap() as u64;
            let taps = spec.kernel_volume.unwrap() as u64;
            FlopCount { mlp: side.pow(3) * taps * ci * co, message: 0 }
        }
        Method::PointwiseMlp => FlopCount { mlp: n * ci * co, message: 0 },
        Method::EdgeMlp => FlopCount { mlp: n * k * spec.edge_feature_width as u64 * ci * co, message: 0 },
        Method::DiffConv => FlopCount {
            mlp: n * NUM_TERMS as u64 * ci * co,
            message: n * k * MESSAGE_MULTIPLIES_PER_EDGE_CHANNEL * ci,
        },
    })
}

/// The single-convolution comparison set: 1024 points, 64 → 128 channels,
/// K = 10, and a 3×3×3 kernel on a 12³ grid for the voxel row.
pub fn reference_specs() -> Vec<CostSpec> {
    let (n, k, ci, co) = (1024, 10, 64, 128);
    vec![
        CostSpec { kernel_volume: Some(27), grid_side: Some(12), ..CostSpec::new(Method::Voxel, n, k, ci, co) }
            .labelled("VoxNet", 382.2),
        CostSpec::new(Method::PointwiseMlp, n, k, ci, co).labelled("PointNet (MLP)", 8.4),
        CostSpec::new(Method::EdgeMlp, n, k, ci, co).labelled("DGCNN", 167.8),
        CostSpec::new(Method::DiffConv, n, k, ci, co).labelled("DiffConv", 61.3),
    ]
}

/// Wall-clock summary in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub name: String,
    pub repetitions: usize,
    pub threads: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Quantile `q` of a sorted slice, interpolating linearly between ranks.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Times `run` `repetitions` times after one untimed warmup call.
pub fn latency_bench(name: &str, repetitions: usize, mut run: impl FnMut() -> Result<()>) -> Result<LatencySummary> {
    if repetitions < 10 {
        return Err(Error::invalid(format!("need at least 10 repetitions, got {repetitions}")));
    }
    run()?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        run()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(LatencySummary {
        name: name.into(),
        repetitions,
        threads: 1,
        median_ms: quantile(&times, 0.5),
        iqr_ms: quantile(&times, 0.75) - quantile(&times, 0.25),
        min_ms: times[0],
        max_ms: times[repetitions - 1],
    })
}

/// Edge-MLP baseline: for every vertex i and neighbour j, map
/// `concat(x_i, x_i − x_j)` with `linear` and keep the channelwise maximum.
/// Isolated vertices produce zeros.
pub fn edge_mlp_conv(graph: &Graph, x: &Array2<f64>, linear: &Linear) -> Result<Array2<f64>> {
    let (n, c) = x.dim();
    if graph.num_vertices() != n {
        return Err(Error::dims(format!("{} features for {} vertices", n, graph.num_vertices())));
    }
    if linear.c_in() != 2 * c {
        return Err(Error::dims(format!("edge map expects {} inputs, features give {}", linear.c_in(), 2 * c)));
    }
    let degrees = graph.degrees();
    let rows: usize = degrees.iter().sum();
    let mut edge = Array2::zeros((rows, 2 * c));
    let mut r = 0;
    for i in 0..n {
        for j in graph.neighbors(i) {
            let mut row = edge.row_mut(r);
            for ch in 0..c {
                row[ch] = x[[i, ch]];
                row[c + ch] = x[[i, ch]] - x[[j, ch]];
            }
            r += 1;
        }
    }
    let y = linear.forward(&edge)?;
    let mut out = Array2::zeros((n, linear.c_out()));
    let mut r = 0;
    for (i, &d) in degrees.iter().enumerate() {
        if d == 0 {
            continue;
        }
        let mut o = out.row_mut(i);
        o.assign(&y.row(r));
        for rr in r + 1..r + d {
            o.zip_mut_with(&y.row(rr), |a, &b| *a = a.max(b));
        }
        r += d;
    }
    Ok(out)
}

/// Differential-term convolution without normalization: build the operator
/// for `graph`, evaluate the 7 terms and apply `linear`.
pub fn diffconv_linear(graph: &Graph, positions: &[[f64; 3]], x: &Array2<f64>, linear: &Linear) -> Result<Array2<f64>> {
    let op = DiffOperator::new(graph, positions)?;
    linear.forward(op.apply(x)?.as_array())
}

/// Times one application of the described convolution on a synthetic sphere
/// cloud with a `k`-NN graph and random features. The voxel family has no
/// local implementation and yields `None`.
pub fn measure_latency(spec: &CostSpec, repetitions: usize, seed: u64) -> Result<Option<LatencySummary>> {
    let method = spec.validate()?;
    if method == Method::Voxel {
        return Ok(None);
    }
    let (n, ci, co) = (spec.n, spec.c_in, spec.c_out);
    let cloud = synth_dataset(&[Shape::Sphere], 1, n, 0.01, seed)?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, ci), |_| rng.random_range(-1.0..1.0));
    let label = spec.label();
    let summary = match method {
        Method::PointwiseMlp => {
            let lin = Linear::init(ci, co, true, &mut rng);
            latency_bench(label, repetitions, || lin.forward(&x).map(drop))?
        }
        Method::EdgeMlp => {
            let graph = knn_graph(&cloud.positions, spec.k)?;
            let lin = Linear::init(spec.edge_feature_width * ci, co, true, &mut rng);
            if spec.edge_feature_width != 2 {
                return Err(Error::invalid("edge-MLP timing implements the concat(x_i, x_i - x_j) features only"));
            }
            latency_bench(label, repetitions, || edge_mlp_conv(&graph, &x, &lin).map(drop))?
        }
        Method::DiffConv => {
            let graph = knn_graph(&cloud.positions, spec.k)?;
            let lin = Linear::init(NUM_TERMS * ci, co, true, &mut rng);
            latency_bench(label, repetitions, || diffconv_linear(&graph, &cloud.positions, &x, &lin).map(drop))?
        }
        Method::Voxel => unreachable!(),
    };
    Ok(Some(summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub method: String,
    pub mlp_mflops: f64,
    pub message_mflops: f64,
    pub total_mflops: f64,
    pub reference_mflops: Option<f64>,
    /// `100 · (total − reference) / reference`.
    pub deviation_percent: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
}

pub fn cost_table(specs: &[CostSpec]) -> Result<CostTable> {
    let rows = specs
        .iter()
        .map(|s| {
            let f = flop_count(s)?;
            let total = f.total() as f64 / 1e6;
            Ok(CostRow {
                label: s.label().into(),
                method: s.method.clone(),
                mlp_mflops: f.mlp as f64 / 1e6,
                message_mflops: f.message as f64 / 1e6,
                total_mflops: total,
                reference_mflops: s.reference_mflops,
                deviation_percent: s.reference_mflops.map(|r| 100.0 * (total - r) / r),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CostTable { rows })
}

impl CostTable {
    /// Aligned text with one decimal MFLOPs; latencies are matched to rows
    /// by label.
    pub fn to_text(&self, latency: &[LatencySummary]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>10} {:>10} {:>8} {:>12}",
            "method", "mlp[M]", "msg[M]", "total[M]", "ref[M]", "dev[%]", "median[ms]"
        );
        for r in &self.rows {
            let opt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
            let lat = latency.iter().find(|l| l.name == r.label).map(|l| l.median_ms);
            let _ = writeln!(
                out,
                "{:<16} {:>10.1} {:>10.1} {:>10.1} {:>10} {:>8} {:>12}",
                r.label,
                r.mlp_mflops,
                r.message_mflops,
                r.total_mflops,
                opt(r.reference_mflops, 1),
                opt(r.deviation_percent, 1),
                opt(lat, 3)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::regular_grid;

    fn rounded(spec: &CostSpec) -> f64 {
        (flop_count(spec).unwrap().total() as f64 / 1e5).round() / 10.0
    }

    #[test]
    fn reference_rows_reproduce() {
        let specs = reference_specs();
        assert_eq!(flop_count(&specs[0]).unwrap().total(), 382_205_952);
        assert_eq!(flop_count(&specs[1]).unwrap().total(), 8_388_608);
        assert_eq!(flop_count(&specs[2]).unwrap().total(), 167_772_160);
        for s in &specs[..3] {
            assert_eq!(rounded(s), s.reference_mflops.unwrap(), "{}", s.label());
        }
        let d = flop_count(&specs[3]).unwrap();
        assert_eq!(d.mlp, 58_720_256);
        assert_eq!(d.message, 3_932_160);
        let dev = (d.total() as f64 / 1e6 - 61.3).abs() / 61.3;
        assert!(dev < 0.10, "{dev}");
    }

    #[test]
    fn doubling_k_doubles_edge_cost_only() {
        let e = CostSpec::new(Method::EdgeMlp, 1024, 10, 64, 128);
        let d = CostSpec::new(Method::DiffConv, 1024, 10, 64, 128);
        let e2 = CostSpec { k: 20, ..e.clone() };
        let d2 = CostSpec { k: 20, ..d.clone() };
        assert_eq!(flop_count(&e2).unwrap().total(), 2 * flop_count(&e).unwrap().total());
        assert_eq!(flop_count(&d2).unwrap().mlp, flop_count(&d).unwrap().mlp);
    }

    #[test]
    fn unknown_method_and_zero_counts_rejected() {
        let mut s = CostSpec::new(Method::PointwiseMlp, 10, 1, 2, 3);
        s.method = "pointcnn".into();
        assert!(matches!(flop_count(&s), Err(Error::InvalidArgument(_))));
        assert!(flop_count(&CostSpec::new(Method::PointwiseMlp, 0, 1, 2, 3)).is_err());
        assert!(flop_count(&CostSpec::new(Method::Voxel, 10, 1, 2, 3)).is_err());
        assert!(flop_count(&CostSpec::new(Method::EdgeMlp, 10, 0, 2, 3)).is_err());
    }

    #[test]
    fn empty_table() {
        let t = cost_table(&[]).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_text(&[]).lines().count(), 1);
    }

    #[test]
    fn table_reports_deviation() {
        let t = cost_table(&reference_specs()).unwrap();
        assert_eq!(t.rows.len(), 4);
        let d = &t.rows[3];
        assert_eq!(d.reference_mflops, Some(61.3));
        assert!((d.deviation_percent.unwrap() - 100.0 * (d.total_mflops - 61.3) / 61.3).abs() < 1e-12);
        let text = t.to_text(&[]);
        for v in ["382.2", "8.4", "167.8", "61.3"] {
            assert!(text.contains(v), "{text}");
        }
    }

    #[test]
    fn latency_summary_is_ordered() {
        let mut i = 0u64;
        let s = latency_bench("spin", 10, || {
            i = (0..1000u64).fold(i, |a, b| a.wrapping_add(b));
            Ok(())
        })
        .unwrap();
        assert_eq!(s.repetitions, 10);
        assert!(s.min_ms <= s.median_ms && s.median_ms <= s.max_ms);
        assert!(s.iqr_ms >= 0.0);
        assert!(latency_bench("x", 9, || Ok(())).is_err());
    }

    #[test]
    fn edge_mlp_matches_direct_maximum() {
        let (cloud, g) = regular_grid(3, 2, 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((cloud.len(), 2), |_| rng.random_range(-1.0..1.0));
        let lin = Linear::init(4, 3, true, &mut rng);
        let out = edge_mlp_conv(&g, &x, &lin).unwrap();
        for i in 0..cloud.len() {
            for o in 0..3 {
                let best = g
                    .neighbors(i)
                    .map(|j| {
                        let w = lin.weight.row(o);
                        (0..2).map(|c| w[c] * x[[i, c]] + w[2 + c] * (x[[i, c]] - x[[j, c]])).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((out[[i, o]] - best).abs() < 1e-12);
            }
        }
    }
}

#[cfg(test)]
mod latency_tests {
    use super::*;

    #[test]
    fn diffconv_is_faster_than_edge_mlp() {
        let specs = reference_specs();
        let edge = measure_latency(&specs[2], 10, 0).unwrap().unwrap();
        let diff = measure_latency(&specs[3], 10, 0).unwrap().unwrap();
        assert!(diff.median_ms < edge.median_ms, "{diff:?} vs {edge:?}");
        assert!(measure_latency(&specs[0], 10, 0).unwrap().is_none());
    }
}
