//! Point-cloud classifier built from residual blocks of two differential
//! convolutions, with aggregation pooling, multi-resolution fusion and a
//! global max.
//!
//! A batch of clouds is processed as one disjoint-union graph. Clouds stay
//! contiguous through pooling because coarse vertices are numbered by
//! their smallest member, so per-cloud row ranges (`segments`) follow the
//! data down the hierarchy.

mod gradcheck;
mod train;

pub use gradcheck::{gradcheck_instance, gradcheck_network, tensor_relative_error, GradcheckReport, GRADCHECK_STEP};
pub use train::{
    class_accuracies, cross_entropy, evaluate, load_checkpoint, predict, save_checkpoint, train, Adam, EpochStats,
    TrainReport,
};

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amg::{adjacency_matrix, coarsen, Level, VisitOrder};
use crate::conv::{ConvLayer, ConvTape, Linear, Mode, Pointwise, PointwiseTape, TermMask};
use crate::diffops::DiffOperator;
use crate::geometry::{feature_knn_graph, knn_graph, Graph, PointCloud};
use crate::sparse::SparseOperator;
use crate::tensors::NamedTensor;
use crate::{Error, Result};

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Output width of each block.
    pub widths: Vec<usize>,
    /// Neighbour count of each block's k-NN graph.
    pub k: Vec<usize>,
    /// Pool before the first convolution of each block.
    pub pooling: Vec<bool>,
    pub fuse_width: usize,
    pub head_width: usize,
    pub num_classes: usize,
    pub term_mask: TermMask,
    /// Rebuild the k-NN graph from incoming features at every block.
    pub dynamic: bool,
    pub visit_order: VisitOrder,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Random uniform rescaling range applied to training clouds.
    pub augment_scale: Option<[f64; 2]>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            widths: vec![32, 64],
            k: vec![10, 10],
            pooling: vec![false, true],
            fuse_width: 256,
            head_width: 128,
            num_classes: 4,
            term_mask: TermMask::ALL,
            dynamic: false,
            visit_order: VisitOrder::Natural,
            seed: 0,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            augment_scale: Some([0.85, 1.15]),
        }
    }
}

impl NetworkConfig {
    /// A tiny network for gradient checks.
    pub fn small() -> Self {
        NetworkConfig {
            widths: vec![3, 4],
            k: vec![4, 4],
            fuse_width: 6,
            head_width: 4,
            num_classes: 2,
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.widths.len();
        if nb == 0 {
            return Err(Error::invalid("network needs at least one block"));
        }
        if self.k.len() != nb || self.pooling.len() != nb {
            return Err(Error::invalid(format!(
                "{nb} block widths but {} k values and {} pooling flags",
                self.k.len(),
                self.pooling.len()
            )));
        }
        if self.widths.iter().chain([&self.fuse_width, &self.head_width]).any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.k.iter().any(|&k| k == 0) {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if let Some([lo, hi]) = self.augment_scale {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::invalid(format!("bad augmentation range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Two convolutions with an additive shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub pool: bool,
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    /// Bias-free projection when input and output widths differ.
    pub shortcut: Option<Linear>,
}

#[derive(Debug, Clone)]
pub struct BlockTape {
    pub input: Array2<f64>,
    pub conv1: ConvTape,
    pub conv2: ConvTape,
}

/// Mean pooling onto the next level and prolongation back.
#[derive(Debug, Clone)]
pub struct PoolStep {
    /// coarse × fine, rows average aggregate members
    pub average: SparseOperator,
    /// fine × coarse
    pub prolongation: SparseOperator,
}

/// Graph structure a block runs on; fixed within a forward/backward pair.
#[derive(Debug, Clone)]
pub struct BlockStructure {
    pub pool: Option<PoolStep>,
    pub level: Level,
    /// Row offsets of each cloud, `len = clouds + 1`.
    pub segments: Vec<usize>,
    pub op: Arc<DiffOperator>,
}

/// Per-batch structure for every block.
#[derive(Debug, Clone)]
pub struct BatchStructure {
    pub input_segments: Vec<usize>,
    pub blocks: Vec<BlockStructure>,
}

impl Block {
    pub fn init(c_in: usize, width: usize, pool: bool, mask: TermMask, rng: &mut ChaCha8Rng) -> Self {
        Block {
            pool,
            conv1: ConvLayer::init(c_in, width, mask, rng),
            conv2: ConvLayer::init(width, width, mask, rng),
            shortcut: (c_in != width).then(|| Linear::init(c_in, width, false, rng)),
        }
    }

    /// `conv2(conv1(F)) + shortcut(F)` on an already pooled input.
    pub fn forward(&mut self, f: &Array2<f64>, op: &Arc<DiffOperator>, mode: Mode) -> Result<(Array2<f64>, BlockTape)> {
        let (h1, conv1) = self.conv1.forward_with(op.clone(), f, mode)?;
        let (h2, conv2) = self.conv2.forward_with(op.clone(), &h1, mode)?;
        let out = match &self.shortcut {
            Some(p) => h2 + p.forward(f)?,
            None => h2 + f,
        };
        Ok((out, BlockTape { input: f.clone(), conv1, conv2 }))
    }

    /// Returns the input cotangent and appends parameter gradients in
    /// [`Block::params_mut`] order.
    pub fn backward(&self, tape: &BlockTape, d_out: &Array2<f64>, grads: &mut Vec<f64>) -> Result<Array2<f64>> {
        let g2 = self.conv2.backward(&tape.conv2, d_out)?;
        let g1 = self.conv1.backward(&tape.conv1, &g2.input)?;
        g1.params.flatten_into(grads);
        g2.params.flatten_into(grads);
        let mut dx = g1.input;
        match &self.shortcut {
            Some(p) => {
                let (dxs, dw, _) = p.backward(&tape.input, d_out);
                dx += &dxs;
                grads.extend(dw.iter());
            }
            None => dx += d_out,
        }
        Ok(dx)
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.conv1.params_mut(out);
        self.conv2.params_mut(out);
        if let Some(p) = &mut self.shortcut {
            p.params_mut(out);
        }
    }

    pub fn state_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        self.conv1.state_mut(&format!("{prefix}.conv1"), out);
        self.conv2.state_mut(&format!("{prefix}.conv2"), out);
        if let Some(p) = &mut self.shortcut {
            p.state_mut(&format!("{prefix}.shortcut"), out);
        }
    }

    pub fn tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.conv1.tensors(&format!("{prefix}.conv1"), out);
        self.conv2.tensors(&format!("{prefix}.conv2"), out);
        if let Some(p) = &self.shortcut {
            p.tensors(&format!("{prefix}.shortcut"), out);
        }
    }
}

/// Plans the structure of one block and runs it: optional pooling, optional
/// k-NN rebuild from incoming features, then the two convolutions.
/// Returns the output, the level it lives on, and the structure used.
pub fn diffconv_block(
    block: &mut Block,
    f: &Array2<f64>,
    level: &Level,
    segments: &[usize],
    dynamic_k: Option<usize>,
    order: VisitOrder,
    mode: Mode,
) -> Result<(Array2<f64>, BlockStructure, BlockTape)> {
    let structure = plan_block(block.pool, f, level, segments, dynamic_k, order)?;
    let (out, tape) = run_block(block, f, &structure, mode)?;
    Ok((out, structure, tape))
}

fn plan_block(
    pool: bool,
    f: &Array2<f64>,
    level: &Level,
    segments: &[usize],
    dynamic_k: Option<usize>,
    order: VisitOrder,
) -> Result<BlockStructure> {
    let (mut level, segments, pool, pooled) = if pool {
        if level.graph.num_edges() == 0 {
            return Err(Error::invalid("pooling requested on a level without edges"));
        }
        let (coarse, transfer) = coarsen(level, order)?;
        let assignment = transfer.aggregation.assignment();
        let mut segs: Vec<usize> = segments[..segments.len() - 1].iter().map(|&o| assignment[o]).collect();
        segs.push(coarse.graph.num_vertices());
        let average = row_normalized(&transfer.restriction)?;
        let pooled = average.mul_dense(f)?;
        (coarse, segs, Some(PoolStep { average, prolongation: transfer.prolongation }), Some(pooled))
    } else {
        (level.clone(), segments.to_vec(), None, None)
    };
    if let Some(k) = dynamic_k {
        let x = pooled.as_ref().unwrap_or(f);
        let graph = segment_graph(&segments, k, |a, b, k| feature_knn_graph(&x.slice(s![a..b, ..]).to_owned(), k))?;
        level = Level { adjacency: adjacency_matrix(&graph), graph, positions: level.positions };
    }
    let op = Arc::new(DiffOperator::new(&level.graph, &level.positions)?);
    Ok(BlockStructure { pool, level, segments, op })
}

fn run_block(block: &mut Block, f: &Array2<f64>, structure: &BlockStructure, mode: Mode) -> Result<(Array2<f64>, BlockTape)> {
    match (&structure.pool, block.pool) {
        (Some(p), true) => block.forward(&p.average.mul_dense(f)?, &structure.op, mode),
        (None, false) => block.forward(f, &structure.op, mode),
        (None, true) => Err(Error::invalid("block pools but no coarsening was supplied")),
        (Some(_), false) => Err(Error::invalid("coarsening supplied to a block that does not pool")),
    }
}

fn row_normalized(r: &SparseOperator) -> Result<SparseOperator> {
    let sums = r.row_sums();
    SparseOperator::from_triplets(
        r.n_rows(),
        r.n_cols(),
        r.triplets().map(|(i, j, v)| (i, j, v / sums[i])).collect(),
    )
}

/// Per-cloud k-NN graphs joined into one graph. `k` is clamped to the
/// cloud size minus one.
fn segment_graph(
    segments: &[usize],
    k: usize,
    build: impl Fn(usize, usize, usize) -> Result<Graph>,
) -> Result<Graph> {
    let parts = segments
        .windows(2)
        .map(|w| {
            let n = w[1] - w[0];
            let k = k.min(n.saturating_sub(1));
            if k == 0 {
                Ok(Graph::empty(n))
            } else {
                build(w[0], w[1], k)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Graph::disjoint_union(&parts))
}

/// Row offsets of each cloud in the stacked batch.
pub fn segments_of(clouds: &[&PointCloud]) -> Vec<usize> {
    let mut segs = vec![0];
    for c in clouds {
        segs.push(segs.last().unwrap() + c.len());
    }
    segs
}

/// Column-wise max over each segment's rows; returns the maxima and the
/// winning row per (segment, channel), first index on ties.
pub fn segment_max(x: &Array2<f64>, segments: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let nseg = segments.len() - 1;
    let c = x.ncols();
    let mut out = Array2::zeros((nseg, c));
    let mut arg = vec![0; nseg * c];
    for s in 0..nseg {
        for ch in 0..c {
            let mut best = segments[s];
            for r in segments[s] + 1..segments[s + 1] {
                if x[[r, ch]] > x[[best, ch]] {
                    best = r;
                }
            }
            out[[s, ch]] = x[[best, ch]];
            arg[s * c + ch] = best;
        }
    }
    (out, arg)
}

/// Which side of every ReLU and max each activation fell on. Finite
/// differences are only meaningful while this stays fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub relu: Vec<bool>,
    pub argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NetworkTape {
    pub structure: Arc<BatchStructure>,
    pub blocks: Vec<BlockTape>,
    pub fuse: PointwiseTape,
    pub argmax: Vec<usize>,
    pub fused_rows: usize,
    pub hidden: PointwiseTape,
    pub head_input: Array2<f64>,
}

impl NetworkTape {
    pub fn activation_pattern(&self) -> ActivationPattern {
        let mut relu = Vec::new();
        let mut push = |t: &PointwiseTape| relu.extend(t.pre_activation.iter().map(|&v| v > 0.0));
        for b in &self.blocks {
            push(&b.conv1.mlp);
            push(&b.conv2.mlp);
        }
        push(&self.fuse);
        push(&self.hidden);
        ActivationPattern { relu, argmax: self.argmax.clone() }
    }

    /// Smallest distance of any ReLU input from zero or any max from its
    /// runner-up.
    pub fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        let mut scan = |t: &PointwiseTape| {
            m = t.pre_activation.iter().fold(m, |m, v| m.min(v.abs()));
        };
        for b in &self.blocks {
            scan(&b.conv1.mlp);
            scan(&b.conv2.mlp);
        }
        scan(&self.fuse);
        scan(&self.hidden);
        let x = &self.fuse.output(true);
        let segs = &self.structure.input_segments;
        let c = x.ncols();
        for s in 0..segs.len() - 1 {
            for ch in 0..c {
                let best = self.argmax[s * c + ch];
                for r in segs[s]..segs[s + 1] {
                    if r != best {
                        m = m.min(x[[best, ch]] - x[[r, ch]]);
                    }
                }
            }
        }
        m
    }
}

/// The classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub blocks: Vec<Block>,
    pub fuse: Pointwise,
    pub hidden: Pointwise,
    pub head: Linear,
}

/// Coordinates are the input features.
pub const INPUT_CHANNELS: usize = 3;

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut c = INPUT_CHANNELS;
        let mut blocks = Vec::new();
        for (b, &w) in config.widths.iter().enumerate() {
            blocks.push(Block::init(c, w, config.pooling[b], config.term_mask, &mut rng));
            c = w;
        }
        let concat: usize = config.widths.iter().sum();
        let fuse = Pointwise::init(concat, config.fuse_width, true, true, &mut rng);
        let hidden = Pointwise::init(config.fuse_width, config.head_width, false, true, &mut rng);
        let head = Linear::init(config.head_width, config.num_classes, true, &mut rng);
        Ok(Network { config, blocks, fuse, hidden, head })
    }

    pub fn num_params(&mut self) -> usize {
        let mut slots = Vec::new();
        self.params_mut(&mut slots);
        slots.iter().map(|s| s.len()).sum()
    }

    /// Trainable parameters in a fixed order shared with the gradients
    /// returned by [`Network::backward`].
    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for b in &mut self.blocks {
            b.params_mut(out);
        }
        self.fuse.params_mut(out);
        self.hidden.params_mut(out);
        self.head.params_mut(out);
    }

    /// All named state, including batch-norm running statistics.
    pub fn state_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut [f64])>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.state_mut(&format!("block{i}"), out);
        }
        self.fuse.state_mut("fuse", out);
        self.hidden.state_mut("hidden", out);
        self.head.state_mut("head", out);
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            b.tensors(&format!("block{i}"), &mut out);
        }
        self.fuse.tensors("fuse", &mut out);
        self.hidden.tensors("hidden", &mut out);
        self.head.tensors("head", &mut out);
        out
    }

    /// Class scores for a batch, one row per cloud. Pass a structure from
    /// an earlier call to reuse its graphs and pooling operators.
    pub fn forward(
        &mut self,
        clouds: &[&PointCloud],
        mode: Mode,
        frozen: Option<&Arc<BatchStructure>>,
    ) -> Result<(Array2<f64>, NetworkTape)> {
        if clouds.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if clouds.iter().any(|c| c.is_empty()) {
            return Err(Error::invalid("empty point cloud"));
        }
        let segments = segments_of(clouds);
        let positions: Vec<[f64; 3]> = clouds.iter().flat_map(|c| c.positions.iter().copied()).collect();
        let n = positions.len();
        let x0 = Array2::from_shape_fn((n, INPUT_CHANNELS), |(i, j)| positions[i][j]);
        if let Some(fz) = frozen {
            if fz.input_segments != segments || fz.blocks.len() != self.blocks.len() {
                return Err(Error::invalid("frozen structure does not match this batch"));
            }
        }

        let mut planned: Vec<BlockStructure> = Vec::new();
        let mut tapes = Vec::new();
        let mut unpooled = Vec::new();
        let mut x = x0;
        for b in 0..self.blocks.len() {
            if frozen.is_none() {
                let k = self.config.k[b];
                let st = match planned.last() {
                    Some(prev) => {
                        let dynamic = self.config.dynamic.then_some(k);
                        plan_block(self.blocks[b].pool, &x, &prev.level, &prev.segments, dynamic, self.config.visit_order)?
                    }
                    None => {
                        let graph = segment_graph(&segments, k, |a, e, k| knn_graph(&positions[a..e], k))?;
                        let lvl = Level { adjacency: adjacency_matrix(&graph), graph, positions: positions.clone() };
                        // the first block's features are the coordinates, so
                        // its input graph already is the feature graph
                        let dynamic = (self.config.dynamic && self.blocks[b].pool).then_some(k);
                        plan_block(self.blocks[b].pool, &x, &lvl, &segments, dynamic, self.config.visit_order)?
                    }
                };
                planned.push(st);
            }
            let structures: &[BlockStructure] = frozen.map_or(&planned[..], |fz| &fz.blocks[..]);
            let (y, tape) = run_block(&mut self.blocks[b], &x, &structures[b], mode)?;
            let mut u = y.clone();
            for st in structures[..=b].iter().rev() {
                if let Some(p) = &st.pool {
                    u = p.prolongation.mul_dense(&u)?;
                }
            }
            unpooled.push(u);
            tapes.push(tape);
            x = y;
        }
        let structure = match frozen {
            Some(fz) => fz.clone(),
            None => Arc::new(BatchStructure { input_segments: segments.clone(), blocks: planned }),
        };

        let views: Vec<_> = unpooled.iter().map(|u| u.view()).collect();
        let concat = concatenate(Axis(1), &views).map_err(|e| Error::dims(e.to_string()))?;
        let (fused, fuse_tape) = self.fuse.forward(concat, mode)?;
        let (global, argmax) = segment_max(&fused, &segments);
        let (hidden, hidden_tape) = self.hidden.forward(global, mode)?;
        let scores = self.head.forward(&hidden)?;
        let tape = NetworkTape {
            structure,
            blocks: tapes,
            fuse: fuse_tape,
            argmax,
            fused_rows: n,
            hidden: hidden_tape,
            head_input: hidden,
        };
        Ok((scores, tape))
    }

    /// Gradients of all parameters, flattened in [`Network::params_mut`]
    /// order, given the cotangent of the scores.
    pub fn backward(&self, tape: &NetworkTape, d_scores: &Array2<f64>) -> Result<Vec<f64>> {
        let (d_hidden, dw_head, db_head) = self.head.backward(&tape.head_input, d_scores);
        let (d_global, g_hidden) = self.hidden.backward(&tape.hidden, &d_hidden)?;
        let cf = d_global.ncols();
        let mut d_fused = Array2::zeros((tape.fused_rows, cf));
        for (idx, &row) in tape.argmax.iter().enumerate() {
            d_fused[[row, idx % cf]] += d_global[[idx / cf, idx % cf]];
        }
        let (d_concat, g_fuse) = self.fuse.backward(&tape.fuse, &d_fused)?;

        // cotangents of each block's output, pulled back from the fusion
        let mut offset = 0;
        let mut d_outputs = Vec::new();
        let mut depth = 0;
        for (b, st) in tape.structure.blocks.iter().enumerate() {
            if st.pool.is_some() {
                depth += 1;
            }
            let w = self.config.widths[b];
            let mut d = d_concat.slice(s![.., offset..offset + w]).to_owned();
            offset += w;
            let pools: Vec<_> = tape.structure.blocks.iter().filter_map(|s| s.pool.as_ref()).take(depth).collect();
            for p in pools {
                d = p.prolongation.mul_dense_transposed(&d)?;
            }
            d_outputs.push(d);
        }

        let mut block_grads = vec![Vec::new(); self.blocks.len()];
        let mut carry: Option<Array2<f64>> = None;
        for b in (0..self.blocks.len()).rev() {
            let mut d = d_outputs[b].clone();
            if let Some(c) = carry.take() {
                d += &c;
            }
            let mut dx = self.blocks[b].backward(&tape.blocks[b], &d, &mut block_grads[b])?;
            if let Some(p) = &tape.structure.blocks[b].pool {
                dx = p.average.mul_dense_transposed(&dx)?;
            }
            carry = Some(dx);
        }

        let mut grads: Vec<f64> = block_grads.concat();
        g_fuse.flatten_into(&mut grads);
        g_hidden.flatten_into(&mut grads);
        grads.extend(dw_head.iter());
        if let Some(db) = db_head {
            grads.extend(db.iter());
        }
        Ok(grads)
    }
}

/// Where a checkpoint's two files live.
pub fn checkpoint_paths(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    (dir.join("weights.dcnt"), dir.join("config.json"))
}
