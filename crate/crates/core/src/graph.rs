//! Multimodal graphs, correlation-weighted message passing per modality, the
//! transport-based fusion of the two modalities and the tanh-softmax node
//! classifier used to train the encoder on the base phase.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{dot, ridge_solve, LinalgError, Matrix};
use crate::transport::{
    apply_plan_matrix, concat_fuse, cosine_cost, fused_ot_solve, pairwise_distances, uniform_marginal,
    OtProblem, SolverConfig, TransportError,
};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph input: {0}")]
    Input(String),
    #[error("parameters are frozen")]
    Frozen,
    #[error("non-finite loss {loss} at epoch {epoch} (last finite loss {last_finite:?})")]
    NonFiniteLoss { epoch: usize, loss: f64, last_finite: Option<f64> },
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Textual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    pub features_vis: Matrix,
    pub features_txt: Matrix,
    pub labels: Vec<usize>,
}

impl MultimodalGraph {
    /// Validates the node data and normalizes the edge list (each pair stored
    /// once as `(min, max)`, sorted, duplicates removed).
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features_vis: Matrix,
        features_txt: Matrix,
        labels: Vec<usize>,
    ) -> Result<Self, GraphError> {
        if features_vis.rows() != num_nodes || features_txt.rows() != num_nodes || labels.len() != num_nodes {
            return Err(GraphError::Input(format!(
                "{num_nodes} nodes but {} visual rows, {} textual rows, {} labels",
                features_vis.rows(),
                features_txt.rows(),
                labels.len()
            )));
        }
        if !features_vis.is_finite() || !features_txt.is_finite() {
            return Err(GraphError::Input("non-finite node features".into()));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(GraphError::Input(format!("edge ({i}, {j}) out of range for {num_nodes} nodes")));
            }
            if i == j {
                return Err(GraphError::Input(format!("self-loop on node {i}")));
            }
            norm.push((i.min(j), i.max(j)));
        }
        norm.sort_unstable();
        norm.dedup();
        Ok(MultimodalGraph { num_nodes, edges: norm, features_vis, features_txt, labels })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self, modality: Modality) -> &Matrix {
        match modality {
            Modality::Visual => &self.features_vis,
            Modality::Textual => &self.features_txt,
        }
    }

    /// Aggregation sets: node `u` first, followed by its neighbors in ascending order.
    pub fn aggregation_sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = (0..self.num_nodes).map(|u| vec![u]).collect();
        for &(i, j) in &self.edges {
            sets[i].push(j);
            sets[j].push(i);
        }
        for s in &mut sets {
            s[1..].sort_unstable();
        }
        sets
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// # mcigle graph v1
    /// <n> <d_v> <d_t> <num_edges>
    /// <i> <j>                      (num_edges lines)
    /// <d_v values>                 (n lines, visual features)
    /// <d_t values>                 (n lines, textual features)
    /// <n labels>
    /// ```
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# mcigle graph v1")?;
        writeln!(
            out,
            "{} {} {} {}",
            self.num_nodes,
            self.features_vis.cols(),
            self.features_txt.cols(),
            self.edges.len()
        )?;
        for (i, j) in &self.edges {
            writeln!(out, "{i} {j}")?;
        }
        for m in [&self.features_vis, &self.features_txt] {
            for r in 0..m.rows() {
                writeln!(out, "{}", join_values(m.row(r)))?;
            }
        }
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        writeln!(out, "{}", labels.join(" "))
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, GraphError> {
        let mut lines = input
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty() && !s.starts_with('#')));
        let mut next = |what: &str| -> Result<(usize, String), GraphError> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(GraphError::Io(e)),
                None => Err(GraphError::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
            }
        };
        let (ln, header) = next("header")?;
        let dims = parse_fields::<usize>(&header, ln)?;
        if dims.len() != 4 {
            return Err(GraphError::Parse { line: ln, msg: "header needs n d_v d_t num_edges".into() });
        }
        let (n, dv, dt, ne) = (dims[0], dims[1], dims[2], dims[3]);
        let mut edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (ln, l) = next("edge")?;
            let e = parse_fields::<usize>(&l, ln)?;
            if e.len() != 2 {
                return Err(GraphError::Parse { line: ln, msg: "edge line needs two indices".into() });
            }
            edges.push((e[0], e[1]));
        }
        let mut read_matrix = |width: usize| -> Result<Matrix, GraphError> {
            let mut data = Vec::with_capacity(n * width);
            for _ in 0..n {
                let (ln, l) = next("feature row")?;
                let row = parse_fields::<f64>(&l, ln)?;
                if row.len() != width {
                    return Err(GraphError::Parse { line: ln, msg: format!("expected {width} values, got {}", row.len()) });
                }
                data.extend(row);
            }
            Ok(Matrix::from_vec(n, width, data)?)
        };
        let vis = read_matrix(dv)?;
        let txt = read_matrix(dt)?;
        let labels = if n == 0 {
            Vec::new()
        } else {
            let (ln, l) = next("labels")?;
            parse_fields::<usize>(&l, ln)?
        };
        MultimodalGraph::new(n, edges, vis, txt, labels)
    }
}

pub(crate) fn join_values(values: &[f64]) -> String {
    let mut s = String::new();
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn parse_fields<T: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<T>, GraphError> {
    line.split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| GraphError::Parse { line: ln, msg: format!("bad token {t:?}") }))
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Softmax over `neighbors` of the cosine similarity between `h_prev[node]`
/// and each neighbor's row. Cosine against a zero vector counts as 0.
pub fn correlation_weights(h_prev: &Matrix, node: usize, neighbors: &[usize]) -> Result<Vec<f64>, GraphError> {
    if neighbors.is_empty() {
        return Err(GraphError::Input(format!("node {node} has an empty neighbor list")));
    }
    if node >= h_prev.rows() || neighbors.iter().any(|&v| v >= h_prev.rows()) {
        return Err(GraphError::Input("neighbor index out of range".into()));
    }
    let center = h_prev.row(node);
    let mut w: Vec<f64> = neighbors.iter().map(|&v| cosine(center, h_prev.row(v))).collect();
    softmax_in_place(&mut w);
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Weight of the feature cost against the structure term in the fused transport.
    pub lambda1: f64,
    pub epsilon: f64,
    pub solver: SolverConfig,
    /// Ridge strength for the visual→textual projection used by the transport cost.
    pub projection_gamma: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layers: 2,
            hidden: 32,
            lambda1: 0.5,
            epsilon: 0.05,
            solver: SolverConfig::default(),
            projection_gamma: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub vis_layers: Vec<Matrix>,
    pub txt_layers: Vec<Matrix>,
    /// `fused_width × num_classes`.
    pub classifier: Matrix,
    /// `1 × num_classes`.
    pub bias: Matrix,
    /// Maps final visual embeddings into the textual embedding space for the transport cost.
    pub projection: Matrix,
    frozen: bool,
}

impl GnnParams {
    /// Uniform Glorot initialization, classifier and bias included.
    pub fn init(d_vis: usize, d_txt: usize, num_classes: usize, config: &GnnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Matrix::from_vec(rows, cols, data).expect("sized")
        };
        let mut stack = |d_in: usize| {
            let mut layers = Vec::with_capacity(config.layers);
            let mut width = d_in;
            for _ in 0..config.layers {
                layers.push(glorot(width, config.hidden));
                width = config.hidden;
            }
            layers
        };
        let vis_layers = stack(d_vis);
        let txt_layers = stack(d_txt);
        let out_v = vis_layers.last().map_or(d_vis, |m| m.cols());
        let out_t = txt_layers.last().map_or(d_txt, |m| m.cols());
        let bound = (6.0 / (out_v + out_t + num_classes) as f64).sqrt();
        let classifier = Matrix::from_vec(
            out_v + out_t,
            num_classes,
            (0..(out_v + out_t) * num_classes).map(|_| rng.gen_range(-bound..bound)).collect(),
        )
        .expect("sized");
        GnnParams {
            vis_layers,
            txt_layers,
            classifier,
            bias: Matrix::zeros(1, num_classes),
            projection: Matrix::identity(out_v).columns(0, out_v.min(out_t)).pad_columns(out_t.saturating_sub(out_v)),
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.cols()
    }

    pub fn fused_width(&self) -> usize {
        self.classifier.rows()
    }

    pub fn layers(&self, modality: Modality) -> &[Matrix] {
        match modality {
            Modality::Visual => &self.vis_layers,
            Modality::Textual => &self.txt_layers,
        }
    }

    /// Trainable tensors in a fixed order: visual layers, textual layers, classifier, bias.
    pub fn trainable(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.vis_layers.iter().chain(&self.txt_layers).collect();
        v.push(&self.classifier);
        v.push(&self.bias);
        v
    }

    pub fn trainable_mut(&mut self) -> Result<Vec<&mut Matrix>, GraphError> {
        if self.frozen {
            return Err(GraphError::Frozen);
        }
        let mut v: Vec<&mut Matrix> = self.vis_layers.iter_mut().chain(self.txt_layers.iter_mut()).collect();
        v.push(&mut self.classifier);
        v.push(&mut self.bias);
        Ok(v)
    }
}

/// Per-layer intermediates kept for the backward pass.
struct LayerCache {
    input: Matrix,
    weights: Vec<Vec<f64>>,
    aggregated: Matrix,
    pre_activation: Matrix,
}

fn layer_forward(h: &Matrix, sets: &[Vec<usize>], w: &Matrix) -> Result<LayerCache, GraphError> {
    let n = h.rows();
    let mut aggregated = Matrix::zeros(n, h.cols());
    let mut weights = Vec::with_capacity(n);
    for u in 0..n {
        let e = correlation_weights(h, u, &sets[u])?;
        let row = aggregated.row_mut(u);
        for (&v, &ev) in sets[u].iter().zip(&e) {
            crate::linalg::axpy(ev, h.row(v), row);
        }
        weights.push(e);
    }
    let pre_activation = aggregated.matmul(w)?;
    Ok(LayerCache { input: h.clone(), weights, aggregated, pre_activation })
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

fn modality_forward(
    graph: &MultimodalGraph,
    layers: &[Matrix],
    modality: Modality,
    sets: &[Vec<usize>],
) -> Result<(Matrix, Vec<LayerCache>), GraphError> {
    let mut h = graph.features(modality).clone();
    if let Some(first) = layers.first() {
        if first.rows() != h.cols() {
            return Err(GraphError::Input(format!(
                "{modality:?} features have width {}, first layer expects {}",
                h.cols(),
                first.rows()
            )));
        }
    }
    let mut caches = Vec::with_capacity(layers.len());
    for w in layers {
        let cache = layer_forward(&h, sets, w)?;
        h = relu(&cache.pre_activation);
        caches.push(cache);
    }
    Ok((h, caches))
}

/// Runs all message-passing layers of one modality.
pub fn gnn_forward(graph: &MultimodalGraph, params: &GnnParams, modality: Modality) -> Result<Matrix, GraphError> {
    let sets = graph.aggregation_sets();
    Ok(modality_forward(graph, params.layers(modality), modality, &sets)?.0)
}

/// Backward through one layer. Returns the gradient w.r.t. the layer input
/// and accumulates the weight gradient.
fn layer_backward(cache: &LayerCache, sets: &[Vec<usize>], w: &Matrix, d_out: &Matrix, need_input_grad: bool) -> Result<(Matrix, Matrix), GraphError> {
    let d_pre = d_out.hadamard(&cache.pre_activation.map(|z| if z > 0.0 { 1.0 } else { 0.0 }))?;
    let d_w = cache.aggregated.t_matmul(&d_pre)?;
    let h = &cache.input;
    let mut d_h = Matrix::zeros(h.rows(), h.cols());
    if !need_input_grad {
        return Ok((d_w, d_h));
    }
    let d_agg = d_pre.matmul_t(w)?;
    let norms: Vec<f64> = (0..h.rows()).map(|r| dot(h.row(r), h.row(r)).sqrt()).collect();
    for (u, set) in sets.iter().enumerate() {
        let g = d_agg.row(u);
        let e = &cache.weights[u];
        // d loss / d e_uv
        let d_e: Vec<f64> = set.iter().map(|&v| dot(g, h.row(v))).collect();
        let mean: f64 = e.iter().zip(&d_e).map(|(a, b)| a * b).sum();
        for (k, &v) in set.iter().enumerate() {
            crate::linalg::axpy(e[k], g, d_h.row_mut(v));
            let d_s = e[k] * (d_e[k] - mean);
            if v == u || d_s == 0.0 || norms[u] == 0.0 || norms[v] == 0.0 {
                continue;
            }
            let (hu, hv) = (h.row(u).to_vec(), h.row(v).to_vec());
            let inv = 1.0 / (norms[u] * norms[v]);
            let cos = dot(&hu, &hv) * inv;
            let (nu2, nv2) = (norms[u] * norms[u], norms[v] * norms[v]);
            {
                let du = d_h.row_mut(u);
                for c in 0..hu.len() {
                    du[c] += d_s * (hv[c] * inv - cos * hu[c] / nu2);
                }
            }
            let dv = d_h.row_mut(v);
            for c in 0..hv.len() {
                dv[c] += d_s * (hu[c] * inv - cos * hv[c] / nv2);
            }
        }
    }
    Ok((d_w, d_h))
}

/// Rescales a distance matrix by its mean off-diagonal entry so both modalities
/// enter the structure term on a common scale.
fn normalized_structure(h: &Matrix) -> Matrix {
    let d = pairwise_distances(h);
    let n = d.rows();
    if n < 2 {
        return d;
    }
    let mean = d.as_slice().iter().sum::<f64>() / (n * (n - 1)) as f64;
    if mean > 0.0 {
        d.scale(1.0 / mean)
    } else {
        d
    }
}

/// Builds the fused transport problem for the final-layer embeddings.
pub fn build_ot_problem(h_vis: &Matrix, h_txt: &Matrix, params: &GnnParams, config: &GnnConfig) -> Result<OtProblem, GraphError> {
    let projected = h_vis.matmul(&params.projection)?;
    Ok(OtProblem {
        cost: cosine_cost(&projected, h_txt)?,
        structure_vis: normalized_structure(h_vis),
        structure_txt: normalized_structure(h_txt),
        lambda1: config.lambda1,
        epsilon: config.epsilon,
        marginal_src: uniform_marginal(h_vis.rows()),
        marginal_tgt: uniform_marginal(h_txt.rows()),
    })
}

/// Fused node embeddings `[P-projected visual ‖ textual]` together with the plan used.
#[derive(Debug, Clone)]
pub struct FusedEmbedding {
    pub fused: Matrix,
    pub plan: Matrix,
    pub transport_converged: bool,
}

pub fn fuse(graph: &MultimodalGraph, params: &GnnParams, config: &GnnConfig) -> Result<FusedEmbedding, GraphError> {
    let sets = graph.aggregation_sets();
    let (hv, _) = modality_forward(graph, &params.vis_layers, Modality::Visual, &sets)?;
    let (ht, _) = modality_forward(graph, &params.txt_layers, Modality::Textual, &sets)?;
    let problem = build_ot_problem(&hv, &ht, params, config)?;
    let sol = fused_ot_solve(&problem, &config.solver)?;
    let projected = apply_plan_matrix(&sol.plan, &hv)?;
    let fused = concat_fuse(&projected, &ht)?;
    Ok(FusedEmbedding { fused, plan: sol.plan, transport_converged: sol.converged })
}

fn classifier_probs(fused: &Matrix, params: &GnnParams) -> Result<(Matrix, Matrix), GraphError> {
    if fused.cols() != params.classifier.rows() {
        return Err(GraphError::Input(format!(
            "fused width {} does not match classifier input {}",
            fused.cols(),
            params.classifier.rows()
        )));
    }
    let mut z = fused.matmul(&params.classifier)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(params.bias.row(0)) {
            *v = (*v + b).tanh();
        }
    }
    let mut p = z.clone();
    for r in 0..p.rows() {
        softmax_in_place(p.row_mut(r));
    }
    Ok((z, p))
}

/// Class probabilities `softmax(tanh(h′W + b))` for every node.
pub fn fuse_and_classify(graph: &MultimodalGraph, params: &GnnParams, config: &GnnConfig) -> Result<Matrix, GraphError> {
    let emb = fuse(graph, params, config)?;
    Ok(classifier_probs(&emb.fused, params)?.1)
}

/// Mean cross-entropy over `nodes`, with the transport plan held fixed.
pub fn loss_with_plan(graph: &MultimodalGraph, params: &GnnParams, plan: &Matrix, nodes: &[usize]) -> Result<f64, GraphError> {
    let sets = graph.aggregation_sets();
    let (hv, _) = modality_forward(graph, &params.vis_layers, Modality::Visual, &sets)?;
    let (ht, _) = modality_forward(graph, &params.txt_layers, Modality::Textual, &sets)?;
    let fused = concat_fuse(&apply_plan_matrix(plan, &hv)?, &ht)?;
    let (_, p) = classifier_probs(&fused, params)?;
    cross_entropy(&p, &graph.labels, nodes)
}

fn cross_entropy(p: &Matrix, labels: &[usize], nodes: &[usize]) -> Result<f64, GraphError> {
    if nodes.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &u in nodes {
        let y = labels[u];
        if y >= p.cols() {
            return Err(GraphError::Input(format!("label {y} outside {} classes", p.cols())));
        }
        total -= p[(u, y)].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / nodes.len() as f64)
}

/// Gradients of [`loss_with_plan`] in the order of [`GnnParams::trainable`].
pub fn gradient_with_plan(
    graph: &MultimodalGraph,
    params: &GnnParams,
    plan: &Matrix,
    nodes: &[usize],
) -> Result<(f64, Vec<Matrix>), GraphError> {
    let sets = graph.aggregation_sets();
    let (hv, caches_v) = modality_forward(graph, &params.vis_layers, Modality::Visual, &sets)?;
    let (ht, caches_t) = modality_forward(graph, &params.txt_layers, Modality::Textual, &sets)?;
    let projected = apply_plan_matrix(plan, &hv)?;
    let fused = concat_fuse(&projected, &ht)?;
    let (z, p) = classifier_probs(&fused, params)?;
    let loss = cross_entropy(&p, &graph.labels, nodes)?;

    let n = graph.num_nodes();
    let c = params.num_classes();
    let mut d_pre = Matrix::zeros(n, c);
    if !nodes.is_empty() {
        let scale = 1.0 / nodes.len() as f64;
        for &u in nodes {
            let y = graph.labels[u];
            for k in 0..c {
                let dz = scale * (p[(u, k)] - if k == y { 1.0 } else { 0.0 });
                // node may repeat in a batch
                d_pre[(u, k)] += dz * (1.0 - z[(u, k)] * z[(u, k)]);
            }
        }
    }
    let d_classifier = fused.t_matmul(&d_pre)?;
    let d_bias = Matrix::from_vec(1, c, d_pre.col_sums())?;
    let d_fused = d_pre.matmul_t(&params.classifier)?;
    let wv = projected.cols();
    let d_projected = d_fused.columns(0, wv);
    let d_ht = d_fused.columns(wv, d_fused.cols());

    // projected = D⁻¹ Pᵀ hv with D the column masses of P
    let mass = plan.col_sums();
    let mut scaled = d_projected.clone();
    for (j, w) in mass.iter().enumerate() {
        scaled.row_mut(j).iter_mut().for_each(|v| *v /= w);
    }
    let d_hv = plan.matmul(&scaled)?;

    let mut grads = Vec::new();
    for (layers, caches, top) in [(&params.vis_layers, &caches_v, d_hv), (&params.txt_layers, &caches_t, d_ht)] {
        let mut layer_grads = vec![Matrix::zeros(0, 0); layers.len()];
        let mut d = top;
        for l in (0..layers.len()).rev() {
            let (dw, dh) = layer_backward(&caches[l], &sets, &layers[l], &d, l > 0)?;
            layer_grads[l] = dw;
            d = dh;
        }
        grads.extend(layer_grads);
    }
    grads.push(d_classifier);
    grads.push(d_bias);
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Nodes per gradient step; 0 means the whole graph.
    pub batch_size: usize,
    /// Epochs between recomputations of the projection and the transport plan.
    pub plan_refresh: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, lr: 0.2, momentum: 0.9, batch_size: 0, plan_refresh: 10, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Refits the visual→textual projection by ridge regression on the current embeddings.
fn refit_projection(params: &mut GnnParams, hv: &Matrix, ht: &Matrix, gamma: f64) -> Result<(), GraphError> {
    params.projection = ridge_solve(hv, ht, gamma)?;
    Ok(())
}

/// Trains encoder and classifier on the base-phase graph, then freezes them.
///
/// The transport plan and the projection used by its cost are recomputed every
/// `plan_refresh` epochs and treated as constants by the gradient.
pub fn train_base(
    graph: &MultimodalGraph,
    mut params: GnnParams,
    gnn: &GnnConfig,
    train: &TrainConfig,
) -> Result<(GnnParams, TrainReport), GraphError> {
    if params.is_frozen() {
        return Err(GraphError::Frozen);
    }
    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut velocity: Vec<Matrix> = params.trainable().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    let mut losses = Vec::with_capacity(train.epochs);
    let mut plan: Option<Matrix> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let batch = if train.batch_size == 0 { n.max(1) } else { train.batch_size };

    for epoch in 0..train.epochs {
        if plan.is_none() || (train.plan_refresh > 0 && epoch % train.plan_refresh == 0) {
            let sets = graph.aggregation_sets();
            let (hv, _) = modality_forward(graph, &params.vis_layers, Modality::Visual, &sets)?;
            let (ht, _) = modality_forward(graph, &params.txt_layers, Modality::Textual, &sets)?;
            refit_projection(&mut params, &hv, &ht, gnn.projection_gamma)?;
            let problem = build_ot_problem(&hv, &ht, &params, gnn)?;
            plan = Some(fused_ot_solve(&problem, &gnn.solver)?.plan);
        }
        let plan_ref = plan.as_ref().expect("plan computed above");
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(batch) {
            let (loss, grads) = gradient_with_plan(graph, &params, plan_ref, chunk)?;
            if !loss.is_finite() {
                return Err(GraphError::NonFiniteLoss { epoch, loss, last_finite: losses.last().copied() });
            }
            for ((p, v), g) in params.trainable_mut()?.into_iter().zip(velocity.iter_mut()).zip(&grads) {
                v.scale_assign(train.momentum);
                v.axpy_assign(-train.lr, g)?;
                p.add_assign(v)?;
            }
            epoch_loss += loss;
            steps += 1;
        }
        losses.push(epoch_loss / steps.max(1) as f64);
    }
    if train.epochs > 0 {
        // final projection matches the trained encoder
        let sets = graph.aggregation_sets();
        let (hv, _) = modality_forward(graph, &params.vis_layers, Modality::Visual, &sets)?;
        let (ht, _) = modality_forward(graph, &params.txt_layers, Modality::Textual, &sets)?;
        refit_projection(&mut params, &hv, &ht, gnn.projection_gamma)?;
    }
    params.freeze();
    Ok((params, TrainReport { losses }))
}

/// Fraction of nodes whose most probable class equals the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs.argmax_rows().iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_node_graph(features: &[f64]) -> MultimodalGraph {
        MultimodalGraph::new(
            1,
            vec![],
            Matrix::from_rows(&[features]),
            Matrix::from_rows(&[features]),
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn correlation_weight_cases() {
        let h = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 0.0]]);
        assert_eq!(correlation_weights(&h, 0, &[1]).unwrap(), vec![1.0]);
        let w = correlation_weights(&h, 0, &[1, 3]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
        let w = correlation_weights(&h, 0, &[1, 2]).unwrap();
        assert!((w[0] - 0.7311).abs() < 1e-4 && (w[1] - 0.2689).abs() < 1e-4);
        assert!(correlation_weights(&h, 0, &[]).is_err());
    }

    #[test]
    fn zero_norm_features_have_zero_cosine() {
        let h = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let w = correlation_weights(&h, 0, &[1, 2]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn graph_validation() {
        let f = Matrix::zeros(3, 2);
        assert!(MultimodalGraph::new(3, vec![(0, 3)], f.clone(), f.clone(), vec![0; 3]).is_err());
        assert!(MultimodalGraph::new(3, vec![(1, 1)], f.clone(), f.clone(), vec![0; 3]).is_err());
        assert!(MultimodalGraph::new(3, vec![], f.clone(), Matrix::zeros(2, 2), vec![0; 3]).is_err());
        let g = MultimodalGraph::new(3, vec![(1, 0), (0, 1), (2, 1)], f.clone(), f, vec![0; 3]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.aggregation_sets(), vec![vec![0, 1], vec![1, 0, 2], vec![2, 1]]);
    }

    #[test]
    fn single_node_identity_layer_clips() {
        let g = one_node_graph(&[1.0, -1.0]);
        let config = GnnConfig { layers: 1, hidden: 2, ..GnnConfig::default() };
        let mut params = GnnParams::init(2, 2, 2, &config, 0);
        params.vis_layers[0] = Matrix::identity(2);
        let out = gnn_forward(&g, &params, Modality::Visual).unwrap();
        assert_eq!(out.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn identical_neighbors_keep_features() {
        let f = Matrix::from_rows(&[[0.3, 0.7], [0.3, 0.7]]);
        let g = MultimodalGraph::new(2, vec![(0, 1)], f.clone(), f.clone(), vec![0, 0]).unwrap();
        let config = GnnConfig { layers: 1, hidden: 2, ..GnnConfig::default() };
        let mut params = GnnParams::init(2, 2, 1, &config, 0);
        params.vis_layers[0] = Matrix::identity(2);
        let out = gnn_forward(&g, &params, Modality::Visual).unwrap();
        assert!(out.max_abs_diff(&f) < 1e-15);
    }

    fn small_graph() -> MultimodalGraph {
        let vis = Matrix::from_rows(&[[1.0, 0.2, 0.1], [0.9, 0.1, 0.0], [0.0, 1.0, 0.3], [0.1, 0.8, 0.5]]);
        let txt = Matrix::from_rows(&[[1.0, 0.0], [0.8, 0.1], [0.1, 1.0], [0.0, 0.9]]);
        MultimodalGraph::new(4, vec![(0, 1), (2, 3), (1, 2)], vis, txt, vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn classifier_with_zero_weights_is_uniform() {
        let g = small_graph();
        let config = GnnConfig { hidden: 4, ..GnnConfig::default() };
        let mut params = GnnParams::init(3, 2, 3, &config, 1);
        params.classifier = Matrix::zeros(params.classifier.rows(), 3);
        let probs = fuse_and_classify(&g, &params, &config).unwrap();
        assert!(probs.max_abs_diff(&Matrix::filled(4, 3, 1.0 / 3.0)) < 1e-15);

        let params = GnnParams::init(3, 2, 1, &config, 1);
        let probs = fuse_and_classify(&g, &params, &config).unwrap();
        assert!(probs.as_slice().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn classifier_rows_are_distributions() {
        let g = small_graph();
        let config = GnnConfig { hidden: 4, ..GnnConfig::default() };
        let params = GnnParams::init(3, 2, 2, &config, 9);
        let probs = fuse_and_classify(&g, &params, &config).unwrap();
        for s in probs.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(probs.as_slice().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let g = small_graph();
        let config = GnnConfig { hidden: 4, ..GnnConfig::default() };
        let params = GnnParams::init(3, 2, 2, &config, 3);
        let train = TrainConfig { epochs: 5, lr: 0.0, ..TrainConfig::default() };
        let (trained, _) = train_base(&g, params.clone(), &config, &train).unwrap();
        assert!(trained.is_frozen());
        assert_eq!(trained.trainable(), params.trainable());
        assert!(matches!(train_base(&g, trained, &config, &train), Err(GraphError::Frozen)));
    }

    #[test]
    fn text_format_roundtrip() {
        let g = small_graph();
        let mut buf = Vec::new();
        g.write_text(&mut buf).unwrap();
        let back = MultimodalGraph::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert!(MultimodalGraph::read_text("4 1 1 0\n1\n".as_bytes()).is_err());
    }
}
