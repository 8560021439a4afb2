//! Seeded synthetic multimodal graph streams.
//!
//! Every class is a community of a stochastic block model. Textual features
//! are Gaussian around a per-class mean, except for two coordinates: a time
//! value `t ∈ [−1, 1]` and `A·sin(2π f_c t)` with a class-dependent frequency.
//! Visual features are a fixed linear image of the textual ones plus noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::graph::MultimodalGraph;
use crate::linalg::Matrix;

use super::{HarnessError, ProtocolConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSplit {
    pub phase: usize,
    pub classes: Vec<usize>,
    pub train: MultimodalGraph,
    pub test: MultimodalGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub phases: Vec<PhaseSplit>,
    /// `d_t × d_v`, shared by all phases.
    pub visual_map: Matrix,
}

struct ClassModel {
    mean: Vec<f64>,
    frequency: f64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate_stream(config: &ProtocolConfig) -> Result<Stream, HarnessError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d_t = config.d_t;
    let scale_t = 1.0 / (d_t as f64).sqrt();

    let visual_map = Matrix::from_vec(
        d_t,
        config.d_v,
        (0..d_t * config.d_v).map(|_| scale_t * gaussian(&mut rng)).collect(),
    )
    .expect("sized");

    let classes: Vec<ClassModel> = (0..config.num_classes)
        .map(|c| {
            let mut mean: Vec<f64> = (0..d_t).map(|_| config.class_separation * scale_t * gaussian(&mut rng)).collect();
            mean[0] = 0.0;
            mean[1] = 0.0;
            let frac = if config.num_classes > 1 { c as f64 / (config.num_classes - 1) as f64 } else { 0.0 };
            let frequency = config.periodic_freq_min + frac * (config.periodic_freq_max - config.periodic_freq_min);
            ClassModel { mean, frequency }
        })
        .collect();

    let (n_train, n_test) = config.split_sizes();
    let mut phases = Vec::new();
    for (k, group) in config.phases().into_iter().enumerate() {
        let train = community_graph(config, &classes, &group, n_train, &visual_map, &mut rng)?;
        let test = community_graph(config, &classes, &group, n_test, &visual_map, &mut rng)?;
        phases.push(PhaseSplit { phase: k, classes: group, train, test });
    }
    Ok(Stream { phases, visual_map })
}

fn community_graph(
    config: &ProtocolConfig,
    classes: &[ClassModel],
    group: &[usize],
    per_class: usize,
    visual_map: &Matrix,
    rng: &mut ChaCha8Rng,
) -> Result<MultimodalGraph, HarnessError> {
    let n = group.len() * per_class;
    let d_t = config.d_t;
    let spread = config.class_spread / (d_t as f64).sqrt();
    let mut labels = Vec::with_capacity(n);
    let mut txt = Matrix::zeros(n, d_t);
    for (slot, &c) in group.iter().enumerate() {
        let model = &classes[c];
        for i in 0..per_class {
            let r = slot * per_class + i;
            labels.push(c);
            let row = txt.row_mut(r);
            for (v, m) in row.iter_mut().zip(&model.mean) {
                *v = m + spread * gaussian(rng);
            }
            let t: f64 = rng.gen_range(-1.0..1.0);
            row[0] = t;
            row[1] = config.periodic_amplitude * (2.0 * std::f64::consts::PI * model.frequency * t).sin();
        }
    }
    let mut vis = txt.matmul(visual_map).map_err(|e| HarnessError::Config(e.to_string()))?;
    if config.noise > 0.0 {
        for v in vis.as_mut_slice() {
            *v += config.noise * gaussian(rng);
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { config.p_in } else { config.p_out };
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    MultimodalGraph::new(n, edges, vis, txt, labels).map_err(|e| HarnessError::Config(e.to_string()))
}
