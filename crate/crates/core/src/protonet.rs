//! Prototypical classification with support- and query-side test-time
//! augmentation.
//!
//! A class prototype is the mean embedding of its support images; with
//! support augmentation enabled, each support image also contributes
//! `support_augments` augmented replicas, so the prototype averages
//! `k_shot * (1 + support_augments)` embeddings. A query is scored by its
//! distance to every prototype; with query augmentation enabled, the
//! distance to each prototype is averaged over the original and
//! `query_augments` augmented replicas. Posteriors are a softmax over
//! `-distance / temperature`.
//!
//! Two paths share these definitions: an inference path over any
//! [`Embedder`] used for validation and evaluation, and a graph path
//! ([`episodic_loss`]) that builds the differentiable episode loss for
//! training.

use crate::augment::{apply, AugmentSampler};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ConvBackbone, Embedder};
use crate::tensor::{kernels, Graph, Var};
use rand::RngCore;

/// Images embedded per inference call; bounds transient memory while
/// streaming augmented replicas.
const EMBED_CHUNK: usize = 64;

/// How embeddings are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    SquaredEuclidean,
    Euclidean,
}

/// Distance-to-posterior settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Softmax temperature dividing the distances.
    pub temperature: f64,
    pub distance: Distance,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            temperature: 32.0,
            distance: Distance::SquaredEuclidean,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "softmax temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Test-time augmentation counts. Zero on either side disables that side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TtaConfig {
    /// Augmented replicas added per support image.
    pub support_augments: usize,
    /// Augmented replicas added per query image.
    pub query_augments: usize,
}

impl Default for TtaConfig {
    fn default() -> Self {
        TtaConfig {
            support_augments: 32,
            query_augments: 32,
        }
    }
}

impl TtaConfig {
    pub fn none() -> Self {
        TtaConfig {
            support_augments: 0,
            query_augments: 0,
        }
    }
}

fn distance(a: &[f64], b: &[f64], kind: Distance) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match kind {
        Distance::SquaredEuclidean => sq,
        Distance::Euclidean => sq.sqrt(),
    }
}

/// Streams `1 + augments` replicas of each image (the original first,
/// then augmented copies with specs drawn in image order) through the
/// embedder in bounded chunks, handing each embedding to `fold`.
fn embed_replicas(
    embedder: &dyn Embedder,
    images: &[&Image],
    augments: usize,
    sampler: &dyn AugmentSampler,
    rng: &mut dyn RngCore,
    mut fold: impl FnMut(usize, Vec<f64>),
) -> Result<()> {
    let mut chunk: Vec<(usize, Image)> = Vec::with_capacity(EMBED_CHUNK);
    let flush = |chunk: &mut Vec<(usize, Image)>,
                     fold: &mut dyn FnMut(usize, Vec<f64>)|
     -> Result<()> {
        if chunk.is_empty() {
            return Ok(());
        }
        let refs: Vec<&Image> = chunk.iter().map(|(_, img)| img).collect();
        let embeddings = embedder.embed_batch(&refs)?;
        for ((source, _), emb) in chunk.drain(..).zip(embeddings) {
            fold(source, emb);
        }
        Ok(())
    };
    for (source, image) in images.iter().enumerate() {
        chunk.push((source, (*image).clone()));
        if chunk.len() == EMBED_CHUNK {
            flush(&mut chunk, &mut fold)?;
        }
        for _ in 0..augments {
            let spec = sampler.sample(rng);
            chunk.push((source, apply(&spec, image)?));
            if chunk.len() == EMBED_CHUNK {
                flush(&mut chunk, &mut fold)?;
            }
        }
    }
    flush(&mut chunk, &mut fold)
}

/// Computes one prototype per class from `support[c]`, averaging each
/// image's embedding together with `augments` augmented replicas.
pub fn compute_prototypes(
    embedder: &dyn Embedder,
    support: &[Vec<Image>],
    augments: usize,
    sampler: &dyn AugmentSampler,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<f64>>> {
    if support.is_empty() || support.iter().any(Vec::is_empty) {
        return Err(Error::Contract(
            "prototypes need at least one support image per class".into(),
        ));
    }
    let dim = embedder.embedding_dim();
    let mut prototypes = Vec::with_capacity(support.len());
    for class_images in support {
        let refs: Vec<&Image> = class_images.iter().collect();
        let mut sum = vec![0.0f64; dim];
        let mut count = 0usize;
        embed_replicas(embedder, &refs, augments, sampler, rng, |_, emb| {
            for (s, e) in sum.iter_mut().zip(&emb) {
                *s += e;
            }
            count += 1;
        })?;
        for s in sum.iter_mut() {
            *s /= count as f64;
        }
        prototypes.push(sum);
    }
    Ok(prototypes)
}

/// Scores `queries` against `prototypes`: per query, the distance to each
/// prototype is averaged over the original and `augments` augmented
/// replicas, and posteriors are a softmax over `-distance / temperature`.
/// Returns one posterior row per query.
pub fn classify_queries(
    embedder: &dyn Embedder,
    prototypes: &[Vec<f64>],
    queries: &[&Image],
    config: &ClassifierConfig,
    augments: usize,
    sampler: &dyn AugmentSampler,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if prototypes.is_empty() {
        return Err(Error::Contract("classification needs prototypes".into()));
    }
    let dim = embedder.embedding_dim();
    if let Some(bad) = prototypes.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension(format!(
            "prototype of dimension {} against an embedder of dimension {dim}",
            bad.len()
        )));
    }
    let n_way = prototypes.len();
    let mut dist_sums = vec![0.0f64; queries.len() * n_way];
    embed_replicas(embedder, queries, augments, sampler, rng, |source, emb| {
        for (k, proto) in prototypes.iter().enumerate() {
            dist_sums[source * n_way + k] += distance(&emb, proto, config.distance);
        }
    })?;

    let replicas = (1 + augments) as f64;
    let scale = -1.0 / (config.temperature * replicas);
    let logits: Vec<f64> = dist_sums.iter().map(|d| d * scale).collect();
    let mut posteriors = vec![0.0f64; logits.len()];
    kernels::softmax_rows(&logits, queries.len(), n_way, &mut posteriors);
    Ok(posteriors
        .chunks(n_way)
        .map(|row| row.to_vec())
        .collect())
}

/// The outcome of classifying one episode's queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    /// Posterior rows, one per query in class-major order.
    pub posteriors: Vec<Vec<f64>>,
    /// True episode labels, parallel to `posteriors`.
    pub labels: Vec<usize>,
    pub n_correct: usize,
    pub accuracy: f64,
}

/// Index of the row maximum; earlier entries win ties, making evaluation
/// deterministic.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Classifies every query of `episode` with optional two-sided TTA and
/// scores the predictions against the episode labels.
pub fn classify_episode(
    embedder: &dyn Embedder,
    episode: &Episode,
    config: &ClassifierConfig,
    tta: &TtaConfig,
    sampler: &dyn AugmentSampler,
    rng: &mut dyn RngCore,
) -> Result<TaskResult> {
    let prototypes = compute_prototypes(
        embedder,
        &episode.support,
        tta.support_augments,
        sampler,
        rng,
    )?;
    let mut queries: Vec<&Image> = Vec::new();
    let mut labels = Vec::new();
    for (c, class_queries) in episode.query.iter().enumerate() {
        for img in class_queries {
            queries.push(img);
            labels.push(c);
        }
    }
    let posteriors = classify_queries(
        embedder,
        &prototypes,
        &queries,
        config,
        tta.query_augments,
        sampler,
        rng,
    )?;
    let n_correct = posteriors
        .iter()
        .zip(&labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    let accuracy = n_correct as f64 / labels.len() as f64;
    Ok(TaskResult {
        posteriors,
        labels,
        n_correct,
        accuracy,
    })
}

/// A differentiable episode objective: the scalar loss node, the backbone
/// parameter nodes participating in it, and the episode's training
/// accuracy read off the forward values.
pub struct EpisodeObjective {
    pub loss: Var,
    pub params: Vec<Var>,
    pub accuracy: f64,
}

/// Builds the episode loss on `graph`: one forward pass embeds all support
/// and query images, prototypes are support means taken by a constant
/// averaging matrix, and the loss is the mean negative log-posterior of the
/// true labels under the softmax over `-distance / temperature`.
pub fn episodic_loss(
    backbone: &ConvBackbone,
    graph: &mut Graph,
    episode: &Episode,
    config: &ClassifierConfig,
) -> Result<EpisodeObjective> {
    config.validate()?;
    let n_way = episode.n_way();
    let k_shot = episode.k_shot();
    let q_queries = episode.q_queries();
    if n_way == 0 || k_shot == 0 || q_queries == 0 {
        return Err(Error::Contract(
            "episodic loss needs support and query images for every class".into(),
        ));
    }

    let mut images: Vec<&Image> = Vec::with_capacity(n_way * (k_shot + q_queries));
    for class_support in &episode.support {
        images.extend(class_support.iter());
    }
    for class_queries in &episode.query {
        images.extend(class_queries.iter());
    }
    let total = images.len();
    let q_total = n_way * q_queries;

    let batch = backbone.batch_tensor(&images)?;
    let batch = graph.leaf(&batch);
    let (embeddings, params) = backbone.forward_graph(graph, batch)?;

    // Support rows come first, class-major; queries follow in the same
    // order. Both gathers are constant matrices, so the matmuls stay cheap.
    let mut averager = vec![0.0f64; n_way * total];
    for c in 0..n_way {
        for s in 0..k_shot {
            averager[c * total + c * k_shot + s] = 1.0 / k_shot as f64;
        }
    }
    let mut selector = vec![0.0f64; q_total * total];
    let query_base = n_way * k_shot;
    for qi in 0..q_total {
        selector[qi * total + query_base + qi] = 1.0;
    }
    let averager = graph.constant(vec![n_way, total], averager)?;
    let selector = graph.constant(vec![q_total, total], selector)?;
    let prototypes = graph.matmul(averager, embeddings)?;
    let query_emb = graph.matmul(selector, embeddings)?;

    let mut dist = graph.pairwise_sq_dist(query_emb, prototypes)?;
    if config.distance == Distance::Euclidean {
        dist = graph.sqrt(dist)?;
    }
    let accuracy = {
        let values = graph.value(dist);
        let mut correct = 0usize;
        for qi in 0..q_total {
            let row = &values[qi * n_way..(qi + 1) * n_way];
            let mut best = 0usize;
            for (k, v) in row.iter().enumerate().skip(1) {
                if *v < row[best] {
                    best = k;
                }
            }
            correct += (best == qi / q_queries) as usize;
        }
        correct as f64 / q_total as f64
    };

    let logits = graph.scale(dist, -1.0 / config.temperature)?;
    let log_posteriors = graph.log_softmax_rows(logits)?;
    let mut one_hot = vec![0.0f64; q_total * n_way];
    for qi in 0..q_total {
        one_hot[qi * n_way + qi / q_queries] = 1.0;
    }
    let one_hot = graph.constant(vec![q_total, n_way], one_hot)?;
    let picked = graph.mul(log_posteriors, one_hot)?;
    let mean = graph.mean(picked)?;
    let loss = graph.scale(mean, -(n_way as f64))?;
    Ok(EpisodeObjective {
        loss,
        params,
        accuracy,
    })
}
