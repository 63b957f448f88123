//! Episode sampling: the N-way K-shot tasks that both training steps and
//! evaluation tasks are built from.
//!
//! An episode picks `n_way` distinct classes, then per class draws
//! `k_shot + q_queries` distinct images without replacement — the first
//! `k_shot` become the support set, the rest the queries, so the two never
//! overlap. Classes are relabeled by position: class `c` of the episode is
//! label `c`.
//!
//! Pre-training episodes additionally flip a Bernoulli coin with the
//! mixture probability: heads swaps every selected image for one of its
//! stylized variants (drawn uniformly per image). The coin consumes one
//! draw whether or not it lands heads, so two samplers differing only in
//! mixture probability select identical classes and images at every step.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::synthdata::ClassDataset;
use rand::seq::index::sample;
use rand::Rng;

/// Episode shape: how many classes, support shots, and queries per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_queries: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_way: 5,
            k_shot: 5,
            q_queries: 15,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::Config(format!(
                "an episode needs at least 2 ways, got {}",
                self.n_way
            )));
        }
        if self.k_shot == 0 || self.q_queries == 0 {
            return Err(Error::Config(
                "episodes need at least one support shot and one query per class".into(),
            ));
        }
        Ok(())
    }

    /// Checks the dataset can supply an episode of this shape.
    pub fn check_dataset(&self, dataset: &ClassDataset) -> Result<()> {
        self.validate()?;
        if dataset.n_classes() < self.n_way {
            return Err(Error::Sampling(format!(
                "{}-way episodes need {} classes, dataset has {}",
                self.n_way,
                self.n_way,
                dataset.n_classes()
            )));
        }
        let per_class = self.k_shot + self.q_queries;
        if let Some(short) = dataset
            .classes()
            .iter()
            .find(|c| c.images.len() < per_class)
        {
            return Err(Error::Sampling(format!(
                "episodes draw {per_class} images per class, class {} has only {}",
                short.class_id,
                short.images.len()
            )));
        }
        Ok(())
    }
}

/// One sampled task. `support[c]` and `query[c]` hold the images whose
/// episode label is `c`; `class_ids[c]` records which dataset class that
/// label came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub class_ids: Vec<u32>,
    pub support: Vec<Vec<Image>>,
    pub query: Vec<Vec<Image>>,
    /// Whether this episode was drawn from the stylized variants.
    pub stylized: bool,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_ids.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn q_queries(&self) -> usize {
        self.query.first().map_or(0, Vec::len)
    }
}

/// Samples an episode from `dataset` (no stylization coin; used for
/// validation and test tasks as well as unstylized training).
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &ClassDataset,
    config: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    config.check_dataset(dataset)?;
    sample_inner(dataset, config, false, rng)
}

/// Samples a pre-training episode: with probability `mixture_p` the episode
/// is drawn from the stylized variants instead of the originals. The coin
/// is flipped first and always consumes exactly one draw, so samplers that
/// differ only in `mixture_p` agree on the selected classes and images.
pub fn sample_pretrain_episode<R: Rng + ?Sized>(
    dataset: &ClassDataset,
    config: &EpisodeConfig,
    mixture_p: f64,
    rng: &mut R,
) -> Result<Episode> {
    if !(0.0..=1.0).contains(&mixture_p) {
        return Err(Error::Config(format!(
            "mixture probability must lie in [0, 1], got {mixture_p}"
        )));
    }
    config.check_dataset(dataset)?;
    if mixture_p > 0.0 && !dataset.has_stylized() {
        return Err(Error::Contract(
            "a positive mixture probability needs stylized variants on every image".into(),
        ));
    }
    let stylized = rng.gen_range(0.0..1.0) < mixture_p;
    sample_inner(dataset, config, stylized, rng)
}

fn sample_inner<R: Rng + ?Sized>(
    dataset: &ClassDataset,
    config: &EpisodeConfig,
    stylized: bool,
    rng: &mut R,
) -> Result<Episode> {
    let per_class = config.k_shot + config.q_queries;
    // All index selection happens before any variant draw so that the
    // stylization coin cannot shift which classes and images are chosen.
    let class_picks: Vec<usize> = sample(rng, dataset.n_classes(), config.n_way)
        .iter()
        .collect();
    let image_picks: Vec<Vec<usize>> = class_picks
        .iter()
        .map(|&ci| {
            sample(rng, dataset.class(ci).images.len(), per_class)
                .iter()
                .collect()
        })
        .collect();

    let mut class_ids = Vec::with_capacity(config.n_way);
    let mut support = Vec::with_capacity(config.n_way);
    let mut query = Vec::with_capacity(config.n_way);
    for (&ci, picks) in class_picks.iter().zip(&image_picks) {
        let record = dataset.class(ci);
        class_ids.push(record.class_id);
        let mut fetch = |ii: usize| -> Image {
            if stylized {
                let variants = &record.stylized.as_ref().expect("checked has_stylized")[ii];
                variants[rng.gen_range(0..variants.len())].clone()
            } else {
                record.images[ii].clone()
            }
        };
        support.push(picks[..config.k_shot].iter().map(|&ii| fetch(ii)).collect());
        query.push(picks[config.k_shot..].iter().map(|&ii| fetch(ii)).collect());
    }
    Ok(Episode {
        class_ids,
        support,
        query,
        stylized,
    })
}
