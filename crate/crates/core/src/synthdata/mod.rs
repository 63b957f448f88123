//! Synthetic shape-vs-texture benchmark generation.
//!
//! Every class is a silhouette family filled with procedural textures. In
//! the pre-training split most of a class's images reuse the class's own
//! figure/ground texture pair — a deliberate shortcut cue, strong but not
//! a complete substitute for shape — while validation and test images draw
//! their textures independently per image, decorrelating texture from
//! class identity. Shape is therefore the only cue that transfers across
//! splits.
//!
//! Generation is deterministic from the config seed, and
//! [`verify_benchmark`] checks the two structural properties the benchmark
//! depends on: a texture-statistics classifier separates pre-training
//! classes but not held-out classes, and silhouettes agree within classes
//! more than between them.

pub mod oracle;
pub mod shapes;
pub mod stylize;
pub mod textures;

pub use shapes::{mask_iou, Mask, ShapeFamily};
pub use stylize::{build_stylized_variants, stylize, StylizeConfig};
pub use textures::{TextureBank, TextureKind, TextureSpec};

use crate::error::{Error, Result};
use crate::image::{check_resolution, Image};
use crate::rng::{self, tag};
use rand::Rng;
use shapes::{render_mask, sample_placement};
use textures::{sample_pose, TexturePose};

/// Which role a dataset plays. Splits are class-disjoint by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Pretrain,
    Validation,
    Test,
}

/// One class: a stable id, its images, and (pretrain only, on demand) the
/// stylized variants of each image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecord {
    pub class_id: u32,
    pub images: Vec<Image>,
    /// `stylized[i][v]` is variant `v` of `images[i]`.
    pub stylized: Option<Vec<Vec<Image>>>,
}

/// A split's worth of classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDataset {
    split: Split,
    resolution: usize,
    classes: Vec<ClassRecord>,
}

impl ClassDataset {
    pub fn new(split: Split, resolution: usize, classes: Vec<ClassRecord>) -> Result<Self> {
        let ds = ClassDataset {
            split,
            resolution,
            classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassRecord] {
        &self.classes
    }

    pub(crate) fn classes_mut(&mut self) -> &mut [ClassRecord] {
        &mut self.classes
    }

    pub fn class(&self, index: usize) -> &ClassRecord {
        &self.classes[index]
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    /// Whether every image carries stylized variants.
    pub fn has_stylized(&self) -> bool {
        self.classes
            .iter()
            .all(|c| c.stylized.as_ref().is_some_and(|s| s.len() == c.images.len()))
    }

    /// Structural checks: unique class ids, consistent image sizes, and
    /// stylized blocks (when present) parallel to the images.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for record in &self.classes {
            if !seen.insert(record.class_id) {
                return Err(Error::Contract(format!(
                    "duplicate class id {} in dataset",
                    record.class_id
                )));
            }
            if record.images.is_empty() {
                return Err(Error::Contract(format!(
                    "class {} has no images",
                    record.class_id
                )));
            }
            for img in &record.images {
                if img.height() != self.resolution || img.width() != self.resolution {
                    return Err(Error::Dimension(format!(
                        "class {} holds a {}x{} image in a {}x{} dataset",
                        record.class_id,
                        img.height(),
                        img.width(),
                        self.resolution,
                        self.resolution
                    )));
                }
            }
            if let Some(stylized) = &record.stylized {
                if stylized.len() != record.images.len() {
                    return Err(Error::Dimension(format!(
                        "class {} has {} stylized blocks for {} images",
                        record.class_id,
                        stylized.len(),
                        record.images.len()
                    )));
                }
                for variants in stylized {
                    for img in variants {
                        if img.height() != self.resolution || img.width() != self.resolution {
                            return Err(Error::Dimension(format!(
                                "class {} holds a stylized {}x{} image in a {}x{} dataset",
                                record.class_id,
                                img.height(),
                                img.width(),
                                self.resolution,
                                self.resolution
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Silhouette masks for one split, parallel to its classes and images
/// (masks are kept separate from the datasets consumed by training).
#[derive(Debug, Clone)]
pub struct MaskSet {
    per_class: Vec<Vec<Mask>>,
}

impl MaskSet {
    pub fn classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, index: usize) -> &[Mask] {
        &self.per_class[index]
    }
}

/// A full generated benchmark: three class-disjoint splits plus the
/// ground-truth masks per split, used for stylization (pretrain) and for
/// the region-level statistics in [`verify_benchmark`].
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub pretrain: ClassDataset,
    pub validation: ClassDataset,
    pub test: ClassDataset,
    pub pretrain_masks: MaskSet,
    pub validation_masks: MaskSet,
    pub test_masks: MaskSet,
}

/// Extra figure/ground texture pairs beyond the pre-training classes that
/// decorrelated splits may draw from.
const DECOR_EXTRA_PAIRS: u64 = 8;

/// Probability that a pre-training image carries its class's texture pair;
/// the rest draw an independent pair, so texture alone cannot solve the
/// pre-training task perfectly.
const TEXTURE_CORRELATION: f64 = 0.85;

/// Benchmark generation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub pretrain_classes: usize,
    pub validation_classes: usize,
    pub test_classes: usize,
    pub images_per_class: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Run [`verify_benchmark`] after generation.
    pub verify: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            pretrain_classes: 30,
            validation_classes: 8,
            test_classes: 8,
            images_per_class: 60,
            resolution: 32,
            seed: 0,
            verify: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check_resolution(self.resolution)?;
        if self.pretrain_classes == 0 || self.validation_classes == 0 || self.test_classes == 0 {
            return Err(Error::Config(
                "every split needs at least one class".into(),
            ));
        }
        if self.images_per_class < 2 {
            return Err(Error::Config(format!(
                "need at least 2 images per class, got {}",
                self.images_per_class
            )));
        }
        let total = self.pretrain_classes + self.validation_classes + self.test_classes;
        if total > ShapeFamily::catalog_capacity() {
            return Err(Error::Config(format!(
                "{total} classes requested, shape catalog holds {}",
                ShapeFamily::catalog_capacity()
            )));
        }
        Ok(())
    }
}

/// Paints a figure/ground texture pair under a mask.
pub fn compose(
    mask: &Mask,
    figure: &TextureSpec,
    figure_pose: &TexturePose,
    ground: &TextureSpec,
    ground_pose: &TexturePose,
) -> Image {
    let (h, w) = (mask.height(), mask.width());
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let rgb = if mask.get(y, x) {
                figure.value(u, v, figure_pose)
            } else {
                ground.value(u, v, ground_pose)
            };
            img.set_rgb(y, x, rgb);
        }
    }
    img
}

/// How a split binds textures to classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TexturePolicy {
    /// Images reuse the class's figure/ground pair with probability
    /// [`TEXTURE_CORRELATION`], drawing independently otherwise.
    ClassCorrelated,
    /// Every image draws its figure/ground pair independently.
    Decorrelated,
}

/// Generates the full benchmark for `config`. Identical configs produce
/// identical benchmarks.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Benchmark> {
    config.validate()?;
    let total = config.pretrain_classes + config.validation_classes + config.test_classes;
    let families = ShapeFamily::catalog(total)?;
    let bank = TextureBank::natural(rng::child_seed(config.seed, tag::TEXTURE, 0));
    let decor_pool = config.pretrain_classes as u64 + DECOR_EXTRA_PAIRS;

    let mut next_class = 0u32;
    let mut build_split = |split: Split, count: usize, policy: TexturePolicy| -> Result<(
        ClassDataset,
        Vec<Vec<Mask>>,
    )> {
        let mut classes = Vec::with_capacity(count);
        let mut masks = Vec::with_capacity(count);
        for _ in 0..count {
            let class_id = next_class;
            next_class += 1;
            let family = families[class_id as usize];
            let class_seed = rng::child_seed(config.seed, tag::CLASS, class_id as u64);
            let mut images = Vec::with_capacity(config.images_per_class);
            let mut class_masks = Vec::with_capacity(config.images_per_class);
            for i in 0..config.images_per_class {
                let mut stream = rng::child_rng(class_seed, tag::IMAGE, i as u64);
                // Draw order: shape instance, placement, the texture
                // binding (a correlation coin for pretrain, figure and
                // ground ids when drawn independently), figure pose,
                // ground pose; redrawn wholesale if the mask rasterizes
                // too small.
                let mask = sample_visible_mask(&family, config.resolution, &mut stream)?;
                let mut independent_pair = |stream: &mut rand_chacha::ChaCha12Rng| {
                    (
                        bank.texture(2 * stream.gen_range(0..decor_pool)),
                        bank.texture(2 * stream.gen_range(0..decor_pool) + 1),
                    )
                };
                let (figure, ground) = match policy {
                    TexturePolicy::ClassCorrelated => {
                        if stream.gen_bool(TEXTURE_CORRELATION) {
                            (
                                bank.texture(2 * class_id as u64),
                                bank.texture(2 * class_id as u64 + 1),
                            )
                        } else {
                            independent_pair(&mut stream)
                        }
                    }
                    TexturePolicy::Decorrelated => independent_pair(&mut stream),
                };
                let figure_pose = sample_pose(&mut stream);
                let ground_pose = sample_pose(&mut stream);
                images.push(compose(&mask, &figure, &figure_pose, &ground, &ground_pose));
                class_masks.push(mask);
            }
            classes.push(ClassRecord {
                class_id,
                images,
                stylized: None,
            });
            masks.push(class_masks);
        }
        Ok((ClassDataset::new(split, config.resolution, classes)?, masks))
    };

    let (pretrain, pretrain_masks) = build_split(
        Split::Pretrain,
        config.pretrain_classes,
        TexturePolicy::ClassCorrelated,
    )?;
    let (validation, validation_masks) = build_split(
        Split::Validation,
        config.validation_classes,
        TexturePolicy::Decorrelated,
    )?;
    let (test, test_masks) =
        build_split(Split::Test, config.test_classes, TexturePolicy::Decorrelated)?;

    let benchmark = Benchmark {
        pretrain,
        validation,
        test,
        pretrain_masks: MaskSet {
            per_class: pretrain_masks,
        },
        validation_masks: MaskSet {
            per_class: validation_masks,
        },
        test_masks: MaskSet {
            per_class: test_masks,
        },
    };
    if config.verify {
        verify_benchmark(&benchmark)?;
    }
    Ok(benchmark)
}

/// Draws shape instances and placements until the rasterized mask has a
/// visible area; the handful of retries stay on the same stream so results
/// are deterministic.
fn sample_visible_mask<R: Rng + ?Sized>(
    family: &ShapeFamily,
    resolution: usize,
    stream: &mut R,
) -> Result<Mask> {
    const MIN_AREA: usize = 3;
    for _ in 0..12 {
        let instance = family.instantiate(stream);
        let placement = sample_placement(stream, resolution);
        let mask = render_mask(&instance, &placement, resolution);
        if mask.area() >= MIN_AREA {
            return Ok(mask);
        }
    }
    Err(Error::Sampling(format!(
        "family {family:?} kept rasterizing empty at {resolution}x{resolution}"
    )))
}

/// Quantities measured by [`verify_benchmark`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    /// Texture-statistics classifier accuracy on the pretrain split.
    pub pretrain_texture_accuracy: f64,
    pub validation_texture_accuracy: f64,
    pub test_texture_accuracy: f64,
    /// Chance level (1 / class count) per split.
    pub pretrain_chance: f64,
    pub validation_chance: f64,
    pub test_chance: f64,
    pub iou_within: f64,
    pub iou_between: f64,
}

/// Checks the benchmark's two load-bearing properties and reports the
/// measurements. Errors if either fails:
///
/// - texture statistics separate pretrain classes (the shortcut exists)
///   but collapse toward chance on the decorrelated splits;
/// - silhouettes agree within classes more than between classes.
pub fn verify_benchmark(benchmark: &Benchmark) -> Result<VerifyReport> {
    let (pre_acc, _) =
        oracle::nearest_centroid_accuracy(&benchmark.pretrain, &benchmark.pretrain_masks);
    let (val_acc, val_n) =
        oracle::nearest_centroid_accuracy(&benchmark.validation, &benchmark.validation_masks);
    let (test_acc, test_n) =
        oracle::nearest_centroid_accuracy(&benchmark.test, &benchmark.test_masks);
    let pre_chance = 1.0 / benchmark.pretrain.n_classes() as f64;
    let val_chance = 1.0 / benchmark.validation.n_classes() as f64;
    let test_chance = 1.0 / benchmark.test.n_classes() as f64;

    let (iou_within, iou_between) = silhouette_agreement(benchmark)?;
    let report = VerifyReport {
        pretrain_texture_accuracy: pre_acc,
        validation_texture_accuracy: val_acc,
        test_texture_accuracy: test_acc,
        pretrain_chance: pre_chance,
        validation_chance: val_chance,
        test_chance: test_chance,
        iou_within,
        iou_between,
    };

    if pre_acc < 0.6 {
        return Err(Error::Contract(format!(
            "texture statistics only reach {pre_acc:.3} on pretrain classes; the texture \
             shortcut this benchmark is built around is missing"
        )));
    }
    for (name, acc, chance, n) in [
        ("validation", val_acc, val_chance, val_n),
        ("test", test_acc, test_chance, test_n),
    ] {
        let sigma = (chance * (1.0 - chance) / n as f64).sqrt();
        let band = (3.0 * sigma).max(0.08);
        if acc > chance + band {
            return Err(Error::Contract(format!(
                "texture statistics reach {acc:.3} on the {name} split (chance {chance:.3}, \
                 allowed band {band:.3}); textures are not decorrelated from class identity"
            )));
        }
        let shortcut = pre_acc - pre_chance;
        if acc - chance > 0.5 * shortcut {
            return Err(Error::Contract(format!(
                "texture separability on the {name} split ({acc:.3} vs chance {chance:.3}) \
                 retains more than half the pretrain shortcut ({pre_acc:.3} vs {pre_chance:.3})"
            )));
        }
    }
    if iou_within <= iou_between + 0.1 {
        return Err(Error::Contract(format!(
            "within-class silhouette IoU {iou_within:.3} does not dominate between-class IoU \
             {iou_between:.3}"
        )));
    }
    Ok(report)
}

/// Mean within-family and between-family IoU of canonical silhouettes over
/// every family the benchmark uses.
fn silhouette_agreement(benchmark: &Benchmark) -> Result<(f64, f64)> {
    const INSTANCES: usize = 6;
    const RES: usize = 48;
    let total = benchmark.pretrain.n_classes()
        + benchmark.validation.n_classes()
        + benchmark.test.n_classes();
    let families = ShapeFamily::catalog(total)?;
    let mut per_family: Vec<Vec<Mask>> = Vec::with_capacity(total);
    for (fi, family) in families.iter().enumerate() {
        let mut stream = rng::child_rng(0xA11CE, tag::CLASS, fi as u64);
        per_family.push(
            (0..INSTANCES)
                .map(|_| shapes::canonical_mask(&family.instantiate(&mut stream), RES))
                .collect(),
        );
    }
    let mut within = (0.0, 0usize);
    let mut between = (0.0, 0usize);
    for (i, masks) in per_family.iter().enumerate() {
        for a in 0..masks.len() {
            for b in (a + 1)..masks.len() {
                within.0 += mask_iou(&masks[a], &masks[b]);
                within.1 += 1;
            }
        }
        for other in per_family.iter().skip(i + 1) {
            between.0 += mask_iou(&masks[0], &other[0]);
            between.1 += 1;
        }
    }
    Ok((within.0 / within.1 as f64, between.0 / between.1 as f64))
}
