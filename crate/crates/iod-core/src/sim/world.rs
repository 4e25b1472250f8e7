//! Synthetic query-feature world.
//!
//! Each image is a bag of query feature vectors. Object queries sit near a
//! per-(class, scale bucket) semantic mean; the last four feature dimensions
//! carry the logit of the true normalized center box, so a linear head can
//! decode positions exactly. Incremental stages annotate only their own
//! classes; a configured fraction of images additionally contains one
//! unlabeled old-class instance.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::dataset::TaskSchedule;
use crate::error::{Error, Result};
use crate::geometry::{BBox, CenterBox};
use crate::model::Annotation;
use crate::scale::ScaleBucket;

/// Side length of every synthetic image, in pixels.
pub const IMAGE_SIZE: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct SimObject {
    pub class_id: u32,
    pub bbox: BBox<f64>,
    pub cbox: CenterBox<f64>,
}

#[derive(Debug, Clone)]
pub struct SimImage {
    pub image_id: u64,
    /// `queries_per_image x feature_dim` world features.
    pub features: Array2<f64>,
    /// Objects present, including unlabeled old-class ones.
    pub objects: Vec<SimObject>,
    /// Stage-visible ground truth.
    pub annotations: Vec<Annotation<f64>>,
}

#[derive(Debug, Clone)]
pub struct StageData {
    pub stage: usize,
    pub train: Vec<SimImage>,
    /// Fully annotated images of this stage's classes, used for evaluation
    /// at this and every later stage.
    pub eval: Vec<SimImage>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub schedule: TaskSchedule,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub stages: Vec<StageData>,
    pub warnings: Vec<String>,
}

impl World {
    /// Fraction of stage-t training images containing an old-class instance.
    pub fn measured_cooccurrence(&self, stage: usize) -> Result<f64> {
        let data = self
            .stages
            .get(stage - 1)
            .ok_or(Error::StageOutOfRange { stage, stages: self.stages.len() })?;
        let current = self.schedule.stage_classes(stage)?;
        let mixed = data
            .train
            .iter()
            .filter(|img| img.objects.iter().any(|o| !current.contains(&o.class_id)))
            .count();
        Ok(mixed as f64 / data.train.len() as f64)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn choose<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Per-bucket box side ranges, chosen so no jitter can cross the 1024/9216
/// area boundaries.
fn random_box(rng: &mut ChaCha8Rng, bucket: ScaleBucket) -> BBox<f64> {
    let (lo, hi) = match bucket {
        ScaleBucket::Small => (18.0, 30.0),
        ScaleBucket::Medium => (40.0, 90.0),
        ScaleBucket::Large => (110.0, 150.0),
    };
    let w = rng.random_range(lo..hi);
    let h = rng.random_range(lo..hi);
    let x = rng.random_range(0.0..IMAGE_SIZE - w);
    let y = rng.random_range(0.0..IMAGE_SIZE - h);
    BBox::new(x, y, w, h).unwrap()
}

struct Generator {
    semantic_dim: usize,
    feature_dim: usize,
    /// Semantic mean per (class, bucket), plus one background mean.
    means: BTreeMap<(u32, usize), Array1<f64>>,
    background: Array1<f64>,
    noise: f64,
}

impl Generator {
    fn new(cfg: &RunConfig, num_classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let feature_dim = cfg.world.feature_dim;
        let semantic_dim = feature_dim - 4;
        let margin = cfg.world.margin;
        let mut accepted: Vec<Array1<f64>> = Vec::new();
        let mut draw = |rng: &mut ChaCha8Rng| -> Result<Array1<f64>> {
            for _ in 0..10_000 {
                let candidate =
                    Array1::from_shape_fn(semantic_dim, |_| rng.random_range(-3.0..3.0));
                let separated = accepted.iter().all(|m| {
                    let d2: f64 = m
                        .iter()
                        .zip(candidate.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    d2.sqrt() >= margin
                });
                if separated {
                    accepted.push(candidate.clone());
                    return Ok(candidate);
                }
            }
            Err(Error::World {
                message: format!(
                    "could not place {} separated feature means with margin {margin} in {} dims",
                    num_classes * 3 + 1,
                    semantic_dim
                ),
            })
        };

        let mut means = BTreeMap::new();
        for class in 0..num_classes as u32 {
            for bucket in ScaleBucket::ALL {
                means.insert((class, bucket.index()), draw(rng)?);
            }
        }
        let background = draw(rng)?;
        Ok(Self { semantic_dim, feature_dim, means, background, noise: cfg.world.noise })
    }

    fn feature_row(&self, mean: &Array1<f64>, cbox: &CenterBox<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.feature_dim);
        for i in 0..self.semantic_dim {
            row.push(mean[i] + rng.random_range(-1.0..1.0) * self.noise);
        }
        row.extend([logit(cbox.cx), logit(cbox.cy), logit(cbox.w), logit(cbox.h)]);
        row
    }

    /// Builds one image: `objects` first, background queries after.
    fn image(
        &self,
        image_id: u64,
        objects: Vec<SimObject>,
        queries: usize,
        annotated: impl Fn(u32) -> bool,
        rng: &mut ChaCha8Rng,
        scale: &crate::scale::ScaleConfig<f64>,
    ) -> SimImage {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(queries);
        for object in &objects {
            let bucket = scale.bucket_of(&object.bbox);
            let mean = &self.means[&(object.class_id, bucket.index())];
            rows.push(self.feature_row(mean, &object.cbox, rng));
        }
        for _ in objects.len()..queries {
            let cbox = CenterBox {
                cx: rng.random_range(0.1..0.9),
                cy: rng.random_range(0.1..0.9),
                w: rng.random_range(0.01..0.03),
                h: rng.random_range(0.01..0.03),
            };
            rows.push(self.feature_row(&self.background, &cbox, rng));
        }
        let features =
            Array2::from_shape_vec((queries, self.feature_dim), rows.concat()).unwrap();
        let annotations = objects
            .iter()
            .filter(|o| annotated(o.class_id))
            .map(|o| Annotation {
                image_id,
                bbox: o.bbox,
                class_id: o.class_id,
                is_pseudo: false,
            })
            .collect();
        SimImage { image_id, features, objects, annotations }
    }
}

/// Deterministic staged dataset generation.
pub fn generate_world(cfg: &RunConfig) -> Result<World> {
    let warnings = cfg.validate()?;
    let scale = cfg.scale_config()?;
    let num_classes: usize = cfg.world.classes_per_task.iter().sum();

    let mut next = 0u32;
    let mut stages_classes = Vec::new();
    for &count in &cfg.world.classes_per_task {
        stages_classes.push((next..next + count as u32).collect());
        next += count as u32;
    }
    let schedule = TaskSchedule::new(stages_classes)?;

    let mut mean_rng = ChaCha8Rng::seed_from_u64(cfg.world.seed);
    let generator = Generator::new(cfg, num_classes, &mut mean_rng)?;

    let buckets = ScaleBucket::ALL;
    let mut stages = Vec::new();
    for stage in 1..=schedule.num_stages() {
        let current: Vec<u32> = schedule.stage_classes(stage)?.iter().copied().collect();
        let old: Vec<u32> = schedule.previous_classes(stage)?.into_iter().collect();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.world.seed);
        rng.set_stream(100 + stage as u64);

        let n_train = cfg.world.train_images_per_stage;
        let planted: std::collections::BTreeSet<usize> = if old.is_empty() {
            Default::default()
        } else {
            let count = (cfg.world.cooccurrence_rate * n_train as f64).round() as usize;
            let mut order: Vec<usize> = (0..n_train).collect();
            order.shuffle(&mut rng);
            order.into_iter().take(count).collect()
        };

        let mut train = Vec::with_capacity(n_train);
        for i in 0..n_train {
            let image_id = stage as u64 * 1_000_000 + i as u64;
            let mut objects: Vec<SimObject> = (0..cfg.world.objects_per_image)
                .map(|_| {
                    let class_id = choose(&mut rng, &current);
                    let bucket = choose(&mut rng, &buckets);
                    let bbox = random_box(&mut rng, bucket);
                    SimObject { class_id, cbox: bbox.to_center(IMAGE_SIZE, IMAGE_SIZE), bbox }
                })
                .collect();
            if planted.contains(&i) {
                objects[0].class_id = choose(&mut rng, &old);
            }
            let current_set = schedule.stage_classes(stage)?;
            train.push(generator.image(
                image_id,
                objects,
                cfg.world.queries_per_image,
                |class| current_set.contains(&class),
                &mut rng,
                &scale,
            ));
        }

        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.world.seed);
        eval_rng.set_stream(200 + stage as u64);
        let mut eval = Vec::with_capacity(cfg.world.eval_images_per_stage);
        for i in 0..cfg.world.eval_images_per_stage {
            let image_id = stage as u64 * 1_000_000 + 500_000 + i as u64;
            let objects: Vec<SimObject> = (0..cfg.world.objects_per_image)
                .map(|_| {
                    let class_id = choose(&mut eval_rng, &current);
                    let bucket = choose(&mut eval_rng, &buckets);
                    let bbox = random_box(&mut eval_rng, bucket);
                    SimObject { class_id, cbox: bbox.to_center(IMAGE_SIZE, IMAGE_SIZE), bbox }
                })
                .collect();
            eval.push(generator.image(
                image_id,
                objects,
                cfg.world.queries_per_image,
                |_| true,
                &mut eval_rng,
                &scale,
            ));
        }

        stages.push(StageData { stage, train, eval });
    }

    Ok(World {
        schedule,
        num_classes,
        feature_dim: cfg.world.feature_dim,
        stages,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.world.train_images_per_stage = 40;
        cfg.world.eval_images_per_stage = 10;
        cfg
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = config();
        let a = generate_world(&cfg).unwrap();
        let b = generate_world(&cfg).unwrap();
        assert_eq!(a.stages.len(), b.stages.len());
        for (sa, sb) in a.stages.iter().zip(&b.stages) {
            for (ia, ib) in sa.train.iter().zip(&sb.train) {
                assert_eq!(ia.features, ib.features);
                assert_eq!(ia.annotations.len(), ib.annotations.len());
            }
        }
    }

    #[test]
    fn zero_noise_pins_features_to_the_means() {
        let mut cfg = config();
        cfg.world.noise = 0.0;
        let world = generate_world(&cfg).unwrap();
        let img = &world.stages[0].train[0];
        // Two objects of the same class and bucket must share semantic dims.
        let sem = world.feature_dim - 4;
        let mut seen: BTreeMap<(u32, usize), Vec<f64>> = BTreeMap::new();
        let scale = cfg.scale_config().unwrap();
        for stage in &world.stages {
            for img2 in &stage.train {
                for (q, o) in img2.objects.iter().enumerate() {
                    let key = (o.class_id, scale.bucket_of(&o.bbox).index());
                    let row: Vec<f64> =
                        img2.features.row(q).iter().take(sem).copied().collect();
                    if let Some(prev) = seen.get(&key) {
                        assert_eq!(prev, &row);
                    } else {
                        seen.insert(key, row);
                    }
                }
            }
        }
        assert!(!img.objects.is_empty());
    }

    #[test]
    fn the_box_encoding_inverts_through_sigmoid() {
        let world = generate_world(&config()).unwrap();
        let img = &world.stages[0].train[0];
        let d = world.feature_dim;
        for (q, o) in img.objects.iter().enumerate() {
            let row = img.features.row(q);
            let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
            assert!((sigmoid(row[d - 4]) - o.cbox.cx).abs() < 1e-12);
            assert!((sigmoid(row[d - 3]) - o.cbox.cy).abs() < 1e-12);
            assert!((sigmoid(row[d - 2]) - o.cbox.w).abs() < 1e-12);
            assert!((sigmoid(row[d - 1]) - o.cbox.h).abs() < 1e-12);
        }
    }

    #[test]
    fn stage_one_has_no_old_instances_and_full_annotations() {
        let world = generate_world(&config()).unwrap();
        let current = world.schedule.stage_classes(1).unwrap();
        for img in &world.stages[0].train {
            assert!(img.objects.iter().all(|o| current.contains(&o.class_id)));
            assert_eq!(img.annotations.len(), img.objects.len());
        }
        assert_eq!(world.measured_cooccurrence(1).unwrap(), 0.0);
    }

    #[test]
    fn cooccurrence_is_planted_at_the_requested_rate() {
        let mut cfg = config();
        cfg.world.cooccurrence_rate = 0.5;
        cfg.world.train_images_per_stage = 50;
        let world = generate_world(&cfg).unwrap();
        let measured = world.measured_cooccurrence(2).unwrap();
        assert!((measured - 0.5).abs() <= 0.02, "measured {measured}");
        // Old-class instances are never annotated at stage 2.
        let current = world.schedule.stage_classes(2).unwrap();
        for img in &world.stages[1].train {
            assert!(img.annotations.iter().all(|a| current.contains(&a.class_id)));
        }
    }

    #[test]
    fn zero_rate_means_pure_stages() {
        let mut cfg = config();
        cfg.world.cooccurrence_rate = 0.0;
        let world = generate_world(&cfg).unwrap();
        assert_eq!(world.measured_cooccurrence(2).unwrap(), 0.0);
    }

    #[test]
    fn eval_images_annotate_everything() {
        let world = generate_world(&config()).unwrap();
        for stage in &world.stages {
            for img in &stage.eval {
                assert_eq!(img.annotations.len(), img.objects.len());
            }
        }
    }

    #[test]
    fn boxes_never_straddle_bucket_boundaries() {
        let world = generate_world(&config()).unwrap();
        for stage in &world.stages {
            for img in &stage.train {
                for o in &img.objects {
                    let area = o.bbox.area();
                    assert!(area < 900.0 * 1.01 || (1600.0..8100.1).contains(&area) || area >= 12100.0);
                }
            }
        }
    }
}
