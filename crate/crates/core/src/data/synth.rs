//! Planted-signal stand-in for extracted slide features.
//!
//! Negative slides (class 0) draw every patch from `N(0, σ²I)`. Slides of
//! class `c ≥ 1` additionally replace a spatially contiguous block of
//! patches with draws shifted by `shift_magnitude · u_c`, where `u_c` is a
//! seeded random unit direction per class, and record those patches in the
//! ground-truth mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::bag::FeatureBag;
use crate::data::manifest::{split, DatasetManifest, SlideRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub slides_per_class: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    pub dim: usize,
    pub background_std: f64,
    pub shift_magnitude: f64,
    pub tumor_fraction_min: f64,
    pub tumor_fraction_max: f64,
    /// Patient-level train/val/test ratios applied after generation.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 2,
            slides_per_class: 100,
            patches_min: 200,
            patches_max: 200,
            dim: 32,
            background_std: 0.75,
            shift_magnitude: 4.0,
            tumor_fraction_min: 0.05,
            tumor_fraction_max: 0.20,
            split: [0.4, 0.1, 0.5],
            seed: 11,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::param("n_classes", "need at least two classes"));
        }
        if self.slides_per_class == 0 {
            return Err(Error::param("slides_per_class", "must be positive"));
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return Err(Error::param("patches_min", "need 1 <= patches_min <= patches_max"));
        }
        if self.dim < 2 {
            return Err(Error::param("dim", "must be at least 2"));
        }
        if !(self.background_std > 0.0) {
            return Err(Error::param("background_std", "must be positive"));
        }
        if !self.shift_magnitude.is_finite() {
            return Err(Error::param("shift_magnitude", "must be finite"));
        }
        let (lo, hi) = (self.tumor_fraction_min, self.tumor_fraction_max);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::param("tumor_fraction", "need 0 < min <= max <= 1"));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        match self.n_classes {
            2 => vec!["normal".into(), "tumor".into()],
            n => std::iter::once("normal".to_string())
                .chain((1..n).map(|c| format!("tumor_{}", c)))
                .collect(),
        }
    }
}

fn unit_direction(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Row-major grid placement, `ceil(sqrt(n))` columns wide.
fn grid_coords(n: usize) -> Vec<(i32, i32)> {
    let w = (n as f64).sqrt().ceil().max(1.0) as usize;
    (0..n).map(|i| ((i % w) as i32, (i / w) as i32)).collect()
}

/// The `count` patches closest (squared grid distance, then index) to a
/// random centre.
fn tumor_region(coords: &[(i32, i32)], count: usize, rng: &mut impl Rng) -> Vec<bool> {
    let centre = coords[rng.random_range(0..coords.len())];
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    idx.sort_by_key(|&i| {
        let (dx, dy) = (coords[i].0 - centre.0, coords[i].1 - centre.1);
        (dx * dx + dy * dy, i)
    });
    let mut mask = vec![false; coords.len()];
    for &i in idx.iter().take(count) {
        mask[i] = true;
    }
    mask
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let directions: Vec<Vec<f64>> = (1..config.n_classes)
        .map(|_| unit_direction(config.dim, &mut rng))
        .collect();

    let mut bags = Vec::new();
    let mut records = Vec::new();
    for class in 0..config.n_classes {
        for _ in 0..config.slides_per_class {
            let index = bags.len();
            let slide_id = format!("slide_{:04}", index);
            let patient_id = format!("patient_{:04}", index);
            let n = rng.random_range(config.patches_min..=config.patches_max);
            let coords = grid_coords(n);
            let mut features: Vec<f32> = (0..n * config.dim)
                .map(|_| (config.background_std * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();

            let mask = if class == 0 {
                vec![false; n]
            } else {
                let frac = rng.random_range(config.tumor_fraction_min..=config.tumor_fraction_max);
                let count = ((frac * n as f64).round() as usize).clamp(1, n);
                let mask = tumor_region(&coords, count, &mut rng);
                let dir = &directions[class - 1];
                for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    let row = &mut features[k * config.dim..(k + 1) * config.dim];
                    for (v, u) in row.iter_mut().zip(dir) {
                        *v = (*v as f64 + config.shift_magnitude * u) as f32;
                    }
                }
                mask
            };

            let bag = FeatureBag::new(&slide_id, &patient_id, class, features, config.dim, coords)?.with_mask(mask)?;
            records.push(SlideRecord {
                slide_id: slide_id.clone(),
                patient_id,
                label: class,
                path: format!("bags/{}.fbag", slide_id),
                split: None,
                positive_patches: bag.positive_patches(),
            });
            bags.push(bag);
        }
    }

    let manifest = DatasetManifest {
        class_names: config.class_names(),
        slides: records,
        seed: Some(config.seed),
    };
    let manifest = split(&manifest, config.split, crate::seed::derive(config.seed, "split"))?;
    Dataset::new(manifest, bags)
}
