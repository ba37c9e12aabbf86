//! Feature bags, dataset manifests, splits and the synthetic generator.

pub mod bag;
pub mod csv_io;
pub mod manifest;
pub mod synth;

use std::path::Path;

pub use bag::{decode_bag, encode_bag, read_bag, write_bag, FeatureBag};
pub use csv_io::{read_features_csv, write_features_csv, CsvSlide};
pub use manifest::{split, DatasetManifest, SlideRecord, Split};
pub use synth::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};

/// A manifest together with its bags, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    bags: Vec<FeatureBag>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, bags: Vec<FeatureBag>) -> Result<Self> {
        manifest.validate()?;
        if manifest.slides.len() != bags.len() {
            return Err(Error::Dataset(format!(
                "manifest lists {} slides but {} bags were given",
                manifest.slides.len(),
                bags.len()
            )));
        }
        for (rec, bag) in manifest.slides.iter().zip(&bags) {
            if rec.slide_id != bag.slide_id || rec.label != bag.label || rec.patient_id != bag.patient_id {
                return Err(Error::Dataset(format!(
                    "bag {} does not match its manifest record",
                    bag.slide_id
                )));
            }
        }
        Ok(Self { manifest, bags })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn bags(&self) -> &[FeatureBag] {
        &self.bags
    }

    pub fn class_count(&self) -> usize {
        self.manifest.class_names.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.bags.first().map(FeatureBag::dim)
    }

    pub fn split_bags(&self, split: Split) -> Vec<&FeatureBag> {
        self.manifest
            .slides
            .iter()
            .zip(&self.bags)
            .filter(|(r, _)| r.split == Some(split))
            .map(|(_, b)| b)
            .collect()
    }

    /// Writes `manifest.json` and one `FBAG1` file per slide under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (rec, bag) in self.manifest.slides.iter().zip(&self.bags) {
            write_bag(bag, &dir.join(&rec.path))?;
        }
        self.manifest.write(&dir.join("manifest.json"))
    }

    /// Reads `dir/manifest.json` and its bags, restoring ground-truth masks.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(&dir.join("manifest.json"))?;
        let mut bags = Vec::with_capacity(manifest.slides.len());
        for rec in &manifest.slides {
            let mut bag = read_bag(&dir.join(&rec.path))?;
            if let Some(pos) = &rec.positive_patches {
                let mut mask = vec![false; bag.len()];
                for &i in pos {
                    if i >= bag.len() {
                        return Err(Error::Dataset(format!(
                            "mask index {} out of range for {}",
                            i, rec.slide_id
                        )));
                    }
                    mask[i] = true;
                }
                bag = bag.with_mask(mask)?;
            }
            bags.push(bag);
        }
        Self::new(manifest, bags)
    }
}
