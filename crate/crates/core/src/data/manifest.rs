use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::atomic_write;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub label: usize,
    /// Bag file, relative to the manifest's directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Ground-truth positive patch indices (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_patches: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub slides: Vec<SlideRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        let mut patient_split: HashMap<&str, Option<Split>> = HashMap::new();
        for rec in &self.slides {
            if rec.label >= self.class_names.len() {
                return Err(Error::Dataset(format!(
                    "slide {} has label {} but only {} classes are declared",
                    rec.slide_id,
                    rec.label,
                    self.class_names.len()
                )));
            }
            if seen.insert(rec.slide_id.as_str(), ()).is_some() {
                return Err(Error::Dataset(format!("duplicate slide id {}", rec.slide_id)));
            }
            match patient_split.get(rec.patient_id.as_str()) {
                Some(prev) if *prev != rec.split => {
                    return Err(Error::Dataset(format!(
                        "patient {} spans splits {:?} and {:?}",
                        rec.patient_id, prev, rec.split
                    )));
                }
                _ => {
                    patient_split.insert(&rec.patient_id, rec.split);
                }
            }
        }
        Ok(())
    }

    pub fn slides_in(&self, split: Split) -> impl Iterator<Item = &SlideRecord> {
        self.slides.iter().filter(move |r| r.split == Some(split))
    }

    /// Validates, then writes pretty JSON atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        atomic_write(path, &json)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Assigns whole patients to train/val/test.
///
/// Patients are shuffled within their label group (a patient's group is the
/// largest label among its slides), interleaved proportionally across
/// groups, and cut into consecutive runs whose lengths follow `ratios` by
/// largest remainder. Every slide inherits its patient's split.
pub fn split(manifest: &DatasetManifest, ratios: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::param("ratios", format!("must be nonnegative, got {:?}", ratios)));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::param("ratios", format!("must sum to 1, got {}", total)));
    }

    let mut first_seen: Vec<&str> = Vec::new();
    let mut group_of: HashMap<&str, usize> = HashMap::new();
    for rec in &manifest.slides {
        let g = group_of.entry(&rec.patient_id).or_insert_with(|| {
            first_seen.push(&rec.patient_id);
            rec.label
        });
        *g = (*g).max(rec.label);
    }
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for p in &first_seen {
        groups.entry(group_of[p]).or_default().push(p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(f64, usize, &str)> = Vec::with_capacity(first_seen.len());
    for (g, members) in groups.iter_mut() {
        members.shuffle(&mut rng);
        let s = members.len() as f64;
        for (i, p) in members.iter().enumerate() {
            placed.push(((i as f64 + 0.5) / s, *g, p));
        }
    }
    placed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let counts = largest_remainder(placed.len(), &ratios);
    let mut assignment: HashMap<&str, Split> = HashMap::new();
    let splits = [Split::Train, Split::Val, Split::Test];
    let mut it = placed.iter();
    for (split, &count) in splits.iter().zip(&counts) {
        for (_, _, p) in it.by_ref().take(count) {
            assignment.insert(p, *split);
        }
    }

    let mut out = manifest.clone();
    for rec in &mut out.slides {
        rec.split = Some(assignment[rec.patient_id.as_str()]);
    }
    out.validate()?;
    Ok(out)
}

/// Integer counts summing to `total`, proportional to `ratios`.
fn largest_remainder(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    // Guard against 0.8 * 100 = 80.00000000000001 style representation error.
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(patients: usize, slides_per_patient: usize) -> DatasetManifest {
        let mut slides = Vec::new();
        for p in 0..patients {
            for s in 0..slides_per_patient {
                slides.push(SlideRecord {
                    slide_id: format!("s{}_{}", p, s),
                    patient_id: format!("p{}", p),
                    label: p % 2,
                    path: String::new(),
                    split: None,
                    positive_patches: None,
                });
            }
        }
        DatasetManifest {
            class_names: vec!["neg".into(), "pos".into()],
            slides,
            seed: None,
        }
    }

    fn count(m: &DatasetManifest, s: Split) -> usize {
        m.slides_in(s).count()
    }

    #[test]
    fn ratio_counts() {
        let m = split(&manifest(100, 1), [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(
            (count(&m, Split::Train), count(&m, Split::Val), count(&m, Split::Test)),
            (80, 10, 10)
        );
    }

    #[test]
    fn shared_patients_stay_together() {
        let m = split(&manifest(30, 3), [0.5, 0.25, 0.25], 9).unwrap();
        m.validate().unwrap();
        for p in 0..30 {
            let splits: Vec<_> = m
                .slides
                .iter()
                .filter(|r| r.patient_id == format!("p{}", p))
                .map(|r| r.split)
                .collect();
            assert!(splits.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = split(&manifest(40, 1), [0.6, 0.2, 0.2], 1).unwrap();
        let b = split(&manifest(40, 1), [0.6, 0.2, 0.2], 1).unwrap();
        let c = split(&manifest(40, 1), [0.6, 0.2, 0.2], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_ratios() {
        assert!(matches!(
            split(&manifest(4, 1), [1.2, -0.1, -0.1], 0),
            Err(Error::Parameter { name: "ratios", .. })
        ));
        assert!(split(&manifest(4, 1), [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn validate_catches_patient_leak() {
        let mut m = split(&manifest(10, 2), [0.5, 0.0, 0.5], 0).unwrap();
        let other = if m.slides[0].split == Some(Split::Train) {
            Split::Test
        } else {
            Split::Train
        };
        m.slides[0].split = Some(other);
        assert!(matches!(m.validate(), Err(Error::Dataset(_))));
    }
}
