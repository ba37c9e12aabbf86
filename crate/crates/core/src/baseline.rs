//! Opposite-class reference pools and the per-slide baselines drawn from them.

use std::io::Write;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pool construction settings; `per_slide = None` resolves to
/// `ceil(median bag size / n_slides)` over the candidate bags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub n_slides: usize,
    pub per_slide: Option<usize>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            n_slides: 30,
            per_slide: None,
        }
    }
}

impl PoolConfig {
    pub fn resolve_per_slide(&self, bags: &[&FeatureBag]) -> Result<usize> {
        if self.n_slides == 0 {
            return Err(Error::param("n_slides", "must be at least 1"));
        }
        match self.per_slide {
            Some(0) => Err(Error::param("per_slide", "must be at least 1")),
            Some(k) => Ok(k),
            None => {
                if bags.is_empty() {
                    return Err(Error::Pool("no candidate slides".into()));
                }
                let mut sizes: Vec<usize> = bags.iter().map(|b| b.len()).collect();
                sizes.sort_unstable();
                let mid = sizes.len() / 2;
                let median = if sizes.len() % 2 == 1 {
                    sizes[mid] as f64
                } else {
                    (sizes[mid - 1] + sizes[mid]) as f64 / 2.0
                };
                Ok(((median / self.n_slides as f64).ceil() as usize).max(1))
            }
        }
    }
}

/// Where one pooled row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSource {
    /// Index into [`ReferencePool::source_slides`].
    pub slide: usize,
    pub row_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSlide {
    pub slide_id: String,
    pub label: usize,
    /// The slide had fewer rows than `per_slide`, so rows were drawn with replacement.
    pub with_replacement: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePool {
    rows: Tensor,
    provenance: Vec<RowSource>,
    sources: Vec<SourceSlide>,
    classes: Vec<usize>,
    per_slide: usize,
    seed: u64,
    warning: Option<String>,
}

/// Builds a pool for `target_class` from bags of every other class.
///
/// Slides are picked without replacement, round-robin over the classes
/// present (each class's slides in seeded random order), until `n_slides`
/// are chosen or candidates run out.
pub fn build_reference_pool(
    bags: &[&FeatureBag],
    target_class: usize,
    config: &PoolConfig,
    seed: u64,
) -> Result<ReferencePool> {
    if bags.is_empty() {
        return Err(Error::Pool("opposite-class slide set is empty".into()));
    }
    if let Some(b) = bags.iter().find(|b| b.label == target_class) {
        return Err(Error::Contract(format!(
            "slide {} has the target class {} and cannot serve as a reference",
            b.slide_id, target_class
        )));
    }
    let dim = bags[0].dim();
    if bags.iter().any(|b| b.dim() != dim) {
        return Err(Error::Pool("candidate slides disagree on feature dimension".into()));
    }
    let per_slide = config.resolve_per_slide(bags)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut classes: Vec<usize> = bags.iter().map(|b| b.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut queues: Vec<Vec<&FeatureBag>> = classes
        .iter()
        .map(|&c| {
            let mut q: Vec<&FeatureBag> = bags.iter().copied().filter(|b| b.label == c).collect();
            q.shuffle(&mut rng);
            q.reverse();
            q
        })
        .collect();

    let wanted = config.n_slides.min(bags.len());
    let mut chosen = Vec::with_capacity(wanted);
    while chosen.len() < wanted {
        for q in queues.iter_mut() {
            if chosen.len() == wanted {
                break;
            }
            if let Some(b) = q.pop() {
                chosen.push(b);
            }
        }
    }

    let warning = (wanted < config.n_slides).then(|| {
        format!(
            "requested {} reference slides but only {} are available",
            config.n_slides, wanted
        )
    });

    let mut data = Vec::with_capacity(wanted * per_slide * dim);
    let mut provenance = Vec::with_capacity(wanted * per_slide);
    let mut sources = Vec::with_capacity(wanted);
    for (s, bag) in chosen.iter().enumerate() {
        let with_replacement = bag.len() < per_slide;
        let picks: Vec<usize> = if with_replacement {
            (0..per_slide).map(|_| rng.random_range(0..bag.len())).collect()
        } else {
            index::sample(&mut rng, bag.len(), per_slide).into_vec()
        };
        for r in picks {
            data.extend(bag.row(r).iter().map(|&v| v as f64));
            provenance.push(RowSource { slide: s, row_index: r });
        }
        sources.push(SourceSlide {
            slide_id: bag.slide_id.clone(),
            label: bag.label,
            with_replacement,
        });
    }

    Ok(ReferencePool {
        rows: Tensor::matrix(provenance.len(), dim, data)?,
        provenance,
        sources,
        classes,
        per_slide,
        seed,
        warning,
    })
}

impl ReferencePool {
    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn provenance(&self) -> &[RowSource] {
        &self.provenance
    }

    pub fn source_slides(&self) -> &[SourceSlide] {
        &self.sources
    }

    /// Classes the pooled rows were drawn from.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn per_slide(&self) -> usize {
        self.per_slide
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Set when fewer slides were available than requested.
    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// Draws `n_target` rows uniformly with replacement.
    pub fn sample(&self, n_target: usize, seed: u64) -> Result<Tensor> {
        sample_baseline(self, n_target, seed)
    }

    pub(crate) fn sample_with(&self, n_target: usize, rng: &mut impl Rng) -> Result<Tensor> {
        if n_target == 0 {
            return Err(Error::EmptyBag);
        }
        if self.is_empty() {
            return Err(Error::Pool("pool has no rows".into()));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(n_target * d);
        for _ in 0..n_target {
            let r = rng.random_range(0..self.len());
            data.extend_from_slice(self.rows.row(r));
        }
        Tensor::matrix(n_target, d, data)
    }

    /// Column means of the pooled rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let (p, d) = (self.len(), self.dim());
        let mut mean = vec![0.0; d];
        for r in 0..p {
            for (m, v) in mean.iter_mut().zip(self.rows.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= p.max(1) as f64);
        mean
    }

    /// Writes `slide_id,row_index,pool_position`, one line per pooled row.
    pub fn write_provenance_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["slide_id", "row_index", "pool_position"])?;
        for (pos, src) in self.provenance.iter().enumerate() {
            w.write_record([
                self.sources[src.slide].slide_id.as_str(),
                &src.row_index.to_string(),
                &pos.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n_target × d` baseline drawn uniformly with replacement from the pool.
pub fn sample_baseline(pool: &ReferencePool, n_target: usize, seed: u64) -> Result<Tensor> {
    pool.sample_with(n_target, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Baseline construction used by attribution runs. `Zero` and `Mean` exist
/// to reproduce the failure modes of uninformative references.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    #[default]
    Opposite,
    Zero,
    Mean,
}

impl BaselineKind {
    pub fn build(self, pool: &ReferencePool, n_target: usize, seed: u64) -> Result<Tensor> {
        if n_target == 0 {
            return Err(Error::EmptyBag);
        }
        match self {
            BaselineKind::Opposite => sample_baseline(pool, n_target, seed),
            BaselineKind::Zero => Ok(Tensor::zeros(&[n_target, pool.dim()])),
            BaselineKind::Mean => {
                let mean = pool.mean_row();
                Tensor::from_rows(&vec![mean; n_target])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(id: &str, label: usize, n: usize, fill: f32) -> FeatureBag {
        let feats: Vec<f32> = (0..n * 2).map(|i| fill + i as f32).collect();
        let coords = (0..n as i32).map(|i| (i, 0)).collect();
        FeatureBag::new(id, id, label, feats, 2, coords).unwrap()
    }

    #[test]
    fn thirty_slides_eight_rows_each() {
        let bags: Vec<FeatureBag> = (0..40).map(|i| bag(&format!("s{}", i), 0, 20, i as f32)).collect();
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let cfg = PoolConfig {
            n_slides: 30,
            per_slide: Some(8),
        };
        let pool = build_reference_pool(&refs, 1, &cfg, 3).unwrap();
        assert_eq!(pool.len(), 240);
        assert_eq!(pool.source_slides().len(), 30);
        for s in 0..30 {
            assert_eq!(pool.provenance().iter().filter(|r| r.slide == s).count(), 8);
        }
        assert!(pool.warning().is_none());
        assert_eq!(pool, build_reference_pool(&refs, 1, &cfg, 3).unwrap());
    }

    #[test]
    fn single_slide_sets_warning() {
        let b = bag("only", 0, 4, 0.0);
        let pool = build_reference_pool(&[&b], 1, &PoolConfig::default(), 0).unwrap();
        assert_eq!(pool.source_slides().len(), 1);
        assert!(pool.warning().is_some());
        // ceil(4 / 30) = 1 row.
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn short_slide_is_flagged() {
        let b = bag("short", 0, 2, 0.0);
        let cfg = PoolConfig {
            n_slides: 1,
            per_slide: Some(5),
        };
        let pool = build_reference_pool(&[&b], 1, &cfg, 0).unwrap();
        assert_eq!(pool.len(), 5);
        assert!(pool.source_slides()[0].with_replacement);
    }

    #[test]
    fn rejects_target_class_and_empty() {
        let b = bag("pos", 1, 3, 0.0);
        assert!(matches!(
            build_reference_pool(&[&b], 1, &PoolConfig::default(), 0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            build_reference_pool(&[], 1, &PoolConfig::default(), 0),
            Err(Error::Pool(_))
        ));
    }

    #[test]
    fn round_robin_over_classes() {
        let mut bags = Vec::new();
        for i in 0..10 {
            bags.push(bag(&format!("a{}", i), 0, 5, 0.0));
        }
        for i in 0..10 {
            bags.push(bag(&format!("b{}", i), 2, 5, 0.0));
        }
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let cfg = PoolConfig {
            n_slides: 6,
            per_slide: Some(1),
        };
        let pool = build_reference_pool(&refs, 1, &cfg, 9).unwrap();
        let zeros = pool.source_slides().iter().filter(|s| s.label == 0).count();
        assert_eq!(zeros, 3);
        assert_eq!(pool.classes(), &[0, 2]);
    }

    #[test]
    fn singleton_pool_repeats_row() {
        let b = bag("one", 0, 1, 7.0);
        let pool = build_reference_pool(&[&b], 1, &PoolConfig::default(), 0).unwrap();
        let x = sample_baseline(&pool, 3, 42).unwrap();
        assert_eq!(x.shape(), &[3, 2]);
        for r in 0..3 {
            assert_eq!(x.row(r), &[7.0, 8.0]);
        }
        assert!(matches!(sample_baseline(&pool, 0, 0), Err(Error::EmptyBag)));
    }

    #[test]
    fn sampling_is_seeded() {
        let bags: Vec<FeatureBag> = (0..5)
            .map(|i| bag(&format!("s{}", i), 0, 10, i as f32 * 100.0))
            .collect();
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let pool = build_reference_pool(&refs, 1, &PoolConfig::default(), 1).unwrap();
        assert_eq!(
            sample_baseline(&pool, 7, 5).unwrap(),
            sample_baseline(&pool, 7, 5).unwrap()
        );
    }

    #[test]
    fn provenance_csv_lists_every_row() {
        let b = bag("s", 0, 6, 0.0);
        let cfg = PoolConfig {
            n_slides: 1,
            per_slide: Some(3),
        };
        let pool = build_reference_pool(&[&b], 1, &cfg, 0).unwrap();
        let mut buf = Vec::new();
        pool.write_provenance_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("slide_id,row_index,pool_position\n"));
    }

    #[test]
    fn debug_baselines() {
        let b = bag("s", 0, 2, 0.0);
        let cfg = PoolConfig {
            n_slides: 1,
            per_slide: Some(2),
        };
        let pool = build_reference_pool(&[&b], 1, &cfg, 0).unwrap();
        let z = BaselineKind::Zero.build(&pool, 3, 0).unwrap();
        assert_eq!(z.sum(), 0.0);
        let m = BaselineKind::Mean.build(&pool, 2, 0).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }
}
