use crate::data::FeatureBag;
use crate::error::{Error, Result};

/// Ground-truth saliency for bags with patch masks.
///
/// Masked patches always outrank unmasked ones. Within each group, patches
/// are ordered by their projection onto the difference between the mean
/// masked and mean unmasked feature vectors of the fitting bags, so the
/// most strongly expressed positives are revealed first.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskOracle {
    direction: Vec<f64>,
}

impl MaskOracle {
    pub fn fit(bags: &[&FeatureBag]) -> Result<Self> {
        let d = bags
            .first()
            .map(|b| b.dim())
            .ok_or_else(|| Error::Evaluation("no bags to fit the oracle".into()))?;
        let (mut pos, mut neg) = (vec![0.0; d], vec![0.0; d]);
        let (mut n_pos, mut n_neg) = (0usize, 0usize);
        for bag in bags {
            let mask = bag
                .mask
                .as_ref()
                .ok_or_else(|| Error::Evaluation(format!("slide {} has no patch mask", bag.slide_id)))?;
            for (k, &m) in mask.iter().enumerate() {
                let (acc, count) = if m {
                    (&mut pos, &mut n_pos)
                } else {
                    (&mut neg, &mut n_neg)
                };
                *count += 1;
                for (a, &v) in acc.iter_mut().zip(bag.row(k)) {
                    *a += v as f64;
                }
            }
        }
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::Evaluation(
                "oracle needs both masked and unmasked patches".into(),
            ));
        }
        let direction = pos
            .iter()
            .zip(&neg)
            .map(|(p, q)| p / n_pos as f64 - q / n_neg as f64)
            .collect();
        Ok(Self { direction })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// `mask_k + rank_k / (2n)`, where `rank_k` orders projections ascending.
    pub fn saliency(&self, bag: &FeatureBag) -> Result<Vec<f64>> {
        let mask = bag
            .mask
            .as_ref()
            .ok_or_else(|| Error::Evaluation(format!("slide {} has no patch mask", bag.slide_id)))?;
        if bag.dim() != self.direction.len() {
            return Err(Error::shape(
                format!("[n, {}]", self.direction.len()),
                &[bag.len(), bag.dim()],
            ));
        }
        let proj: Vec<f64> = (0..bag.len())
            .map(|k| bag.row(k).iter().zip(&self.direction).map(|(&v, w)| v as f64 * w).sum())
            .collect();
        let mut order: Vec<usize> = (0..bag.len()).collect();
        order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
        let n = bag.len() as f64;
        let mut s = vec![0.0; bag.len()];
        for (rank, &k) in order.iter().enumerate() {
            s[k] = if mask[k] { 1.0 } else { 0.0 } + rank as f64 / (2.0 * n);
        }
        Ok(s)
    }
}
