use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-k patch counts at which every curve is sampled, when they fit.
pub const TOP_K: [usize; 28] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 30, 35, 40, 45, 50, 60, 70, 80, 90, 100, 150, 200, 300, 400, 500,
];

/// Fractions of the bag whose `ceil(t·n)` patch counts join the top-k list.
pub const THRESHOLDS: [f64; 8] = [0.20, 0.40, 0.60, 0.80, 0.85, 0.90, 0.95, 0.99];

/// Why a patch count appears in the bin list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinSource {
    TopK,
    Threshold,
    /// Produced by both enumerations.
    Both,
    /// The full bag size, appended because neither list reached it.
    Total,
}

impl BinSource {
    pub fn name(self) -> &'static str {
        match self {
            BinSource::TopK => "top-k",
            BinSource::Threshold => "threshold",
            BinSource::Both => "both",
            BinSource::Total => "total",
        }
    }
}

/// Strictly increasing patch counts ending at the bag size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoBins {
    ks: Vec<usize>,
    sources: Vec<BinSource>,
}

impl InfoBins {
    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn sources(&self) -> &[BinSource] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    /// `bin,k,source` per entry.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin", "k", "source"])?;
        for (i, (k, s)) in self.ks.iter().zip(&self.sources).enumerate() {
            w.write_record([i.to_string(), k.to_string(), s.name().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bins for a bag of `n` patches with the default thresholds. Empty for `n = 0`.
pub fn info_bins(n: usize) -> InfoBins {
    info_bins_with(n, &THRESHOLDS).expect("default thresholds are valid")
}

pub fn info_bins_with(n: usize, thresholds: &[f64]) -> Result<InfoBins> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::param("thresholds", format!("{} is outside (0, 1]", t)));
    }
    // Products like 0.85 · 1000 land a hair above the integer in binary.
    let from_thresholds: Vec<usize> = thresholds
        .iter()
        .map(|t| ((t * n as f64) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let mut entries: Vec<(usize, BinSource)> = Vec::new();
    let mut push = |k: usize, src: BinSource| {
        if k == 0 || k > n {
            return;
        }
        match entries.iter_mut().find(|e| e.0 == k) {
            Some(e) if e.1 != src => e.1 = BinSource::Both,
            Some(_) => {}
            None => entries.push((k, src)),
        }
    };
    TOP_K.iter().for_each(|&k| push(k, BinSource::TopK));
    from_thresholds.into_iter().for_each(|k| push(k, BinSource::Threshold));
    if n > 0 && !entries.iter().any(|e| e.0 == n) {
        entries.push((n, BinSource::Total));
    }
    entries.sort_by_key(|e| e.0);
    Ok(InfoBins {
        ks: entries.iter().map(|e| e.0).collect(),
        sources: entries.iter().map(|e| e.1).collect(),
    })
}
