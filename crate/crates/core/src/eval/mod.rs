//! Insertion-style curves over information-level bins and the evaluation
//! protocol that aggregates them per class.

mod bins;
mod curves;
mod oracle;
mod protocol;

pub use bins::{info_bins, info_bins_with, BinSource, InfoBins, THRESHOLDS, TOP_K};
pub use curves::{
    auc, mil_aic, mil_curves, mil_sic, random_saliency, rank, reveal, CurveInput, CurveKind, EvalCurve, RandomMode,
};
pub use oracle::MaskOracle;
pub use protocol::{
    evaluate, mean_std, pool_for_class, prepare_slide, summarize, ClassSummary, EvalConfig, EvalReport, PoolRecord,
    SlideCurves, SlideRecordOut, SlideSetup,
};
