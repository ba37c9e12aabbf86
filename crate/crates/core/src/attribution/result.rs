use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binfmt::{atomic_write, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Saliency methods known to the pipeline. `Random` produces scores only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gradient,
    Ig,
    Eg,
    Idg,
    Cig,
    Random,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gradient,
        Method::Ig,
        Method::Eg,
        Method::Idg,
        Method::Cig,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::Ig => "ig",
            Method::Eg => "eg",
            Method::Idg => "idg",
            Method::Cig => "cig",
            Method::Random => "random",
        }
    }

    /// Display label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Gradient => "Vanilla Gradient",
            Method::Ig => "IG",
            Method::Eg => "EG",
            Method::Idg => "IDG",
            Method::Cig => "CIG",
            Method::Random => "Random",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Method::ALL.get(tag as usize).copied()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param("methods", format!("unknown method `{}`", s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionResult {
    pub method: Method,
    /// Per-feature attributions, `n × d`.
    pub attributions: Tensor,
    /// Per-patch saliency, `mean_j |A[k, j]|`.
    pub saliency: Vec<f64>,
    /// `|Σ A − Δ|` for methods with a completeness guarantee.
    pub residual: Option<f64>,
    pub steps: usize,
    pub target_class: Option<usize>,
    /// Free-form description of the baseline used (seed, pool).
    pub baseline_ref: Option<String>,
    /// Formula is a reconstruction rather than a closed definition.
    pub approximate: bool,
    pub notes: Vec<String>,
}

impl AttributionResult {
    pub(crate) fn new(method: Method, attributions: Tensor, steps: usize) -> Result<Self> {
        let saliency = patch_saliency(&attributions)?;
        Ok(Self {
            method,
            attributions,
            saliency,
            residual: None,
            steps,
            target_class: None,
            baseline_ref: None,
            approximate: false,
            notes: Vec::new(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.attributions.sum()
    }

    pub fn with_baseline_ref(mut self, reference: impl Into<String>) -> Self {
        self.baseline_ref = Some(reference.into());
        self
    }
}

/// `s_k = (1/d) Σ_j |A[k, j]|` for an `n × d` matrix. A vector counts as one patch.
pub fn patch_saliency(a: &Tensor) -> Result<Vec<f64>> {
    if a.rank() == 1 && !a.is_empty() {
        return Ok(vec![a.data().iter().map(|v| v.abs()).sum::<f64>() / a.len() as f64]);
    }
    if a.rank() != 2 || a.cols() == 0 {
        return Err(Error::shape("[n, d] with d >= 1", a.shape()));
    }
    let d = a.cols() as f64;
    Ok((0..a.rows())
        .map(|k| a.row(k).iter().map(|v| v.abs()).sum::<f64>() / d)
        .collect())
}

const ATTR_MAGIC: &[u8; 5] = b"ATTR1";

/// `ATTR1`: magic, method tag (u8), n (u32), d (u32), f32 `A` row-major,
/// f32 saliency, f64 residual (NaN when absent), CRC32 of everything before it.
pub fn encode_attribution(result: &AttributionResult) -> Result<Vec<u8>> {
    let a = &result.attributions;
    let mut w = Writer::new();
    w.bytes(ATTR_MAGIC);
    w.u8(result.method.tag());
    w.u32(crate::binfmt::to_u32(a.rows(), "n")?);
    w.u32(crate::binfmt::to_u32(a.cols(), "d")?);
    for &v in a.data() {
        w.f32(v as f32);
    }
    for &s in &result.saliency {
        w.f32(s as f32);
    }
    w.f64(result.residual.unwrap_or(f64::NAN));
    Ok(w.finish_with_crc())
}

/// Decoded `ATTR1` payload, at the stored f32 precision.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredAttribution {
    pub method: Method,
    pub attributions: Tensor,
    pub saliency: Vec<f64>,
    pub residual: Option<f64>,
}

pub fn decode_attribution(bytes: &[u8]) -> Result<StoredAttribution> {
    let mut r = Reader::new(bytes);
    r.magic(ATTR_MAGIC)?;
    let offset = r.position();
    let tag = r.u8("method tag")?;
    let method = Method::from_tag(tag).ok_or_else(|| Error::format(offset, format!("unknown method tag {}", tag)))?;
    let n = r.u32("n")? as usize;
    let d = r.u32("d")? as usize;
    let a: Vec<f64> = r.f32s(n * d, "attributions")?.into_iter().map(f64::from).collect();
    let s: Vec<f64> = r.f32s(n, "saliency")?.into_iter().map(f64::from).collect();
    let residual = r.f64("residual")?;
    r.finish_crc()?;
    Ok(StoredAttribution {
        method,
        attributions: Tensor::matrix(n, d, a)?,
        saliency: s,
        residual: (!residual.is_nan()).then_some(residual),
    })
}

pub fn write_attribution(result: &AttributionResult, path: &Path) -> Result<()> {
    atomic_write(path, &encode_attribution(result)?)
}

pub fn read_attribution(path: &Path) -> Result<StoredAttribution> {
    decode_attribution(&std::fs::read(path)?)
}

/// `patch_index,x,y,saliency` per patch.
pub fn write_saliency_csv<W: Write>(saliency: &[f64], coords: &[(i32, i32)], writer: W) -> Result<()> {
    if saliency.len() != coords.len() {
        return Err(Error::shape(format!("{} coordinates", saliency.len()), &[coords.len()]));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["patch_index", "x", "y", "saliency"])?;
    for (k, (s, (x, y))) in saliency.iter().zip(coords).enumerate() {
        w.write_record([k.to_string(), x.to_string(), y.to_string(), format!("{:e}", s)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saliency_is_mean_abs() {
        let a = Tensor::from_rows(&[[1.0, -1.0], [3.0, 3.0]]).unwrap();
        assert_eq!(patch_saliency(&a).unwrap(), vec![1.0, 3.0]);
        let z = Tensor::zeros(&[3, 4]);
        assert_eq!(patch_saliency(&z).unwrap(), vec![0.0; 3]);
        let col = Tensor::matrix(2, 1, vec![-2.0, 0.5]).unwrap();
        assert_eq!(patch_saliency(&col).unwrap(), vec![2.0, 0.5]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(Method::from_tag(m.tag()), Some(m));
        }
        let err = "shap".parse::<Method>().unwrap_err();
        assert!(err.to_string().contains("methods"));
    }

    #[test]
    fn attr1_round_trip_and_corruption() {
        let a = Tensor::from_rows(&[[0.5, -1.25], [2.0, 0.0], [1.0, 1.0]]).unwrap();
        let mut res = AttributionResult::new(Method::Cig, a.clone(), 50).unwrap();
        res.residual = Some(1e-9);
        let bytes = encode_attribution(&res).unwrap();
        let back = decode_attribution(&bytes).unwrap();
        assert_eq!(back.method, Method::Cig);
        assert_eq!(back.attributions, a);
        assert_eq!(back.saliency, res.saliency);
        assert_eq!(back.residual, Some(1e-9));

        let mut bad = bytes.clone();
        bad[16] ^= 0x40;
        assert!(matches!(decode_attribution(&bad), Err(Error::Checksum { .. })));
        assert!(matches!(decode_attribution(&bytes[..10]), Err(Error::Format { .. })));

        res.residual = None;
        let back = decode_attribution(&encode_attribution(&res).unwrap()).unwrap();
        assert_eq!(back.residual, None);
    }

    #[test]
    fn csv_has_one_line_per_patch() {
        let mut buf = Vec::new();
        write_saliency_csv(&[0.5, 1.0], &[(0, 0), (1, 0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(write_saliency_csv(&[0.5], &[], Vec::new()).is_err());
    }
}
