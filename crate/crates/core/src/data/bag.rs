//! Feature bags and the `FBAG1` file format.
//!
//! ```text
//! magic      5 bytes  "FBAG1"
//! version    u16      1
//! n          u32      patch count
//! d          u32      feature dimension
//! label      u16
//! patient    u32 length + UTF-8
//! slide      u32 length + UTF-8
//! coords     n × (i32 x, i32 y)
//! features   n × d f32, row-major
//! crc32      u32      over every preceding byte
//! ```
//!
//! Integers and floats are little-endian. The synthetic ground-truth mask is
//! not part of the file; it travels in the dataset manifest.

use std::path::Path;

use crate::binfmt::{atomic_write, to_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BAG_MAGIC: &[u8; 5] = b"FBAG1";
pub const BAG_VERSION: u16 = 1;

/// One slide: an unordered bag of patch feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub slide_id: String,
    pub patient_id: String,
    pub label: usize,
    features: Vec<f32>,
    n: usize,
    d: usize,
    coords: Vec<(i32, i32)>,
    /// Ground-truth positive patches (synthetic data only).
    pub mask: Option<Vec<bool>>,
}

impl FeatureBag {
    pub fn new(
        slide_id: impl Into<String>,
        patient_id: impl Into<String>,
        label: usize,
        features: Vec<f32>,
        d: usize,
        coords: Vec<(i32, i32)>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "feature dimension must be positive"));
        }
        if !features.len().is_multiple_of(d) {
            return Err(Error::shape(format!("multiple of {} features", d), &[features.len()]));
        }
        let n = features.len() / d;
        if n == 0 {
            return Err(Error::EmptyBag);
        }
        if coords.len() != n {
            return Err(Error::shape(format!("{} coordinates", n), &[coords.len()]));
        }
        Ok(Self {
            slide_id: slide_id.into(),
            patient_id: patient_id.into(),
            label,
            features,
            n,
            d,
            coords,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n {
            return Err(Error::shape(format!("{} mask entries", self.n), &[mask.len()]));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.features[k * self.d..(k + 1) * self.d]
    }

    pub fn coords(&self) -> &[(i32, i32)] {
        &self.coords
    }

    /// Features widened to f64, `n×d`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.d, self.features.iter().map(|&v| v as f64).collect())
            .expect("validated at construction")
    }

    /// Indices of mask-positive patches.
    pub fn positive_patches(&self) -> Option<Vec<usize>> {
        self.mask
            .as_ref()
            .map(|m| m.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| i).collect())
    }
}

pub fn encode_bag(bag: &FeatureBag) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(BAG_MAGIC);
    w.u16(BAG_VERSION);
    w.u32(to_u32(bag.n, "n")?);
    w.u32(to_u32(bag.d, "d")?);
    let label = u16::try_from(bag.label).map_err(|_| Error::Contract(format!("label {} exceeds u16", bag.label)))?;
    w.u16(label);
    w.string(&bag.patient_id);
    w.string(&bag.slide_id);
    for &(x, y) in &bag.coords {
        w.i32(x);
        w.i32(y);
    }
    for &v in &bag.features {
        w.f32(v);
    }
    Ok(w.finish_with_crc())
}

pub fn decode_bag(bytes: &[u8]) -> Result<FeatureBag> {
    let mut r = Reader::new(bytes);
    r.magic(BAG_MAGIC)?;
    let at = r.position();
    let version = r.u16("version")?;
    if version != BAG_VERSION {
        return Err(Error::format(at, format!("unsupported bag version {}", version)));
    }
    let at = r.position();
    let n = r.u32("n")? as usize;
    let d = r.u32("d")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(at, format!("degenerate bag size {}×{}", n, d)));
    }
    let label = r.u16("label")? as usize;
    let patient_id = r.string("patient id")?;
    let slide_id = r.string("slide id")?;
    let coord_bytes = r.take(n.saturating_mul(8), "coordinates")?;
    let coords = coord_bytes
        .chunks_exact(8)
        .map(|c| {
            (
                i32::from_le_bytes(c[..4].try_into().unwrap()),
                i32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();
    let features = r.f32s(n.saturating_mul(d), "features")?;
    r.finish_crc()?;
    FeatureBag::new(slide_id, patient_id, label, features, d, coords)
}

pub fn write_bag(bag: &FeatureBag, path: &Path) -> Result<()> {
    atomic_write(path, &encode_bag(bag)?)
}

pub fn read_bag(path: &Path) -> Result<FeatureBag> {
    decode_bag(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FeatureBag {
        FeatureBag::new("s", "p", 0, vec![1.5], 1, vec![(0, 0)]).unwrap()
    }

    #[test]
    fn minimal_bag_round_trips() {
        let b = tiny();
        assert_eq!(decode_bag(&encode_bag(&b).unwrap()).unwrap(), b);
    }

    #[test]
    fn flipped_crc_byte() {
        let mut bytes = encode_bag(&tiny()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        assert!(matches!(decode_bag(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_bag(&tiny()).unwrap();
        for cut in [3, 6, 12, bytes.len() - 1] {
            match decode_bag(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut, "cut {} offset {}", cut, offset),
                other => panic!("cut {}: unexpected {:?}", cut, other),
            }
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_bag(&tiny()).unwrap();
        bytes[1] = b'X';
        assert!(matches!(decode_bag(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn trailing_garbage() {
        let mut bytes = encode_bag(&tiny()).unwrap();
        bytes.push(0);
        assert!(decode_bag(&bytes).is_err());
    }

    #[test]
    fn constructor_validates() {
        assert!(matches!(
            FeatureBag::new("s", "p", 0, vec![], 2, vec![]),
            Err(Error::EmptyBag)
        ));
        assert!(FeatureBag::new("s", "p", 0, vec![1.0, 2.0], 2, vec![]).is_err());
        assert!(tiny().with_mask(vec![true, false]).is_err());
    }
}
