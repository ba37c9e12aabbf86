//! Patch-feature CSV interchange: `slide_id,x,y,f0,…,f{d-1}`, one row per patch.

use std::io::{Read, Write};

use crate::data::bag::FeatureBag;
use crate::error::{Error, Result};

/// Patches of one slide as read from CSV, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSlide {
    pub slide_id: String,
    pub coords: Vec<(i32, i32)>,
    pub features: Vec<f32>,
    pub dim: usize,
}

impl CsvSlide {
    pub fn into_bag(self, patient_id: impl Into<String>, label: usize) -> Result<FeatureBag> {
        FeatureBag::new(self.slide_id, patient_id, label, self.features, self.dim, self.coords)
    }
}

/// Groups rows by slide id, keeping slides in order of first appearance.
pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<CsvSlide>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "slide_id" || &headers[1] != "x" || &headers[2] != "y" {
        return Err(Error::Dataset("CSV header must be slide_id,x,y,f0,...".into()));
    }
    let dim = headers.len() - 3;
    let mut slides: Vec<CsvSlide> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Dataset(format!("CSV row {}: invalid {}", line + 2, what));
        let slide_id = rec[0].to_string();
        let x: i32 = rec[1].trim().parse().map_err(|_| bad("x"))?;
        let y: i32 = rec[2].trim().parse().map_err(|_| bad("y"))?;
        let slide = match slides.iter_mut().rev().find(|s| s.slide_id == slide_id) {
            Some(s) => s,
            None => {
                slides.push(CsvSlide {
                    slide_id,
                    coords: Vec::new(),
                    features: Vec::new(),
                    dim,
                });
                slides.last_mut().unwrap()
            }
        };
        slide.coords.push((x, y));
        for j in 0..dim {
            let v: f32 = rec[3 + j].trim().parse().map_err(|_| bad("feature"))?;
            slide.features.push(v);
        }
    }
    Ok(slides)
}

pub fn write_features_csv<W: Write>(bags: &[FeatureBag], writer: W) -> Result<()> {
    let dim = bags.first().map_or(0, FeatureBag::dim);
    if bags.iter().any(|b| b.dim() != dim) {
        return Err(Error::Dataset("bags disagree on feature dimension".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["slide_id".to_string(), "x".into(), "y".into()];
    header.extend((0..dim).map(|j| format!("f{}", j)));
    w.write_record(&header)?;
    for bag in bags {
        for (k, &(x, y)) in bag.coords().iter().enumerate() {
            let mut row = vec![bag.slide_id.clone(), x.to_string(), y.to_string()];
            row.extend(bag.row(k).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
