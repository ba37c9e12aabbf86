//! Patch-grid heatmaps written as binary PPM, optionally mirrored to PNG.

use std::path::Path;

use cig_core::{atomic_write, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Grayscale,
    /// Blue through white to red.
    Diverging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSpec {
    pub colormap: Colormap,
    /// Pixels per patch along each axis.
    pub cell_size: u32,
    /// Colour of grid cells no patch occupies.
    pub background: [u8; 3],
    /// Also write a PNG next to every PPM.
    pub png: bool,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self {
            colormap: Colormap::Grayscale,
            cell_size: 4,
            background: [0, 0, 0],
            png: false,
        }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 {
            return Err(Error::Parameter {
                name: "cell_size",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// An RGB raster, row-major from the top-left.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Heatmap {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.pixels, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| Error::Contract(format!("PNG encoding failed: {}", e)))?;
        Ok(out)
    }

    /// Writes `path` as PPM and, when `png` is set, the same raster beside it
    /// with a `.png` extension.
    pub fn save(&self, path: &Path, png: bool) -> Result<()> {
        atomic_write(path, &self.to_ppm())?;
        if png {
            atomic_write(&path.with_extension("png"), &self.to_png()?)?;
        }
        Ok(())
    }
}

fn colour(v: f64, map: Colormap) -> [u8; 3] {
    let byte = |t: f64| (255.0 * t).round().clamp(0.0, 255.0) as u8;
    match map {
        Colormap::Grayscale => [byte(v); 3],
        Colormap::Diverging => {
            let t = 2.0 * v - 1.0;
            if t < 0.0 {
                [byte(1.0 + t), byte(1.0 + t), 255]
            } else {
                [255, byte(1.0 - t), byte(1.0 - t)]
            }
        }
    }
}

/// Paints each patch's min-max normalised saliency into its cell of the
/// bounding grid of `coords`. Constant saliency maps to mid-scale.
pub fn render_heatmap(coords: &[(i32, i32)], saliency: &[f64], spec: &HeatmapSpec) -> Result<Heatmap> {
    spec.validate()?;
    if saliency.is_empty() {
        return Err(Error::Parameter {
            name: "saliency",
            reason: "nothing to render".into(),
        });
    }
    if coords.len() != saliency.len() {
        return Err(Error::InputShape {
            expected: format!("{} coordinates", saliency.len()),
            got: vec![coords.len()],
        });
    }
    if saliency.iter().any(|s| !s.is_finite()) {
        return Err(Error::Parameter {
            name: "saliency",
            reason: "contains non-finite values".into(),
        });
    }
    let (x0, x1) = coords
        .iter()
        .fold((i32::MAX, i32::MIN), |(a, b), c| (a.min(c.0), b.max(c.0)));
    let (y0, y1) = coords
        .iter()
        .fold((i32::MAX, i32::MIN), |(a, b), c| (a.min(c.1), b.max(c.1)));
    let cell = spec.cell_size as u64;
    let width = (x1 as i64 - x0 as i64 + 1) as u64 * cell;
    let height = (y1 as i64 - y0 as i64 + 1) as u64 * cell;
    if width * height > 1 << 28 {
        return Err(Error::Parameter {
            name: "cell_size",
            reason: format!("{}×{} image is too large", width, height),
        });
    }
    let (lo, hi) = saliency
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let range = hi - lo;

    let (w, h) = (width as usize, height as usize);
    let mut pixels: Vec<u8> = spec.background.iter().copied().cycle().take(3 * w * h).collect();
    for (&(x, y), &s) in coords.iter().zip(saliency) {
        let v = if range > 0.0 { (s - lo) / range } else { 0.5 };
        let rgb = colour(v, spec.colormap);
        let cx = (x as i64 - x0 as i64) as usize * cell as usize;
        let cy = (y as i64 - y0 as i64) as usize * cell as usize;
        for row in cy..cy + cell as usize {
            for col in cx..cx + cell as usize {
                let i = 3 * (row * w + col);
                pixels[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }
    Ok(Heatmap {
        width: width as u32,
        height: height as u32,
        pixels,
    })
}
