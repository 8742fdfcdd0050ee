//! Colour-threshold blob detection on HSV images: candidate particles under
//! LED light and the NIR illumination spot under the lamp.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, PixelCoord};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("image buffer has {got} pixels, expected {width}x{height}")]
    SizeMismatch { width: u32, height: u32, got: usize },
    #[error("pixel channel out of range at ({u}, {v})")]
    ChannelRange { u: u32, v: u32 },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Illumination {
    Led,
    NirLamp,
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    pub const fn new(h: f64, s: f64, v: f64) -> Self {
        Self { h, s, v }
    }

    fn in_range(&self) -> bool {
        (0.0..360.0).contains(&self.h)
            && (0.0..=1.0).contains(&self.s)
            && (0.0..=1.0).contains(&self.v)
    }

    pub fn to_rgb8(self) -> [u8; 3] {
        let c = self.v * self.s;
        let hp = self.h / 60.0;
        let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
        let (r, g, b) = match hp as u32 {
            0 => (c, x, 0.0),
            1 => (x, c, 0.0),
            2 => (0.0, c, x),
            3 => (0.0, x, c),
            4 => (x, 0.0, c),
            _ => (c, 0.0, x),
        };
        let m = self.v - c;
        let q = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
        [q(r), q(g), q(b)]
    }

    pub fn from_rgb8(rgb: [u8; 3]) -> Self {
        let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let d = max - min;
        let h = if d == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / d).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / d + 2.0)
        } else {
            60.0 * ((r - g) / d + 4.0)
        };
        let s = if max == 0.0 { 0.0 } else { d / max };
        Hsv::new(h % 360.0, s, max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    width: u32,
    height: u32,
    pixels: Vec<Hsv>,
    pub illumination: Illumination,
}

impl SceneImage {
    pub fn new(
        width: u32,
        height: u32,
        pixels: Vec<Hsv>,
        illumination: Illumination,
    ) -> Result<Self, SegmentationError> {
        if pixels.len() != (width as usize) * (height as usize) {
            return Err(SegmentationError::SizeMismatch {
                width,
                height,
                got: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !p.in_range()) {
            return Err(SegmentationError::ChannelRange {
                u: (i % width as usize) as u32,
                v: (i / width as usize) as u32,
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            illumination,
        })
    }

    pub fn filled(width: u32, height: u32, color: Hsv, illumination: Illumination) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
            illumination,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Hsv] {
        &self.pixels
    }

    pub fn get(&self, u: u32, v: u32) -> Hsv {
        self.pixels[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, p: Hsv) {
        let i = (v * self.width + u) as usize;
        self.pixels[i] = p;
    }

    pub fn matches(&self, intrinsics: &CameraIntrinsics) -> bool {
        self.width == intrinsics.width && self.height == intrinsics.height
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), SegmentationError> {
        let mut buf = image::RgbImage::new(self.width, self.height);
        for (i, p) in self.pixels.iter().enumerate() {
            let u = i as u32 % self.width;
            let v = i as u32 / self.width;
            buf.put_pixel(u, v, image::Rgb(p.to_rgb8()));
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let enc = PnmEncoder::new(file).with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary));
        enc.write_image(
            buf.as_raw(),
            self.width,
            self.height,
            ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_ppm(path: &Path, illumination: Illumination) -> Result<Self, SegmentationError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| Hsv::from_rgb8(p.0)).collect();
        SceneImage::new(w, h, pixels, illumination)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionKind {
    CandidateParticle,
    NirSpot,
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
}

impl BoundingBox {
    pub fn contains(&self, p: &PixelCoord) -> bool {
        p.u >= self.u_min as f64
            && p.u <= self.u_max as f64 + 1.0
            && p.v >= self.v_min as f64
            && p.v <= self.v_max as f64 + 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Pixel-centre convention: pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
    pub centroid: PixelCoord,
    /// Hole-filled area in pixels.
    pub area: f64,
    pub bbox: BoundingBox,
    pub kind: DetectionKind,
    pub spot_diameter: Option<f64>,
    pub circularity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Hue band of sand (degrees, inclusive).
    pub sand_hue_min: f64,
    pub sand_hue_max: f64,
    pub s_min: f64,
    pub v_min: f64,
    pub min_area: f64,
    pub max_area: f64,
    pub c_min: f64,
    /// Value threshold for the NIR spot.
    pub spot_v_min: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        let cam = CameraIntrinsics::from_fov(640, 480, 80.0);
        Self {
            sand_hue_min: 35.0,
            sand_hue_max: 60.0,
            s_min: 0.45,
            v_min: 0.15,
            min_area: projected_disc_area(&cam, 1e-3, 0.1),
            max_area: 20_000.0,
            c_min: 0.5,
            spot_v_min: 0.5,
        }
    }
}

/// Pixel area of a disc of `diameter` seen face-on from `range`.
pub fn projected_disc_area(cam: &CameraIntrinsics, diameter: f64, range: f64) -> f64 {
    let r = 0.5 * diameter * cam.omega / range;
    std::f64::consts::PI * r * r
}

struct Blob {
    /// Hole-filled pixel set, row-major indices.
    pixels: Vec<usize>,
    perimeter: usize,
    bbox: BoundingBox,
}

/// 8-connected components of `mask` with interior holes filled. Components
/// lying inside another component's holes are dropped.
fn blobs(mask: &[bool], width: u32, height: u32) -> Vec<Blob> {
    let (w, h) = (width as usize, height as usize);
    let mut label = vec![0u32; w * h];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        let id = comps.len() as u32 + 1;
        let mut comp = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && label[j] == 0 {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }

    let mut out = Vec::new();
    let mut children = vec![false; comps.len()];
    let mut filled_sets = Vec::with_capacity(comps.len());
    for (k, comp) in comps.iter().enumerate() {
        let id = k as u32 + 1;
        let (mut u0, mut v0, mut u1, mut v1) = (w, h, 0, 0);
        for &i in comp {
            u0 = u0.min(i % w);
            u1 = u1.max(i % w);
            v0 = v0.min(i / w);
            v1 = v1.max(i / w);
        }
        // Flood the outside (4-connected) inside a one-pixel padded box.
        let bw = u1 - u0 + 3;
        let bh = v1 - v0 + 3;
        let inside = |bx: usize, by: usize| -> bool {
            if bx == 0 || by == 0 || bx == bw - 1 || by == bh - 1 {
                return false;
            }
            label[(by - 1 + v0) * w + (bx - 1 + u0)] == id
        };
        let mut outside = vec![false; bw * bh];
        outside[0] = true;
        stack.push(0);
        while let Some(i) = stack.pop() {
            let (bx, by) = (i % bw, i / bw);
            let nbrs = [
                (bx.wrapping_sub(1), by),
                (bx + 1, by),
                (bx, by.wrapping_sub(1)),
                (bx, by + 1),
            ];
            for (nx, ny) in nbrs {
                if nx >= bw || ny >= bh {
                    continue;
                }
                let j = ny * bw + nx;
                if !outside[j] && !inside(nx, ny) {
                    outside[j] = true;
                    stack.push(j);
                }
            }
        }
        let mut filled = Vec::new();
        let mut perimeter = 0;
        for by in 1..bh - 1 {
            for bx in 1..bw - 1 {
                if outside[by * bw + bx] {
                    continue;
                }
                let i = (by - 1 + v0) * w + (bx - 1 + u0);
                filled.push(i);
                if label[i] != id && label[i] != 0 {
                    children[label[i] as usize - 1] = true;
                }
                for (nx, ny) in [(bx - 1, by), (bx + 1, by), (bx, by - 1), (bx, by + 1)] {
                    if outside[ny * bw + nx] {
                        perimeter += 1;
                    }
                }
            }
        }
        filled_sets.push(Blob {
            pixels: filled,
            perimeter,
            bbox: BoundingBox {
                u_min: u0 as u32,
                v_min: v0 as u32,
                u_max: u1 as u32,
                v_max: v1 as u32,
            },
        });
    }
    for (k, b) in filled_sets.into_iter().enumerate() {
        if !children[k] {
            out.push(b);
        }
    }
    out
}

fn to_detection(b: &Blob, width: u32, kind: DetectionKind) -> Detection {
    let w = width as usize;
    let n = b.pixels.len() as f64;
    let (mut su, mut sv) = (0.0, 0.0);
    for &i in &b.pixels {
        su += (i % w) as f64 + 0.5;
        sv += (i / w) as f64 + 0.5;
    }
    let area = n;
    // Edge counts overstate the length of slanted boundaries by 4/π on
    // average (Cauchy-Crofton), so discs would never score near 1.
    let perimeter = b.perimeter as f64 * std::f64::consts::FRAC_PI_4;
    let circularity = (4.0 * std::f64::consts::PI * area / perimeter.powi(2)).min(1.0);
    Detection {
        centroid: PixelCoord::new(su / n, sv / n),
        area,
        bbox: b.bbox,
        kind,
        spot_diameter: match kind {
            DetectionKind::NirSpot => Some(2.0 * (area / std::f64::consts::PI).sqrt()),
            DetectionKind::CandidateParticle => None,
        },
        circularity,
    }
}

fn sort_detections(d: &mut [Detection]) {
    d.sort_by(|a, b| {
        b.area
            .total_cmp(&a.area)
            .then_with(|| a.centroid.u.total_cmp(&b.centroid.u))
            .then_with(|| a.centroid.v.total_cmp(&b.centroid.v))
    });
}

/// Saturated, non-sand-hued blobs of plausible size and roundness, largest
/// first.
pub fn detect_candidates(img: &SceneImage, params: &SegmentationParams) -> Vec<Detection> {
    let mask: Vec<bool> = img
        .pixels
        .iter()
        .map(|p| {
            p.s >= params.s_min
                && p.v >= params.v_min
                && !(params.sand_hue_min..=params.sand_hue_max).contains(&p.h)
        })
        .collect();
    let mut out: Vec<Detection> = blobs(&mask, img.width, img.height)
        .iter()
        .map(|b| to_detection(b, img.width, DetectionKind::CandidateParticle))
        .filter(|d| {
            d.area >= params.min_area && d.area <= params.max_area && d.circularity >= params.c_min
        })
        .collect();
    sort_detections(&mut out);
    out
}

/// Largest bright blob under lamp illumination; `None` under LED light or
/// when nothing is bright enough.
pub fn detect_nir_spot(img: &SceneImage, params: &SegmentationParams) -> Option<Detection> {
    if img.illumination != Illumination::NirLamp {
        return None;
    }
    let mask: Vec<bool> = img
        .pixels
        .iter()
        .map(|p| p.v >= params.spot_v_min)
        .collect();
    let mut all: Vec<Detection> = blobs(&mask, img.width, img.height)
        .iter()
        .map(|b| to_detection(b, img.width, DetectionKind::NirSpot))
        .collect();
    sort_detections(&mut all);
    all.into_iter().next()
}
