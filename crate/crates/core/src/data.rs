//! Procedural domain-shift benchmark: four shape classes rendered under
//! controllable domain styling.
//!
//! Class identity is geometry only (circle, square, triangle, cross, each
//! randomized in position, scale, and rotation); every other property —
//! background, fill vs outline stroke, palette, noise — belongs to the
//! domain. Geometry and styling draw from separate derived streams, so two
//! domains with the same seed show the *same* shapes in different styles.
//!
//! The default experiment pairs a photo-like domain (pastel backgrounds,
//! filled colorful shapes) with a sketch-like one (near-white background,
//! wobbly dark outlines).

use crate::image::{Image, CANONICAL_SIDE};
use crate::rng::Rng;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub const CLASS_NAMES: [&str; 4] = ["circle", "square", "triangle", "cross"];

const GEOMETRY_STREAM: u64 = 0x6e01;
const STYLE_STREAM: u64 = 0x6e02;

#[derive(Clone, Debug, PartialEq)]
pub enum DataError {
    /// Need at least one sample per class.
    TooFewSamples { n: usize, classes: usize },
    /// Supported class counts are 2..=4.
    BadClassCount(usize),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::TooFewSamples { n, classes } => {
                write!(f, "{n} samples cannot cover {classes} classes")
            }
            DataError::BadClassCount(c) => write!(f, "class count {c} outside 2..=4"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BackgroundStyle {
    SolidColor,
    NoiseTexture,
    Stripes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StrokeStyle {
    Filled,
    Outline,
}

/// Everything about how a domain looks; nothing here may leak class
/// information.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DomainSpec {
    pub name: String,
    pub background: BackgroundStyle,
    /// Base background lightness in [0, 1].
    pub bg_lightness: f32,
    /// Background colorfulness in [0, 1] (0 = grayscale).
    pub bg_saturation: f32,
    pub stroke: StrokeStyle,
    /// Class-independent hue rotation of the foreground, in turns [0, 1).
    pub hue_shift: f32,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise_sigma: f64,
}

impl DomainSpec {
    /// Pastel backgrounds, filled saturated shapes.
    pub fn photo_like() -> Self {
        DomainSpec {
            name: "photo".into(),
            background: BackgroundStyle::SolidColor,
            bg_lightness: 0.82,
            bg_saturation: 0.25,
            stroke: StrokeStyle::Filled,
            hue_shift: 0.0,
            noise_sigma: 0.02,
        }
    }

    /// Near-white background, wobbly dark outlines.
    pub fn sketch_like() -> Self {
        DomainSpec {
            name: "sketch".into(),
            background: BackgroundStyle::SolidColor,
            bg_lightness: 0.97,
            bg_saturation: 0.02,
            stroke: StrokeStyle::Outline,
            hue_shift: 0.0,
            noise_sigma: 0.03,
        }
    }

    /// Registry used by the CLI's `--spec NAME` flag.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "photo" => Some(Self::photo_like()),
            "sketch" => Some(Self::sketch_like()),
            "photo-noise" => Some(DomainSpec {
                name: "photo-noise".into(),
                background: BackgroundStyle::NoiseTexture,
                ..Self::photo_like()
            }),
            "photo-stripes" => Some(DomainSpec {
                name: "photo-stripes".into(),
                background: BackgroundStyle::Stripes,
                ..Self::photo_like()
            }),
            _ => None,
        }
    }
}

/// Images plus ground-truth labels. During adaptation the labels stay
/// hidden from training and feed only evaluation and diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub domain: DomainSpec,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Generate `n` labeled images (labels cycle through the classes, so class
/// counts stay balanced within one). Fully deterministic from the seed.
pub fn gen_dataset(
    spec: &DomainSpec,
    n: usize,
    classes: usize,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if !(2..=4).contains(&classes) {
        return Err(DataError::BadClassCount(classes));
    }
    if n < classes {
        return Err(DataError::TooFewSamples { n, classes });
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let mut geo = Rng::derive(seed, &[GEOMETRY_STREAM, i as u64]);
        let mut style = Rng::derive(seed, &[STYLE_STREAM, i as u64]);
        images.push(render(spec, label, &mut geo, &mut style));
        labels.push(label);
    }
    Ok(LabeledDataset { images, labels, domain: spec.clone(), seed })
}

struct Geometry {
    class: usize,
    cx: f32,
    cy: f32,
    radius: f32,
    rot_cos: f32,
    rot_sin: f32,
}

// signed distance from p to the class shape; negative inside
fn shape_distance(g: &Geometry, x: f32, y: f32) -> f32 {
    let dx = x - g.cx;
    let dy = y - g.cy;
    // rotate into shape frame
    let qx = g.rot_cos * dx + g.rot_sin * dy;
    let qy = -g.rot_sin * dx + g.rot_cos * dy;
    let r = g.radius;
    match g.class {
        // circle
        0 => crate::real::Real::sqrt(dx * dx + dy * dy) - r,
        // square (Chebyshev box)
        1 => {
            let s = r * 0.82;
            qx.abs().max(qy.abs()) - s
        }
        // equilateral triangle: max signed distance to the three edge lines
        2 => {
            let mut d = f32::NEG_INFINITY;
            for k in 0..3 {
                let ang = k as f32 * (2.0 * core::f32::consts::PI / 3.0);
                // outward edge normal; the edge sits r/2 from the center
                let (nx, ny) = (cosf(ang), sinf(ang));
                d = d.max(nx * qx + ny * qy - r * 0.55);
            }
            d
        }
        // cross: union of two elongated boxes
        _ => {
            let arm = r * 0.34;
            let b1 = (qx.abs() - r).max(qy.abs() - arm);
            let b2 = (qx.abs() - arm).max(qy.abs() - r);
            b1.min(b2)
        }
    }
}

#[inline]
fn floorf(x: f32) -> f32 {
    #[cfg(feature = "std")]
    {
        x.floor()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::floorf(x)
    }
}

#[inline]
fn cosf(x: f32) -> f32 {
    #[cfg(feature = "std")]
    {
        x.cos()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::cosf(x)
    }
}

#[inline]
fn sinf(x: f32) -> f32 {
    #[cfg(feature = "std")]
    {
        x.sin()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::sinf(x)
    }
}

// HSV (all in [0,1]) to RGB
fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h - floorf(h)) * 6.0;
    let i = h as usize % 6;
    let f = h - floorf(h);
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn render(spec: &DomainSpec, class: usize, geo_rng: &mut Rng, style_rng: &mut Rng) -> Image {
    let side = CANONICAL_SIDE;

    // geometry draws are domain-independent so the same seed shows the same
    // shape in every domain
    let geo = Geometry {
        class,
        cx: 16.0 + (geo_rng.next_f32() - 0.5) * 7.0,
        cy: 16.0 + (geo_rng.next_f32() - 0.5) * 7.0,
        radius: 8.0 + geo_rng.next_f32() * 4.0,
        rot_cos: 0.0,
        rot_sin: 0.0,
    };
    let angle = geo_rng.next_f32() * 2.0 * core::f32::consts::PI;
    let geo = Geometry { rot_cos: cosf(angle), rot_sin: sinf(angle), ..geo };

    // style draws
    let bg_hue = style_rng.next_f32();
    let bg_sat = (spec.bg_saturation * (0.7 + 0.6 * style_rng.next_f32())).clamp(0.0, 1.0);
    let bg_val = (spec.bg_lightness + (style_rng.next_f32() - 0.5) * 0.1).clamp(0.0, 1.0);
    let bg_a = hsv_to_rgb(bg_hue, bg_sat, bg_val);
    // second background color for textured modes
    let bg_b = hsv_to_rgb(
        bg_hue + 0.08 + 0.1 * style_rng.next_f32(),
        bg_sat,
        (bg_val - 0.12).clamp(0.0, 1.0),
    );
    let stripe_angle = style_rng.next_f32() * core::f32::consts::PI;
    let stripe_period = 3.0 + style_rng.next_f32() * 5.0;

    let (fg, stroke_width) = match spec.stroke {
        StrokeStyle::Filled => {
            let hue = style_rng.next_f32() + spec.hue_shift;
            let sat = 0.65 + 0.3 * style_rng.next_f32();
            let val = 0.35 + 0.4 * style_rng.next_f32();
            (hsv_to_rgb(hue, sat, val), 0.0)
        }
        StrokeStyle::Outline => {
            let hue = style_rng.next_f32() + spec.hue_shift;
            let val = 0.05 + 0.38 * style_rng.next_f32();
            let width = 0.55 + 0.45 * style_rng.next_f32();
            (hsv_to_rgb(hue, 0.15, val), width)
        }
    };

    // low-frequency wobble field for outline jitter
    let (w1x, w1y, p1) = (
        0.3 + style_rng.next_f32() * 0.5,
        0.3 + style_rng.next_f32() * 0.5,
        style_rng.next_f32() * 6.3,
    );
    let (w2x, w2y, p2) = (
        0.5 + style_rng.next_f32() * 0.9,
        0.5 + style_rng.next_f32() * 0.9,
        style_rng.next_f32() * 6.3,
    );

    let mut img = Image::zeros(side, side, 3);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let bg = match spec.background {
                BackgroundStyle::SolidColor => bg_a,
                BackgroundStyle::NoiseTexture => {
                    let t = 0.5 + 0.5 * sinf(fx * w2x * 3.1 + p2) * sinf(fy * w2y * 2.7 + p1);
                    [
                        bg_a[0] + (bg_b[0] - bg_a[0]) * t,
                        bg_a[1] + (bg_b[1] - bg_a[1]) * t,
                        bg_a[2] + (bg_b[2] - bg_a[2]) * t,
                    ]
                }
                BackgroundStyle::Stripes => {
                    let u = fx * cosf(stripe_angle) + fy * sinf(stripe_angle);
                    if (u / stripe_period) as i32 % 2 == 0 {
                        bg_a
                    } else {
                        bg_b
                    }
                }
            };

            let mut d = shape_distance(&geo, fx, fy);
            let alpha = match spec.stroke {
                StrokeStyle::Filled => (0.5 - d).clamp(0.0, 1.0),
                StrokeStyle::Outline => {
                    let wobble =
                        sinf(fx * w1x + fy * w1y + p1) * 0.7 + sinf(fx * w2x - fy * w2y + p2) * 0.5;
                    d += wobble;
                    (0.5 - (d.abs() - stroke_width)).clamp(0.0, 1.0)
                }
            };

            let px = img.pixel_mut(y, x);
            for c in 0..3 {
                px[c] = bg[c] + (fg[c] - bg[c]) * alpha;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let sigma = spec.noise_sigma;
        for v in img.data_mut() {
            *v = (*v as f64 + style_rng.next_normal() * sigma).clamp(0.0, 1.0) as f32;
        }
    }
    img
}
