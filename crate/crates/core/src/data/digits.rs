//! Procedural digit-pair generator: a reduced-scale, fully offline stand-in
//! for an MNIST-to-USPS style adaptation task.
//!
//! Digits 0-9 are rendered from seven-segment strokes with per-sample
//! rotation, scale, translation, stroke width, and pixel noise. The source
//! domain renders thick 28x28 glyphs, the target thin, blurrier 16x16
//! glyphs. A small corner patch encodes a background level that follows the
//! class with probability `rho` in source and is uniform in target, giving
//! the adaptation methods a task-irrelevant shortcut to disagree over.

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Segment endpoints in glyph space, y pointing down.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.22, 0.15), (0.78, 0.15)), // A: top
    ((0.78, 0.15), (0.78, 0.50)), // B: top right
    ((0.78, 0.50), (0.78, 0.85)), // C: bottom right
    ((0.22, 0.85), (0.78, 0.85)), // D: bottom
    ((0.22, 0.50), (0.22, 0.85)), // E: bottom left
    ((0.22, 0.15), (0.22, 0.50)), // F: top left
    ((0.22, 0.50), (0.78, 0.50)), // G: middle
];

/// Active segments per digit, bit i = segment i (A..G).
const DIGIT_SEGMENTS: [u8; 10] = [
    0b0111111, // 0: ABCDEF
    0b0000110, // 1: BC
    0b1011011, // 2: ABDEG
    0b1001111, // 3: ABCDG
    0b1100110, // 4: BCFG
    0b1101101, // 5: ACDFG
    0b1111101, // 6: ACDEFG
    0b0000111, // 7: ABC
    0b1111111, // 8
    0b1101111, // 9: ABCDFG
];

#[derive(Debug, Clone, PartialEq)]
pub struct DigitsProxySpec {
    pub n_per_domain: usize,
    /// Probability that the source corner patch encodes the class.
    pub rho: f64,
    /// Additive pixel noise scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DigitsProxySpec {
    fn default() -> Self {
        DigitsProxySpec {
            n_per_domain: 2000,
            rho: 0.9,
            noise: 0.06,
            seed: 11,
        }
    }
}

/// Raw u8 images plus labels, ready for IDX serialization.
#[derive(Debug, Clone)]
pub struct RawDigits {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl RawDigits {
    /// Flatten to a dataset with pixels scaled to [0, 1].
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let d = self.rows * self.cols;
        let mut x = Vec::with_capacity(self.images.len() * d);
        for img in &self.images {
            x.extend(img.iter().map(|&b| b as f64 / 255.0));
        }
        let y: Vec<usize> = self.labels.iter().map(|&l| l as usize).collect();
        LabeledDataset::new(self.images.len(), d, x, y, 10)
    }

    /// Flatten with an area-average resample to 16x16, the same path
    /// `load_idx` takes with its downsample flag set.
    pub fn to_dataset_16(&self) -> Result<LabeledDataset> {
        let mut x = Vec::with_capacity(self.images.len() * 256);
        for img in &self.images {
            let scaled: Vec<f64> = img.iter().map(|&b| b as f64 / 255.0).collect();
            x.extend(super::idx::area_downsample(&scaled, self.rows, self.cols, 16));
        }
        let y: Vec<usize> = self.labels.iter().map(|&l| l as usize).collect();
        LabeledDataset::new(self.images.len(), 256, x, y, 10)
    }
}

struct DomainStyle {
    canvas: usize,
    stroke_lo: f64,
    stroke_hi: f64,
    edge: f64,
    patch_origin: usize,
    patch_size: usize,
}

const SOURCE_STYLE: DomainStyle = DomainStyle {
    canvas: 28,
    stroke_lo: 0.075,
    stroke_hi: 0.12,
    edge: 0.030,
    patch_origin: 2,
    patch_size: 5,
};

const TARGET_STYLE: DomainStyle = DomainStyle {
    canvas: 16,
    stroke_lo: 0.05,
    stroke_hi: 0.085,
    edge: 0.055,
    patch_origin: 1,
    patch_size: 3,
};

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn render_digit(
    digit: usize,
    style: &DomainStyle,
    noise: f64,
    rng: &mut RngStream,
) -> Vec<u8> {
    let n = style.canvas;
    let mask = DIGIT_SEGMENTS[digit];
    let theta = rng.uniform_in(-0.21, 0.21);
    let scale = rng.uniform_in(0.85, 1.05);
    let (dx, dy) = (rng.uniform_in(-0.06, 0.06), rng.uniform_in(-0.06, 0.06));
    let stroke = rng.uniform_in(style.stroke_lo, style.stroke_hi);
    let (cos_t, sin_t) = (theta.cos(), theta.sin());

    let mut img = vec![0u8; n * n];
    for py in 0..n {
        for px in 0..n {
            // Map the pixel center back into glyph space.
            let u = (px as f64 + 0.5) / n as f64 - 0.5 - dx;
            let v = (py as f64 + 0.5) / n as f64 - 0.5 - dy;
            let gx = (u * cos_t + v * sin_t) / scale + 0.5;
            let gy = (-u * sin_t + v * cos_t) / scale + 0.5;
            let mut dist = f64::INFINITY;
            for (i, (a, b)) in SEGMENTS.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    dist = dist.min(dist_to_segment((gx, gy), *a, *b));
                }
            }
            // Soft stroke: full intensity inside, smooth falloff at the edge.
            let mut val = 1.0 / (1.0 + ((dist - stroke) / style.edge).exp());
            val += noise * rng.next_normal();
            img[py * n + px] = (val.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img
}

fn stamp_patch(img: &mut [u8], canvas: usize, style: &DomainStyle, level: usize) {
    let intensity = ((level as f64 + 0.5) / 10.0 * 255.0).round() as u8;
    for dy in 0..style.patch_size {
        for dx in 0..style.patch_size {
            let (y, x) = (style.patch_origin + dy, style.patch_origin + dx);
            img[y * canvas + x] = intensity;
        }
    }
}

/// Generate the (source 28x28, target 16x16) digit-proxy pair.
pub fn generate_digits_proxy(spec: &DigitsProxySpec) -> Result<(RawDigits, RawDigits)> {
    if spec.n_per_domain == 0 {
        return Err(Error::contract("n_per_domain must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(Error::contract(format!("rho must be in [0,1], got {}", spec.rho)));
    }
    let base = RngStream::new(spec.seed);
    let domain = |tag: u64, style: &DomainStyle, correlated: bool| -> RawDigits {
        let mut rng = base.derive(tag);
        let mut images = Vec::with_capacity(spec.n_per_domain);
        let mut labels = Vec::with_capacity(spec.n_per_domain);
        for _ in 0..spec.n_per_domain {
            let digit = rng.pick(10);
            let mut img = render_digit(digit, style, spec.noise, &mut rng);
            let level = if correlated && rng.next_uniform() < spec.rho {
                digit
            } else {
                rng.pick(10)
            };
            stamp_patch(&mut img, style.canvas, style, level);
            images.push(img);
            labels.push(digit as u8);
        }
        RawDigits {
            images,
            labels,
            rows: style.canvas,
            cols: style.canvas,
        }
    };
    let source = domain(0x0D15, &SOURCE_STYLE, true);
    let target = domain(0x0D16, &TARGET_STYLE, false);
    Ok((source, target))
}
