//! Value types shared by every stage: images, probability maps, binary masks
//! and clicks.
//!
//! Coordinates follow raster order everywhere: `u` is the column (x, from the
//! left), `v` is the row (y, from the top), and buffers are row-major.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

fn check_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    Ok(())
}

fn check_len(width: usize, height: usize, actual: usize) -> Result<()> {
    if width * height != actual {
        return Err(Error::BufferLength { width, height, actual });
    }
    Ok(())
}

/// An 8-bit RGB image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_size(width, height)?;
        check_len(width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        check_size(width, height)?;
        let mut pixels = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                pixels.push(f(u, v));
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        self.pixels[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        self.pixels[v * self.width + u] = rgb;
    }

    /// Raw RGB8 bytes, row-major.
    pub fn to_rgb_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_rgb_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::BufferLength {
                width,
                height,
                actual: bytes.len() / 3,
            });
        }
        let pixels = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(width, height, pixels)
    }
}

/// Per-pixel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_size(width, height)?;
        check_len(width, height, values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ProbabilityRange { index, value });
        }
        Ok(Self { width, height, values })
    }

    /// The all-zero map used as the previous mask before the first click.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "map dimensions must be positive");
        assert!((0.0..=1.0).contains(&value));
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            values: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A binary foreground mask, used for ground truth and binarized predictions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_size(width, height)?;
        check_len(width, height, bits.len())?;
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Self::empty(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for v in 0..height {
            for u in 0..width {
                m.bits[v * width + u] = f(u, v);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        check_dims(self.dims(), other.dims())?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Pixels in `self` but not in `other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// Foreground pixel coordinates `(u, v)` in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Tight bounding box `(u0, v0, u1, v1)` with exclusive upper bounds.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for (u, v) in self.foreground() {
            bbox = Some(match bbox {
                None => (u, v, u + 1, v + 1),
                Some((u0, v0, u1, v1)) => (u0.min(u), v0.min(v), u1.max(u + 1), v1.max(v + 1)),
            });
        }
        bbox
    }
}

/// Click polarity: positive marks foreground, negative marks background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ClickLabel {
    Negative,
    Positive,
}

impl ClickLabel {
    pub fn is_positive(self) -> bool {
        self == ClickLabel::Positive
    }
}

impl From<ClickLabel> for u8 {
    fn from(l: ClickLabel) -> u8 {
        match l {
            ClickLabel::Negative => 0,
            ClickLabel::Positive => 1,
        }
    }
}

impl TryFrom<u8> for ClickLabel {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            0 => Ok(ClickLabel::Negative),
            1 => Ok(ClickLabel::Positive),
            other => Err(format!("click label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub u: usize,
    pub v: usize,
    pub label: ClickLabel,
}

impl Click {
    pub fn new(u: usize, v: usize, label: ClickLabel) -> Self {
        Self { u, v, label }
    }

    pub fn positive(u: usize, v: usize) -> Self {
        Self::new(u, v, ClickLabel::Positive)
    }

    pub fn negative(u: usize, v: usize) -> Self {
        Self::new(u, v, ClickLabel::Negative)
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        if self.u >= width || self.v >= height {
            return Err(Error::ClickOutOfBounds {
                u: self.u,
                v: self.v,
                width,
                height,
            });
        }
        Ok(())
    }
}

/// Clicks in the order the user (or simulator) placed them. No two clicks
/// share a position.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClickSequence(Vec<Click>);

impl ClickSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_clicks(clicks: impl IntoIterator<Item = Click>) -> Result<Self> {
        let mut seq = Self::new();
        for c in clicks {
            seq.push(c)?;
        }
        Ok(seq)
    }

    pub fn push(&mut self, click: Click) -> Result<()> {
        if self.contains_position(click.u, click.v) {
            return Err(Error::DuplicateClick { u: click.u, v: click.v });
        }
        self.0.push(click);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Click> {
        self.0.pop()
    }

    pub fn contains_position(&self, u: usize, v: usize) -> bool {
        self.0.iter().any(|c| c.u == u && c.v == v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Click> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Click] {
        &self.0
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self(self.0[..len.min(self.0.len())].to_vec())
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        self.0.iter().try_for_each(|c| c.check_bounds(width, height))
    }

    /// Parses the compact `u,v,l;u,v,l` syntax.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seq = Self::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = item.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(Error::ClickSyntax(format!("expected u,v,label in {item:?}")));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::ClickSyntax(format!("bad number {s:?} in {item:?}")))
            };
            let label = match num(parts[2])? {
                0 => ClickLabel::Negative,
                1 => ClickLabel::Positive,
                _ => return Err(Error::ClickSyntax(format!("label must be 0 or 1 in {item:?}"))),
            };
            seq.push(Click::new(num(parts[0])?, num(parts[1])?, label))?;
        }
        Ok(seq)
    }
}

impl<'a> IntoIterator for &'a ClickSequence {
    type Item = &'a Click;
    type IntoIter = std::slice::Iter<'a, Click>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl std::fmt::Display for ClickSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let items: Vec<String> = self
            .0
            .iter()
            .map(|c| format!("{},{},{}", c.u, c.v, u8::from(c.label)))
            .collect();
        f.write_str(&items.join(";"))
    }
}
