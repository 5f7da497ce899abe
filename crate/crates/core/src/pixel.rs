//! Frame loading and color-space conversion into labeled 8-bit channel planes.
//!
//! Every channel, including hue, lives in the same `[0, 255]` domain so that a
//! single histogram layout applies to all of them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit RGB frame stored as row-major interleaved triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRgb {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl FrameRgb {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if data.len() != 3 * width * height {
            return Err(Error::InvalidFrame(format!(
                "expected {} bytes for {width}x{height}, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

/// Decodes a PNG or JPEG file into an RGB frame, discarding alpha.
pub fn load_frame(path: impl AsRef<Path>) -> Result<FrameRgb> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes).map_err(|e| match e {
        Error::Decode { source, .. } => Error::Decode {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Decodes an in-memory PNG or JPEG image.
pub fn decode_frame(bytes: &[u8]) -> Result<FrameRgb> {
    let img = image::load_from_memory(bytes).map_err(|source| Error::Decode {
        path: "<memory>".into(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    FrameRgb::new(w as usize, h as usize, rgb.into_raw())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelLabel {
    R,
    G,
    B,
    H,
    S,
    V,
    Y,
    Cb,
    Cr,
}

impl ChannelLabel {
    pub fn name(self) -> &'static str {
        match self {
            ChannelLabel::R => "R",
            ChannelLabel::G => "G",
            ChannelLabel::B => "B",
            ChannelLabel::H => "H",
            ChannelLabel::S => "S",
            ChannelLabel::V => "V",
            ChannelLabel::Y => "Y'",
            ChannelLabel::Cb => "Cb",
            ChannelLabel::Cr => "Cr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlane {
    width: usize,
    height: usize,
    label: ChannelLabel,
    values: Vec<u8>,
}

impl ChannelPlane {
    pub fn new(width: usize, height: usize, label: ChannelLabel, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "plane {}: expected {} values, got {}",
                label.name(),
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            label,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn label(&self) -> ChannelLabel {
        self.label
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Hsv,
    YCbCr,
}

impl ColorSpace {
    pub fn labels(self) -> [ChannelLabel; 3] {
        match self {
            ColorSpace::Hsv => [ChannelLabel::H, ChannelLabel::S, ChannelLabel::V],
            ColorSpace::YCbCr => [ChannelLabel::Y, ChannelLabel::Cb, ChannelLabel::Cr],
        }
    }
}

impl std::str::FromStr for ColorSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hsv" => Ok(ColorSpace::Hsv),
            "ycbcr" | "y'cbcr" => Ok(ColorSpace::YCbCr),
            other => Err(Error::InvalidParam(format!("unknown color space {other:?}"))),
        }
    }
}

/// A non-empty set of color spaces. Iteration order is the canonical channel
/// order: HSV before Y'CbCr.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceSet {
    pub hsv: bool,
    pub ycbcr: bool,
}

impl SpaceSet {
    pub const BOTH: SpaceSet = SpaceSet {
        hsv: true,
        ycbcr: true,
    };

    pub fn from_spaces(spaces: &[ColorSpace]) -> Self {
        SpaceSet {
            hsv: spaces.contains(&ColorSpace::Hsv),
            ycbcr: spaces.contains(&ColorSpace::YCbCr),
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.hsv && !self.ycbcr
    }

    pub fn spaces(&self) -> Vec<ColorSpace> {
        let mut out = Vec::with_capacity(2);
        if self.hsv {
            out.push(ColorSpace::Hsv);
        }
        if self.ycbcr {
            out.push(ColorSpace::YCbCr);
        }
        out
    }

    pub fn channel_count(&self) -> usize {
        3 * self.spaces().len()
    }

    pub fn labels(&self) -> Vec<ChannelLabel> {
        self.spaces().into_iter().flat_map(|s| s.labels()).collect()
    }
}

impl Default for SpaceSet {
    fn default() -> Self {
        SpaceSet::BOTH
    }
}

impl std::fmt::Display for SpaceSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self
            .spaces()
            .into_iter()
            .map(|s| match s {
                ColorSpace::Hsv => "hsv",
                ColorSpace::YCbCr => "ycbcr",
            })
            .collect();
        f.write_str(&names.join(","))
    }
}

impl std::str::FromStr for SpaceSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spaces = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<ColorSpace>>>()?;
        let set = SpaceSet::from_spaces(&spaces);
        if set.is_empty() {
            return Err(Error::InvalidParam("no color space selected".into()));
        }
        Ok(set)
    }
}

/// Planes of one frame in canonical channel order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorStack {
    planes: Vec<ChannelPlane>,
}

impl ColorStack {
    pub fn planes(&self) -> &[ChannelPlane] {
        &self.planes
    }

    pub fn labels(&self) -> Vec<ChannelLabel> {
        self.planes.iter().map(|p| p.label).collect()
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
}

fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn hsv_pixel([r, g, b]: [u8; 3]) -> [u8; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = f64::from(max - min);
    let (rf, gf, bf) = (f64::from(r), f64::from(g), f64::from(b));
    let hue = if chroma == 0.0 {
        0.0
    } else if max == r {
        (60.0 * ((gf - bf) / chroma)).rem_euclid(360.0)
    } else if max == g {
        60.0 * ((bf - rf) / chroma) + 120.0
    } else {
        60.0 * ((rf - gf) / chroma) + 240.0
    };
    let sat = if max == 0 {
        0.0
    } else {
        255.0 * chroma / f64::from(max)
    };
    [round_half_up(hue / 360.0 * 255.0), round_half_up(sat), max]
}

fn ycbcr_pixel([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    [round_half_up(y), round_half_up(cb), round_half_up(cr)]
}

fn convert(frame: &FrameRgb, labels: [ChannelLabel; 3], f: fn([u8; 3]) -> [u8; 3]) -> Vec<ChannelPlane> {
    let n = frame.width * frame.height;
    let mut chans = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in frame.pixels() {
        let out = f(px);
        for (c, v) in chans.iter_mut().zip(out) {
            c.push(v);
        }
    }
    chans
        .into_iter()
        .zip(labels)
        .map(|(values, label)| ChannelPlane {
            width: frame.width,
            height: frame.height,
            label,
            values,
        })
        .collect()
}

/// HSV with hue rescaled from degrees onto `[0, 255]`.
pub fn rgb_to_hsv(frame: &FrameRgb) -> ColorStack {
    ColorStack {
        planes: convert(frame, ColorSpace::Hsv.labels(), hsv_pixel),
    }
}

/// Full-range BT.601 Y'CbCr, rounded half-up and clamped.
pub fn rgb_to_ycbcr(frame: &FrameRgb) -> ColorStack {
    ColorStack {
        planes: convert(frame, ColorSpace::YCbCr.labels(), ycbcr_pixel),
    }
}

pub fn build_color_stack(frame: &FrameRgb, spaces: SpaceSet) -> Result<ColorStack> {
    if spaces.is_empty() {
        return Err(Error::InvalidParam("empty color space set".into()));
    }
    let mut planes = Vec::with_capacity(6);
    if spaces.hsv {
        planes.extend(rgb_to_hsv(frame).planes);
    }
    if spaces.ycbcr {
        planes.extend(rgb_to_ycbcr(frame).planes);
    }
    Ok(ColorStack { planes })
}
