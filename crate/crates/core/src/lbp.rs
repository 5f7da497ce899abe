//! Classic and rotation-invariant uniform local binary patterns over a single
//! channel plane.
//!
//! Neighbors lie on a circle of radius `R` around each center pixel. Point `p`
//! sits at angle `2πp/P` measured from the +y axis, and non-integer sample
//! positions are resolved by bilinear interpolation. Interpolated neighbor
//! values are compared against the center as real numbers.
//!
//! Codes are only produced where the whole neighborhood is in bounds, so the
//! output map is `ceil(R)` pixels smaller than the plane on every side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixel::ChannelPlane;

/// Largest supported neighbor count; bit patterns are packed into a `u64`.
pub const MAX_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpParams {
    pub points: usize,
    pub radius: f64,
}

impl LbpParams {
    pub fn new(points: usize, radius: f64) -> Result<Self> {
        let params = Self { points, radius };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 4 || self.points > MAX_POINTS {
            return Err(Error::InvalidParam(format!(
                "LBP points must be in [4, {MAX_POINTS}], got {}",
                self.points
            )));
        }
        if !self.radius.is_finite() || self.radius < 1.0 {
            return Err(Error::InvalidParam(format!(
                "LBP radius must be >= 1, got {}",
                self.radius
            )));
        }
        Ok(())
    }

    /// Number of distinct riu2 codes, `P + 2`.
    pub fn code_count(&self) -> usize {
        self.points + 2
    }

    /// Border excluded from the code map on each side.
    pub fn margin(&self) -> usize {
        self.radius.ceil() as usize
    }
}

impl Default for LbpParams {
    fn default() -> Self {
        Self {
            points: 32,
            radius: 8.0,
        }
    }
}

/// Thresholded neighbor signs, bit `p` = `delta(g_p - g_c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborBits(Vec<u8>);

impl NeighborBits {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParam("neighbor bits must be 0 or 1".into()));
        }
        Ok(Self(bits))
    }

    /// Low `points` bits of `pattern`, bit 0 first.
    pub fn from_pattern(pattern: u64, points: usize) -> Self {
        Self((0..points).map(|p| ((pattern >> p) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    /// Circular shift by `k` positions.
    pub fn rotated(&self, k: usize) -> Self {
        let mut bits = self.0.clone();
        if !bits.is_empty() {
            let k = k % bits.len();
            bits.rotate_left(k);
        }
        Self(bits)
    }
}

pub fn delta(x: f64) -> u8 {
    u8::from(x >= 0.0)
}

/// Circle sample offsets `(dx, dy)`; components within 1e-12 of an integer
/// are snapped to it so cardinal points land exactly on the pixel grid.
pub fn sample_offsets(params: &LbpParams) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-12 {
            r
        } else {
            v
        }
    };
    (0..params.points)
        .map(|p| {
            let angle = 2.0 * std::f64::consts::PI * p as f64 / params.points as f64;
            (
                snap(-params.radius * angle.sin()),
                snap(params.radius * angle.cos()),
            )
        })
        .collect()
}

pub fn classic_code(bits: &NeighborBits) -> u64 {
    bits.0
        .iter()
        .enumerate()
        .fold(0u64, |acc, (p, &b)| acc | (u64::from(b) << p))
}

/// Circular transition count `U`.
pub fn transitions_u(bits: &NeighborBits) -> u32 {
    let b = &bits.0;
    if b.is_empty() {
        return 0;
    }
    let seam = u32::from(b[b.len() - 1] != b[0]);
    seam + b.windows(2).map(|w| u32::from(w[0] != w[1])).sum::<u32>()
}

pub fn riu2_code(bits: &NeighborBits) -> u32 {
    if transitions_u(bits) <= 2 {
        bits.0.iter().map(|&b| u32::from(b)).sum()
    } else {
        bits.len() as u32 + 1
    }
}

/// riu2 code of a packed pattern; same result as [`riu2_code`].
#[inline]
pub fn riu2_from_pattern(pattern: u64, points: usize) -> u8 {
    let mask = if points == 64 { u64::MAX } else { (1u64 << points) - 1 };
    let bits = pattern & mask;
    let rotated = ((bits << 1) | (bits >> (points - 1))) & mask;
    if (bits ^ rotated).count_ones() <= 2 {
        bits.count_ones() as u8
    } else {
        points as u8 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpCodeMap {
    width: usize,
    height: usize,
    margin: usize,
    points: usize,
    codes: Vec<u8>,
}

impl LbpCodeMap {
    pub fn from_codes(width: usize, height: usize, points: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: codes.len(),
            });
        }
        if let Some(&c) = codes.iter().find(|&&c| c as usize > points + 1) {
            return Err(Error::InvalidParam(format!("code {c} exceeds P+1 = {}", points + 1)));
        }
        Ok(Self {
            width,
            height,
            margin: 0,
            points,
            codes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }
}

/// Bilinear sample relative to a center pixel: base corner plus fractions.
/// Evaluated as `a + fx(b-a) + fy(c-a) + fx*fy(a-b-c+d)` so a flat
/// neighborhood interpolates to exactly its own value.
struct Sampler {
    x0: isize,
    y0: isize,
    x1: isize,
    y1: isize,
    fx: f64,
    fy: f64,
}

impl Sampler {
    fn new(dx: f64, dy: f64) -> Self {
        let (fx0, fy0) = (dx.floor(), dy.floor());
        let (fx, fy) = (dx - fx0, dy - fy0);
        let (x0, y0) = (fx0 as isize, fy0 as isize);
        Self {
            x0,
            y0,
            x1: if fx > 0.0 { x0 + 1 } else { x0 },
            y1: if fy > 0.0 { y0 + 1 } else { y0 },
            fx,
            fy,
        }
    }
}

/// Rotation-invariant uniform LBP codes for every interior pixel of `plane`.
pub fn apply_riu2(plane: &ChannelPlane, params: &LbpParams) -> Result<LbpCodeMap> {
    params.validate()?;
    let margin = params.margin();
    let (w, h) = (plane.width(), plane.height());
    if w <= 2 * margin || h <= 2 * margin {
        return Err(Error::InvalidParam(format!(
            "plane {w}x{h} too small for radius {}",
            params.radius
        )));
    }
    let out_w = w - 2 * margin;
    let out_h = h - 2 * margin;
    let src: Vec<f64> = plane.values().iter().map(|&v| f64::from(v)).collect();
    let samplers: Vec<Sampler> = sample_offsets(params)
        .into_iter()
        .map(|(dx, dy)| Sampler::new(dx, dy))
        .collect();

    let row_at = |cy: usize, dy: isize, dx: isize| -> &[f64] {
        let start = ((cy as isize + dy) as usize * w + margin) as isize + dx;
        &src[start as usize..start as usize + out_w]
    };
    let mut patterns = vec![0u64; out_w];
    let mut codes = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let cy = oy + margin;
        let centers = row_at(cy, 0, 0);
        patterns.iter_mut().for_each(|p| *p = 0);
        for (bit, s) in samplers.iter().enumerate() {
            let (fx, fy, fxy) = (s.fx, s.fy, s.fx * s.fy);
            let a = row_at(cy, s.y0, s.x0);
            let b = row_at(cy, s.y0, s.x1);
            let c = row_at(cy, s.y1, s.x0);
            let d = row_at(cy, s.y1, s.x1);
            for (i, pat) in patterns.iter_mut().enumerate() {
                let g = a[i] + fx * (b[i] - a[i]) + fy * (c[i] - a[i]) + fxy * (a[i] - b[i] - c[i] + d[i]);
                *pat |= u64::from(g >= centers[i]) << bit;
            }
        }
        codes.extend(patterns.iter().map(|&p| riu2_from_pattern(p, params.points)));
    }
    Ok(LbpCodeMap {
        width: out_w,
        height: out_h,
        margin,
        points: params.points,
        codes,
    })
}
