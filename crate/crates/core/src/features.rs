//! Per-channel color and LBP histograms, frame vectors, sample tensors,
//! z-score statistics, and the compact sample wire format.
//!
//! A frame vector holds, for each channel in canonical order, the `m1`-bucket
//! color histogram followed by the `m2`-bucket riu2 histogram. Histograms are
//! relative frequencies, so the vector does not depend on frame resolution.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::FineLabel;
use crate::error::{Error, Result};
use crate::lbp::{apply_riu2, LbpCodeMap, LbpParams};
use crate::pixel::{build_color_stack, ChannelPlane, ColorStack, FrameRgb, SpaceSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub color_buckets: usize,
    pub lbp_buckets: usize,
    pub lbp: LbpParams,
    pub spaces: SpaceSet,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            color_buckets: 50,
            lbp_buckets: 34,
            lbp: LbpParams::default(),
            spaces: SpaceSet::BOTH,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        self.lbp.validate()?;
        if self.color_buckets < 2 || self.lbp_buckets < 2 {
            return Err(Error::InvalidParam(format!(
                "bucket counts must be >= 2 (color {}, lbp {})",
                self.color_buckets, self.lbp_buckets
            )));
        }
        if self.spaces.is_empty() {
            return Err(Error::InvalidParam("empty color space set".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.spaces.channel_count()
    }

    /// Frame vector length `c * (m1 + m2)`.
    pub fn dim(&self) -> usize {
        self.channels() * (self.color_buckets + self.lbp_buckets)
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            channels: self.channels(),
            color_buckets: self.color_buckets,
            lbp_buckets: self.lbp_buckets,
            points: self.lbp.points,
            radius: self.lbp.radius,
        }
    }
}

/// Shape information carried by a sample, enough to interpret its rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub channels: usize,
    pub color_buckets: usize,
    pub lbp_buckets: usize,
    pub points: usize,
    pub radius: f64,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        self.channels * (self.color_buckets + self.lbp_buckets)
    }
}

/// Relative-frequency histogram over `[0, 255]`; bucket `b` covers
/// `[floor(256b/m1), floor(256(b+1)/m1))`.
pub fn color_histogram(plane: &ChannelPlane, buckets: usize) -> Result<Vec<f64>> {
    if buckets < 2 {
        return Err(Error::InvalidParam(format!("color buckets {buckets} < 2")));
    }
    let values = plane.values();
    if values.is_empty() {
        return Err(Error::Empty("color histogram of empty plane".into()));
    }
    let mut lookup = [0usize; 256];
    for b in 0..buckets {
        let lo = 256 * b / buckets;
        let hi = (256 * (b + 1) / buckets).min(256);
        for slot in &mut lookup[lo..hi] {
            *slot = b;
        }
    }
    let mut counts = vec![0u64; buckets];
    for &v in values {
        counts[lookup[v as usize]] += 1;
    }
    let total = values.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Relative-frequency histogram of riu2 codes, `m2` equal-width buckets over
/// the `P + 2` codes.
pub fn lbp_histogram(codes: &LbpCodeMap, buckets: usize, points: usize) -> Result<Vec<f64>> {
    if buckets < 2 {
        return Err(Error::InvalidParam(format!("lbp buckets {buckets} < 2")));
    }
    if codes.codes().is_empty() {
        return Err(Error::Empty("lbp histogram of empty code map".into()));
    }
    let domain = points + 2;
    let mut counts = vec![0u64; buckets];
    for &c in codes.codes() {
        let c = c as usize;
        if c >= domain {
            return Err(Error::InvalidParam(format!("code {c} exceeds P+1 = {}", points + 1)));
        }
        counts[c * buckets / domain] += 1;
    }
    let total = codes.codes().len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeature(pub Vec<f64>);

impl FrameFeature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Histograms of one channel plane: `(color, lbp)`.
pub fn channel_histograms(plane: &ChannelPlane, spec: &HistogramSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let color = color_histogram(plane, spec.color_buckets)?;
    let codes = apply_riu2(plane, &spec.lbp)?;
    let lbp = lbp_histogram(&codes, spec.lbp_buckets, spec.lbp.points)?;
    Ok((color, lbp))
}

pub fn frame_feature(stack: &ColorStack, spec: &HistogramSpec) -> Result<FrameFeature> {
    spec.validate()?;
    if stack.labels() != spec.spaces.labels() {
        return Err(Error::InvalidParam(format!(
            "color stack channels {:?} do not match spec spaces {}",
            stack.labels(),
            spec.spaces
        )));
    }
    let mut values = Vec::with_capacity(spec.dim());
    for plane in stack.planes() {
        let (color, lbp) = channel_histograms(plane, spec)?;
        values.extend(color);
        values.extend(lbp);
    }
    Ok(FrameFeature(values))
}

/// Color conversion plus [`frame_feature`].
pub fn extract_frame(frame: &FrameRgb, spec: &HistogramSpec) -> Result<FrameFeature> {
    let stack = build_color_stack(frame, spec.spaces)?;
    frame_feature(&stack, spec)
}

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub video_id: String,
    pub user_id: String,
    pub label: FineLabel,
    pub frame_start: usize,
    pub frame_end: usize,
    #[serde(default)]
    pub attrs: std::collections::BTreeMap<String, String>,
}

/// `n` consecutive frame vectors of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    pub layout: FeatureLayout,
    /// `n x d`, one frame per row.
    pub frames: Array2<f64>,
    pub provenance: Option<Provenance>,
}

impl SampleTensor {
    pub fn from_features(
        layout: FeatureLayout,
        rows: &[FrameFeature],
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("sample with no frames".into()));
        }
        let d = layout.dim();
        let mut frames = Array2::zeros((rows.len(), d));
        for (mut dst, row) in frames.outer_iter_mut().zip(rows) {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: row.len(),
                });
            }
            dst.assign(&ArrayView1::from(row.values()));
        }
        Ok(Self {
            layout,
            frames,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn is_bonafide(&self) -> Option<bool> {
        self.provenance.as_ref().map(|p| p.label.is_bonafide())
    }
}

/// Per-dimension z-score statistics fitted on training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub fitted_on: String,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Applies [`normalize`] to every row of a sample.
    pub fn normalize_rows(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        if frames.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: frames.ncols(),
            });
        }
        let mu = ArrayView1::from(&self.mu);
        let sigma = ArrayView1::from(&self.sigma);
        Ok((frames - &mu) / &sigma)
    }

    /// Values rounded through `f32`, as stored in checkpoints.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            mu: self.mu.iter().map(|&v| v as f32 as f64).collect(),
            sigma: self.sigma.iter().map(|&v| v as f32 as f64).collect(),
            fitted_on: self.fitted_on.clone(),
        }
    }
}

/// Population mean and standard deviation per dimension; zero deviations are
/// replaced by 1.
pub fn fit_norm_stats<'a, I>(rows: I, fitted_on: &str) -> Result<NormStats>
where
    I: IntoIterator<Item = ArrayView1<'a, f64>>,
{
    let mut iter = rows.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Empty("no feature vectors to fit".into()))?;
    let d = first.len();
    let mut rows_vec = vec![first];
    for r in iter {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        rows_vec.push(r);
    }
    let n = rows_vec.len() as f64;
    let mut mu = Array1::<f64>::zeros(d);
    for r in &rows_vec {
        mu += r;
    }
    mu /= n;
    let mut var = Array1::<f64>::zeros(d);
    for r in &rows_vec {
        let diff = r - &mu;
        var += &(&diff * &diff);
    }
    var /= n;
    let sigma = var
        .iter()
        .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    Ok(NormStats {
        mu: mu.to_vec(),
        sigma,
        fitted_on: fitted_on.to_string(),
    })
}

/// Fits on every frame row of every sample.
pub fn fit_norm_stats_on_samples<'a, I>(samples: I, fitted_on: &str) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a SampleTensor>,
{
    fit_norm_stats(samples.into_iter().flat_map(|s| s.frames.axis_iter(Axis(0))), fitted_on)
}

pub fn normalize(v: &FrameFeature, stats: &NormStats) -> Result<FrameFeature> {
    if v.len() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            actual: v.len(),
        });
    }
    Ok(FrameFeature(
        v.0.iter()
            .zip(&stats.mu)
            .zip(&stats.sigma)
            .map(|((x, m), s)| (x - m) / s)
            .collect(),
    ))
}

pub const WIRE_MAGIC: &[u8; 4] = b"CTL1";
pub const WIRE_HEADER_LEN: usize = 16;

fn header_field(name: &str, v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Wire(format!("{name}={v} does not fit in 16 bits")))
}

/// Little-endian: `CTL1`, then `n, c, m1, m2, P, R` as `u16`, then `n*d`
/// values as `u16` fixed point (`round(v * 65535)`).
pub fn serialize_sample(sample: &SampleTensor) -> Result<Vec<u8>> {
    let l = &sample.layout;
    if l.radius.fract() != 0.0 {
        return Err(Error::Wire(format!("radius {} is not a whole pixel count", l.radius)));
    }
    if sample.dim() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            actual: sample.dim(),
        });
    }
    let header = [
        header_field("n", sample.len())?,
        header_field("c", l.channels)?,
        header_field("m1", l.color_buckets)?,
        header_field("m2", l.lbp_buckets)?,
        header_field("P", l.points)?,
        header_field("R", l.radius as usize)?,
    ];
    let mut out = Vec::with_capacity(WIRE_HEADER_LEN + 2 * sample.frames.len());
    out.extend_from_slice(WIRE_MAGIC);
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for &v in sample.frames.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Wire(format!("value {v} outside [0, 1]")));
        }
        let q = (v * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok(out)
}

pub fn deserialize_sample(bytes: &[u8]) -> Result<SampleTensor> {
    if bytes.len() < WIRE_HEADER_LEN {
        return Err(Error::Wire(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != WIRE_MAGIC {
        return Err(Error::Wire("bad magic".into()));
    }
    let field = |i: usize| u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]) as usize;
    let (n, c, m1, m2, points, radius) = (field(0), field(1), field(2), field(3), field(4), field(5));
    let layout = FeatureLayout {
        channels: c,
        color_buckets: m1,
        lbp_buckets: m2,
        points,
        radius: radius as f64,
    };
    let d = layout.dim();
    if n == 0 || d == 0 {
        return Err(Error::Wire(format!("empty sample shape {n}x{d}")));
    }
    let expected = WIRE_HEADER_LEN + 2 * n * d;
    if bytes.len() != expected {
        return Err(Error::Wire(format!(
            "payload length {} does not match header ({expected} expected)",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[WIRE_HEADER_LEN..]
        .chunks_exact(2)
        .map(|b| f64::from(u16::from_le_bytes([b[0], b[1]])) / 65535.0)
        .collect();
    let frames = Array2::from_shape_vec((n, d), values).expect("length checked above");
    Ok(SampleTensor {
        layout,
        frames,
        provenance: None,
    })
}

/// Textual dump: one frame vector per line, values space-separated at full
/// precision.
pub fn debug_dump(frames: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in frames.outer_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_debug_dump(text: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Wire(format!("bad value {t:?}: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Wire("ragged debug dump".into()));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Wire(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixel::ChannelLabel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(w: usize, h: usize, values: Vec<u8>) -> ChannelPlane {
        ChannelPlane::new(w, h, ChannelLabel::Y, values).unwrap()
    }

    #[test]
    fn color_histogram_examples() {
        let h = color_histogram(&plane(4, 4, vec![0; 16]), 50).unwrap();
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|&v| v == 0.0));

        assert_eq!(color_histogram(&plane(2, 1, vec![0, 255]), 2).unwrap(), vec![0.5, 0.5]);

        let ramp: Vec<u8> = (0..=255).collect();
        let h = color_histogram(&plane(16, 16, ramp), 8).unwrap();
        assert_eq!(h, vec![0.125; 8]);

        assert!(color_histogram(&plane(0, 0, vec![]), 8).is_err());
        assert!(color_histogram(&plane(1, 1, vec![0]), 1).is_err());
    }

    #[test]
    fn color_bucket_edges() {
        // m1 = 50: bucket 1 starts at floor(256/50) = 5.
        let h = color_histogram(&plane(2, 1, vec![4, 5]), 50).unwrap();
        assert_eq!((h[0], h[1]), (0.5, 0.5));
        let h = color_histogram(&plane(1, 1, vec![255]), 50).unwrap();
        assert_eq!(h[49], 1.0);
    }

    #[test]
    fn lbp_histogram_examples() {
        let codes = LbpCodeMap::from_codes(4, 1, 8, vec![0, 0, 0, 9]).unwrap();
        let h = lbp_histogram(&codes, 10, 8).unwrap();
        let mut want = vec![0.0; 10];
        want[0] = 0.75;
        want[9] = 0.25;
        assert_eq!(h, want);

        let codes = LbpCodeMap::from_codes(34, 1, 32, (0..34).collect()).unwrap();
        let h = lbp_histogram(&codes, 34, 32).unwrap();
        assert!(h.iter().all(|&v| (v - 1.0 / 34.0).abs() < 1e-15));

        let flat = apply_riu2(&plane(20, 20, vec![77; 400]), &LbpParams::new(8, 2.0).unwrap()).unwrap();
        let h = lbp_histogram(&flat, 10, 8).unwrap();
        assert_eq!(h[8], 1.0);
    }

    #[test]
    fn feature_dimensions() {
        let spec = HistogramSpec::default();
        assert_eq!(spec.dim(), 504);
        let small = HistogramSpec {
            color_buckets: 8,
            lbp_buckets: 10,
            lbp: LbpParams::new(8, 1.0).unwrap(),
            spaces: SpaceSet {
                hsv: false,
                ycbcr: true,
            },
        };
        assert_eq!(small.dim(), 54);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u8> = (0..3 * 32 * 32).map(|_| rng.random()).collect();
        let frame = FrameRgb::new(32, 32, data).unwrap();
        let a = extract_frame(&frame, &small).unwrap();
        let b = extract_frame(&frame, &small).unwrap();
        assert_eq!(a.len(), 54);
        assert_eq!(a, b);
        for ch in a.values().chunks(18) {
            assert!((ch[..8].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((ch[8..].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stack_must_match_spec() {
        let frame = FrameRgb::new(20, 20, vec![9; 1200]).unwrap();
        let stack = build_color_stack(&frame, SpaceSet { hsv: true, ycbcr: false }).unwrap();
        assert!(frame_feature(&stack, &HistogramSpec::default()).is_err());
    }

    #[test]
    fn norm_stats_examples() {
        let rows = [Array1::from(vec![0.0]), Array1::from(vec![2.0])];
        let s = fit_norm_stats(rows.iter().map(|r| r.view()), "t").unwrap();
        assert_eq!((s.mu.clone(), s.sigma.clone()), (vec![1.0], vec![1.0]));

        let rows = [Array1::from(vec![5.0, 1.0]), Array1::from(vec![5.0, 3.0])];
        let s = fit_norm_stats(rows.iter().map(|r| r.view()), "t").unwrap();
        assert_eq!(s.sigma[0], 1.0);
        let v = normalize(&FrameFeature(vec![5.0, 2.0]), &s).unwrap();
        assert_eq!(v.0, vec![0.0, 0.0]);

        assert!(fit_norm_stats(std::iter::empty(), "t").is_err());
    }

    #[test]
    fn normalize_examples() {
        let stats = NormStats {
            mu: vec![1.0, -2.0],
            sigma: vec![2.0, 0.5],
            fitted_on: "t".into(),
        };
        assert_eq!(normalize(&FrameFeature(vec![1.0, -2.0]), &stats).unwrap().0, vec![0.0, 0.0]);
        assert_eq!(normalize(&FrameFeature(vec![3.0, -1.5]), &stats).unwrap().0, vec![1.0, 1.0]);
        assert!(normalize(&FrameFeature(vec![1.0]), &stats).is_err());
        let one = NormStats {
            mu: vec![1.0],
            sigma: vec![2.0],
            fitted_on: "t".into(),
        };
        assert_eq!(normalize(&FrameFeature(vec![3.0]), &one).unwrap().0, vec![1.0]);
    }

    fn random_sample(rng: &mut ChaCha8Rng, n: usize) -> SampleTensor {
        let layout = HistogramSpec::default().layout();
        let frames = Array2::from_shape_fn((n, layout.dim()), |_| rng.random::<f64>());
        SampleTensor {
            layout,
            frames,
            provenance: None,
        }
    }

    #[test]
    fn wire_sizes_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_sample(&mut rng, 16);
        let bytes = serialize_sample(&s).unwrap();
        assert_eq!(bytes.len(), 16 + 16 * 504 * 2);
        assert_eq!(&bytes[..4], b"CTL1");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(deserialize_sample(&bad).is_err());
        assert!(deserialize_sample(&bytes[..bytes.len() - 1]).is_err());
        assert!(deserialize_sample(&bytes[..10]).is_err());

        let mut out_of_range = s.clone();
        out_of_range.frames[[0, 0]] = 1.5;
        assert!(serialize_sample(&out_of_range).is_err());

        let zero = SampleTensor {
            layout: s.layout,
            frames: Array2::zeros((16, 504)),
            provenance: None,
        };
        assert_eq!(deserialize_sample(&serialize_sample(&zero).unwrap()).unwrap(), zero);
    }

    proptest! {
        #[test]
        fn wire_round_trip_within_quantum(seed in any::<u64>(), n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, n);
            let back = deserialize_sample(&serialize_sample(&s).unwrap()).unwrap();
            prop_assert_eq!(back.layout, s.layout);
            prop_assert_eq!(back.frames.dim(), s.frames.dim());
            for (a, b) in back.frames.iter().zip(s.frames.iter()) {
                prop_assert!((a - b).abs() <= 1.0 / 65535.0);
            }
        }

        #[test]
        fn debug_dump_round_trips(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sample(&mut rng, 3);
            prop_assert_eq!(parse_debug_dump(&debug_dump(&s.frames)).unwrap(), s.frames);
        }
    }

    #[test]
    fn upscaling_keeps_color_histogram() {
        // Smooth content upscaled 2x by pixel replication.
        let (w, h) = (48usize, 48usize);
        let base: Vec<u8> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                (127.5 + 100.0 * (x / 9.0).sin() * (y / 11.0).cos()).round() as u8
            })
            .collect();
        let mut up = vec![0u8; 4 * w * h];
        for y in 0..2 * h {
            for x in 0..2 * w {
                up[y * 2 * w + x] = base[(y / 2) * w + x / 2];
            }
        }
        let a = plane(w, h, base);
        let b = plane(2 * w, 2 * h, up);
        assert_eq!(color_histogram(&a, 50).unwrap(), color_histogram(&b, 50).unwrap());
    }
}
