//! Deterministic synthetic presentation-attack dataset.
//!
//! Live videos are smooth color fields with fine per-pixel sensor texture that
//! changes every frame. Print attacks carry the same content with the texture
//! blurred away and the colors desaturated. Display attacks add a periodic
//! luma grid and a raised black level. The class signal therefore sits in the
//! texture and chroma statistics. Backgrounds follow the recording session, so
//! scene color carries no class information.

use std::collections::BTreeMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::ImageEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_attrs, DatasetConfig, FineLabel, ProtocolFilter, AttrPredicate, SplitUsers, MANIFEST_HEADER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub name: String,
    pub seed: u64,
    pub users: usize,
    pub live_per_user: usize,
    pub attacks_per_user: usize,
    pub frames: usize,
    pub size: usize,
    /// Per-video deviation from the session background, in 8-bit levels.
    pub background_jitter: f64,
    /// Std-dev of live sensor texture, in 8-bit levels.
    pub texture_noise: f64,
    /// Box-blur radius applied to print attacks.
    pub print_blur: usize,
    /// Fraction of chroma removed from print attacks.
    pub desaturation: f64,
    pub moire_period: f64,
    pub moire_amplitude: f64,
    /// Display black level, in 8-bit levels.
    pub black_lift: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            seed: 7,
            users: 20,
            live_per_user: 2,
            attacks_per_user: 4,
            frames: 64,
            size: 128,
            background_jitter: 12.0,
            texture_noise: 14.0,
            print_blur: 2,
            desaturation: 0.35,
            moire_period: 5.0,
            moire_amplitude: 18.0,
            black_lift: 40.0,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.frames == 0 || self.size == 0 || self.live_per_user + self.attacks_per_user == 0 {
            return Err(Error::InvalidParam("synthetic counts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub config_path: PathBuf,
    pub config: DatasetConfig,
}

struct VideoPlan {
    index: usize,
    user: usize,
    video_id: String,
    user_id: String,
    label: FineLabel,
    session: usize,
    attrs: BTreeMap<String, String>,
}

fn plan(params: &SynthParams) -> Vec<VideoPlan> {
    let mut out = Vec::new();
    for user in 0..params.users {
        let user_id = format!("u{:02}", user + 1);
        let mut push = |label: FineLabel, k: usize| {
            let tag = match label {
                FineLabel::Bonafide => "live",
                FineLabel::Print => "print",
                FineLabel::Display => "display",
            };
            let attrs = BTreeMap::from([
                ("session".to_string(), (k % 3 + 1).to_string()),
                ("phone".to_string(), (k % 2 + 1).to_string()),
            ]);
            out.push(VideoPlan {
                index: out.len(),
                user,
                video_id: format!("{user_id}-{tag}-{k}"),
                user_id: user_id.clone(),
                label,
                session: k % 3,
                attrs,
            });
        };
        for k in 0..params.live_per_user {
            push(FineLabel::Bonafide, k);
        }
        for k in 0..params.attacks_per_user {
            let label = if k % 2 == 0 { FineLabel::Print } else { FineLabel::Display };
            push(label, k / 2);
        }
    }
    out
}

/// Smooth per-video content on a padded grid so frames can be jittered by
/// integer shifts.
struct BaseField {
    side: usize,
    pad: usize,
    rgb: Vec<[f64; 3]>,
}

const PAD: usize = 4;

/// Background color of each recording session, shared by every user.
fn session_background(params: &SynthParams, session: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(0xA24B_AED4_963E_E407) ^ session as u64);
    [(); 3].map(|_| rng.random_range(60.0..190.0))
}

fn base_field(
    params: &SynthParams,
    session: usize,
    user_rng: &mut ChaCha8Rng,
    video_rng: &mut ChaCha8Rng,
) -> BaseField {
    let side = params.size + 2 * PAD;
    let skin = [
        user_rng.random_range(150.0..210.0),
        user_rng.random_range(100.0..150.0),
        user_rng.random_range(80.0..120.0),
    ];
    let face_rx = user_rng.random_range(0.30..0.40) * params.size as f64;
    let face_ry = user_rng.random_range(0.38..0.46) * params.size as f64;
    let jitter = params.background_jitter;
    let background = session_background(params, session).map(|c| c + video_rng.random_range(-jitter..=jitter));
    let gain: f64 = video_rng.random_range(0.85..1.10);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let wavelength = video_rng.random_range(30.0..90.0);
            let angle: f64 = video_rng.random_range(0.0..std::f64::consts::TAU);
            let phase = video_rng.random_range(0.0..std::f64::consts::TAU);
            let amp = video_rng.random_range(6.0..16.0);
            (angle.cos() / wavelength, angle.sin() / wavelength, phase, amp)
        })
        .collect();
    let c = side as f64 / 2.0;
    let mut rgb = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64, y as f64);
            let shade: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, a)| a * (std::f64::consts::TAU * (kx * fx + ky * fy) + ph).sin())
                .sum();
            let r2 = ((fx - c) / face_rx).powi(2) + ((fy - c) / face_ry).powi(2);
            // Soft face mask.
            let m = 1.0 / (1.0 + (8.0 * (r2 - 1.0)).exp());
            let mut px = [0.0; 3];
            for ch in 0..3 {
                px[ch] = gain * (m * skin[ch] + (1.0 - m) * background[ch]) + shade;
            }
            rgb.push(px);
        }
    }
    BaseField { side, pad: PAD, rgb }
}

fn blur_pass(src: &[[f64; 3]], dst: &mut [[f64; 3]], size: usize, radius: usize, horizontal: bool) {
    let (r, n) = (radius as isize, size as isize);
    for y in 0..n {
        for x in 0..n {
            let mut acc = [0.0; 3];
            let mut count = 0.0;
            for k in -r..=r {
                let (sx, sy) = if horizontal { (x + k, y) } else { (x, y + k) };
                if (0..n).contains(&sx) && (0..n).contains(&sy) {
                    let p = src[(sy * n + sx) as usize];
                    for ch in 0..3 {
                        acc[ch] += p[ch];
                    }
                    count += 1.0;
                }
            }
            dst[(y * n + x) as usize] = acc.map(|v| v / count);
        }
    }
}

fn box_blur(img: &mut [[f64; 3]], size: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let mut tmp = img.to_vec();
    blur_pass(img, &mut tmp, size, radius, true);
    blur_pass(&tmp, img, size, radius, false);
}

fn render_frame(
    params: &SynthParams,
    base: &BaseField,
    label: FineLabel,
    shift: (isize, isize),
    flicker: f64,
    moire_phase: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<u8> {
    let size = params.size;
    let luma_noise = Normal::new(0.0, params.texture_noise.max(1e-9)).expect("finite sigma");
    let chroma_noise = Normal::new(0.0, (params.texture_noise / 2.0).max(1e-9)).expect("finite sigma");
    let faint = Normal::new(0.0, 2.0).expect("finite sigma");
    let mut img: Vec<[f64; 3]> = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let bx = (x + base.pad) as isize + shift.0;
            let by = (y + base.pad) as isize + shift.1;
            let p = base.rgb[by as usize * base.side + bx as usize];
            img.push(p.map(|v| v * flicker));
        }
    }
    match label {
        FineLabel::Bonafide => {
            for px in &mut img {
                let l: f64 = luma_noise.sample(rng);
                for v in px.iter_mut() {
                    *v += l + chroma_noise.sample(rng);
                }
            }
        }
        FineLabel::Print => {
            for px in &mut img {
                let l: f64 = faint.sample(rng);
                for v in px.iter_mut() {
                    *v += l;
                }
            }
            box_blur(&mut img, size, params.print_blur);
            for px in &mut img {
                let gray = (px[0] + px[1] + px[2]) / 3.0;
                for v in px.iter_mut() {
                    *v = gray + (*v - gray) * (1.0 - params.desaturation) + 8.0;
                }
            }
        }
        FineLabel::Display => {
            let k = std::f64::consts::TAU / params.moire_period;
            for (i, px) in img.iter_mut().enumerate() {
                let (x, y) = ((i % size) as f64, (i / size) as f64);
                let grid = params.moire_amplitude * (k * x + moire_phase).sin() * (k * 1.07 * y).sin();
                let l: f64 = faint.sample(rng);
                for v in px.iter_mut() {
                    *v = params.black_lift + (*v + grid + l) * (255.0 - params.black_lift) / 255.0;
                }
            }
        }
    }
    img.iter()
        .flat_map(|px| px.map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect()
}

fn encode_png(path: &Path, size: usize, data: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub);
    encoder
        .write_image(data, size as u32, size as u32, image::ExtendedColorType::Rgb8)
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })
}

fn generate_video(params: &SynthParams, v: &VideoPlan, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut user_rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ v.user as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ v.index as u64);
    let base = base_field(params, v.session, &mut user_rng, &mut rng);
    let moire_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut shift = (0isize, 0isize);
    let max = PAD as isize;
    for f in 0..params.frames {
        shift.0 = (shift.0 + rng.random_range(-1i32..=1) as isize).clamp(-max, max);
        shift.1 = (shift.1 + rng.random_range(-1i32..=1) as isize).clamp(-max, max);
        let flicker = 1.0 + rng.random_range(-0.02..0.02);
        let data = render_frame(params, &base, v.label, shift, flicker, moire_phase, &mut rng);
        encode_png(&dir.join(format!("frame_{f:04}.png")), params.size, &data)?;
    }
    Ok(())
}

/// Writes `frames/`, `manifest.csv` and `dataset.toml` under `out_dir`.
/// Users are split 60/20/20 into training, validation and testing.
pub fn synth_generate(params: &SynthParams, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    params.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let videos = plan(params);
    videos
        .par_iter()
        .map(|v| generate_video(params, v, &out_dir.join("frames").join(&v.video_id)))
        .collect::<Result<Vec<()>>>()?;

    let manifest = out_dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", manifest.display()));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for v in &videos {
        w.write_record([
            v.video_id.as_str(),
            v.user_id.as_str(),
            v.label.as_str(),
            &format_attrs(&v.attrs),
            &format!("frames/{}", v.video_id),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;

    let users: Vec<String> = (0..params.users).map(|u| format!("u{:02}", u + 1)).collect();
    let n_train = ((params.users as f64 * 0.6).round() as usize).clamp(1, params.users);
    let n_val = ((params.users as f64 * 0.2).round() as usize).min(params.users - n_train);
    let splits = SplitUsers {
        training: users[..n_train].to_vec(),
        validation: users[n_train..n_train + n_val].to_vec(),
        testing: users[n_train + n_val..].to_vec(),
    };
    let cross_phone = ProtocolFilter {
        name: "cross-phone".into(),
        training: AttrPredicate(BTreeMap::from([("phone".into(), vec!["1".into()])])),
        validation: AttrPredicate(BTreeMap::from([("phone".into(), vec!["1".into()])])),
        testing: AttrPredicate(BTreeMap::from([("phone".into(), vec!["2".into()])])),
    };
    let config = DatasetConfig {
        name: params.name.clone(),
        manifest: PathBuf::from("manifest.csv"),
        splits,
        protocols: BTreeMap::from([("cross-phone".to_string(), cross_phone)]),
    };
    let config_path = out_dir.join("dataset.toml");
    config.save(&config_path)?;
    let config = DatasetConfig::load(&config_path)?;
    Ok(SynthOutput {
        manifest,
        config_path,
        config,
    })
}
