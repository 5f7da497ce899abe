//! On-disk feature cache: one wire-format file per sample plus a JSONL index.
//!
//! ```text
//! <dir>/features.json      extraction settings
//! <dir>/index.jsonl        {"file": ..., "provenance": {...}} per sample
//! <dir>/samples/*.ctl      wire-format tensors
//! <dir>/dumps/*.txt        optional full-precision text dumps
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{window_video, VideoRecord};
use crate::error::{Error, Result};
use crate::features::{
    debug_dump, deserialize_sample, extract_frame, serialize_sample, FrameFeature, HistogramSpec, Provenance,
    SampleTensor,
};
use crate::pixel::load_frame;

pub const META_FILE: &str = "features.json";
pub const INDEX_FILE: &str = "index.jsonl";
pub const SAMPLES_DIR: &str = "samples";
pub const DUMPS_DIR: &str = "dumps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub dataset: String,
    pub spec: HistogramSpec,
    pub frames: usize,
    pub stride: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    pub meta: CacheMeta,
    pub samples: Vec<SampleTensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub frames: usize,
    pub stride: usize,
    pub text_dumps: bool,
}

/// Builds the samples of one video. Frames outside every window are never
/// decoded.
pub fn video_samples(video: &VideoRecord, spec: &HistogramSpec, n: usize, stride: usize) -> Result<Vec<SampleTensor>> {
    let wins = window_video(video, n, stride)?;
    let needed: BTreeSet<usize> = wins.iter().flat_map(|w| w.start..w.end).collect();
    let mut features: Vec<Option<FrameFeature>> = vec![None; video.frame_paths.len()];
    for i in needed {
        features[i] = Some(extract_frame(&load_frame(&video.frame_paths[i])?, spec)?);
    }
    let layout = spec.layout();
    wins.iter()
        .map(|w| {
            let rows: Vec<FrameFeature> = (w.start..w.end)
                .map(|i| features[i].clone().expect("window frame extracted"))
                .collect();
            SampleTensor::from_features(
                layout,
                &rows,
                Some(Provenance {
                    video_id: video.video_id.clone(),
                    user_id: video.user_id.clone(),
                    label: video.label,
                    frame_start: w.start,
                    frame_end: w.end,
                    attrs: video.attrs.clone(),
                }),
            )
        })
        .collect()
}

fn clear_stale(dir: &Path, ext: &str) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Extracts every video in parallel and writes the cache. Output depends only
/// on the inputs, so re-running over the same data rewrites identical files.
pub fn extract_dataset(
    dataset: &str,
    videos: &[VideoRecord],
    spec: &HistogramSpec,
    opts: ExtractOptions,
    out_dir: &Path,
) -> Result<CacheMeta> {
    spec.validate()?;
    if spec.lbp.radius.fract() != 0.0 {
        return Err(Error::InvalidParam(format!(
            "the sample cache stores whole-pixel radii only (got {})",
            spec.lbp.radius
        )));
    }
    let per_video: Vec<Vec<SampleTensor>> = videos
        .par_iter()
        .map(|v| {
            let s = video_samples(v, spec, opts.frames, opts.stride);
            debug!("extracted {}", v.video_id);
            s
        })
        .collect::<Result<_>>()?;

    let samples_dir = out_dir.join(SAMPLES_DIR);
    let dumps_dir = out_dir.join(DUMPS_DIR);
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    clear_stale(&samples_dir, "ctl")?;
    if opts.text_dumps {
        fs::create_dir_all(&dumps_dir).map_err(|e| Error::io(&dumps_dir, e))?;
        clear_stale(&dumps_dir, "txt")?;
    }

    let index_path = out_dir.join(INDEX_FILE);
    let mut index = Vec::new();
    let mut count = 0;
    for (vi, samples) in per_video.iter().enumerate() {
        if samples.is_empty() {
            warn!("video {} produced no samples", videos[vi].video_id);
        }
        for s in samples {
            let p = s.provenance.clone().expect("extracted samples carry provenance");
            let stem = format!("{vi:05}-{:06}", p.frame_start);
            let file = format!("{SAMPLES_DIR}/{stem}.ctl");
            let path = out_dir.join(&file);
            fs::write(&path, serialize_sample(s)?).map_err(|e| Error::io(&path, e))?;
            if opts.text_dumps {
                let path = dumps_dir.join(format!("{stem}.txt"));
                fs::write(&path, debug_dump(&s.frames)).map_err(|e| Error::io(&path, e))?;
            }
            let line = serde_json::to_string(&IndexEntry { file, provenance: p }).expect("serializable");
            index.extend_from_slice(line.as_bytes());
            index.push(b'\n');
            count += 1;
        }
    }
    fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;

    let meta = CacheMeta {
        dataset: dataset.to_string(),
        spec: *spec,
        frames: opts.frames,
        stride: opts.stride,
        samples: count,
    };
    let meta_path = out_dir.join(META_FILE);
    let mut f = fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::to_writer_pretty(&mut f, &meta).expect("serializable");
    f.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))?;
    info!("wrote {count} samples from {} videos to {}", videos.len(), out_dir.display());
    Ok(meta)
}

pub fn load_cache(dir: impl AsRef<Path>) -> Result<FeatureCache> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CacheMeta =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
    let layout = meta.spec.layout();

    let index_path = dir.join(INDEX_FILE);
    let reader = BufReader::new(fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: IndexEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: index_path.clone(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        let path: PathBuf = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut s = deserialize_sample(&bytes)?;
        if s.layout != layout || s.len() != meta.frames {
            return Err(Error::Wire(format!(
                "{} has shape {}x{} but the cache declares {}x{}",
                path.display(),
                s.len(),
                s.dim(),
                meta.frames,
                layout.dim()
            )));
        }
        s.provenance = Some(entry.provenance);
        samples.push(s);
    }
    if samples.len() != meta.samples {
        return Err(Error::Config(format!(
            "index lists {} samples, metadata says {}",
            samples.len(),
            meta.samples
        )));
    }
    Ok(FeatureCache { meta, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_manifest, FineLabel};
    use crate::features::{parse_debug_dump, WIRE_HEADER_LEN};
    use crate::lbp::LbpParams;
    use crate::pixel::SpaceSet;
    use image::RgbImage;

    fn tiny_dataset(dir: &Path, frames: usize) -> Vec<VideoRecord> {
        let fdir = dir.join("frames/v1");
        fs::create_dir_all(&fdir).unwrap();
        for k in 0..frames {
            let img = RgbImage::from_fn(24, 20, |x, y| image::Rgb([(x * 9 + k as u32) as u8, (y * 11) as u8, 90]));
            img.save(fdir.join(format!("f{k:03}.png"))).unwrap();
        }
        fs::write(
            dir.join("manifest.csv"),
            "video_id,user_id,label,attrs,frame_dir\nv1,u1,print,session=1,frames/v1\n",
        )
        .unwrap();
        parse_manifest(dir.join("manifest.csv")).unwrap()
    }

    fn small_spec() -> HistogramSpec {
        HistogramSpec {
            color_buckets: 8,
            lbp_buckets: 6,
            lbp: LbpParams::new(8, 2.0).unwrap(),
            spaces: SpaceSet::BOTH,
        }
    }

    #[test]
    fn extract_round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let videos = tiny_dataset(dir.path(), 7);
        let out = dir.path().join("cache");
        let opts = ExtractOptions {
            frames: 3,
            stride: 2,
            text_dumps: true,
        };
        let meta = extract_dataset("tiny", &videos, &small_spec(), opts, &out).unwrap();
        assert_eq!(meta.samples, 3);
        let first_index = fs::read(out.join(INDEX_FILE)).unwrap();
        let first_sample = fs::read(out.join("samples/00000-000002.ctl")).unwrap();
        assert_eq!(first_sample.len(), WIRE_HEADER_LEN + 2 * 3 * small_spec().dim());

        extract_dataset("tiny", &videos, &small_spec(), opts, &out).unwrap();
        assert_eq!(fs::read(out.join(INDEX_FILE)).unwrap(), first_index);
        assert_eq!(fs::read(out.join("samples/00000-000002.ctl")).unwrap(), first_sample);

        let cache = load_cache(&out).unwrap();
        assert_eq!(cache.meta, meta);
        let direct = video_samples(&videos[0], &small_spec(), 3, 2).unwrap();
        for (a, b) in cache.samples.iter().zip(&direct) {
            assert_eq!(a.provenance, b.provenance);
            assert!(a.frames.iter().zip(&b.frames).all(|(x, y)| (x - y).abs() <= 0.5 / 65535.0 + 1e-15));
            let p = a.provenance.as_ref().unwrap();
            assert_eq!(p.label, FineLabel::Print);
            let dump = fs::read_to_string(out.join(format!("{DUMPS_DIR}/00000-{:06}.txt", p.frame_start))).unwrap();
            assert_eq!(parse_debug_dump(&dump).unwrap(), b.frames);
        }
        assert_eq!(
            cache.samples.iter().map(|s| s.provenance.as_ref().unwrap().frame_start).collect::<Vec<_>>(),
            vec![0, 2, 4]
        );
    }

    #[test]
    fn short_video_yields_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        let videos = tiny_dataset(dir.path(), 2);
        let out = dir.path().join("cache");
        let opts = ExtractOptions {
            frames: 3,
            stride: 1,
            text_dumps: false,
        };
        assert_eq!(extract_dataset("tiny", &videos, &small_spec(), opts, &out).unwrap().samples, 0);
        assert!(load_cache(&out).unwrap().samples.is_empty());
    }

    #[test]
    fn fractional_radius_is_rejected_and_corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let videos = tiny_dataset(dir.path(), 3);
        let out = dir.path().join("cache");
        let opts = ExtractOptions {
            frames: 3,
            stride: 1,
            text_dumps: false,
        };
        let mut spec = small_spec();
        spec.lbp.radius = 1.5;
        assert!(extract_dataset("tiny", &videos, &spec, opts, &out).is_err());

        extract_dataset("tiny", &videos, &small_spec(), opts, &out).unwrap();
        let f = out.join("samples/00000-000000.ctl");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_cache(&out).is_err());
        assert!(load_cache(dir.path().join("missing")).is_err());
    }
}
