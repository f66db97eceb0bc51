//! Constructed video probes: a key action clip padded with filler clips to a
//! target duration, paired with a yes/no question about the key action.
//!
//! Videos are handled as ordered frame manifests; no codec work happens here.
//! Frame counts follow one rounding rule throughout: count = round(duration
//! x fps), half away from zero.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::derive_rng;
use crate::ingest::ModalityAtom;

/// Paper-derived duration bounds for an acceptable key clip, in seconds.
pub const DEFAULT_KEY_CLIP_BOUNDS: (f64, f64) = (2.0, 3.0);

/// A source clip: an ordered frame sequence with its caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub id: String,
    pub frames: Vec<ModalityAtom>,
    pub fps: f64,
    pub caption: String,
}

impl ClipSpec {
    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// Load a clip from its sidecar descriptor. Frame paths resolve relative
    /// to the sidecar's directory.
    pub fn load(sidecar: &Path) -> Result<ClipSpec> {
        let raw = read_sidecar(sidecar)?;
        let base = sidecar.parent().unwrap_or(Path::new("."));
        let frames = resolve_frames(base, &raw.frames)?;
        let id = raw.id.unwrap_or_else(|| {
            base.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "clip".into())
        });
        Ok(ClipSpec {
            id,
            frames,
            fps: raw.fps,
            caption: raw.caption,
        })
    }
}

/// An ordered frame manifest with a contiguous key-frame block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub frames: Vec<ModalityAtom>,
    pub fps: f64,
    /// 0-based index of the first key frame.
    pub key_start: usize,
    /// Number of key frames; always >= 1.
    pub key_len: usize,
    /// Caption of the key action.
    pub caption: String,
}

impl FrameManifest {
    pub fn key_range(&self) -> std::ops::Range<usize> {
        self.key_start..self.key_start + self.key_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.key_len == 0 {
            return Err(Error::InvalidArgument("empty key_range".into()));
        }
        if self.key_start + self.key_len > self.frames.len() {
            return Err(Error::InvalidArgument(format!(
                "key_range {}..{} out of bounds for {} frames",
                self.key_start,
                self.key_start + self.key_len,
                self.frames.len()
            )));
        }
        if self.frames.iter().any(|f| f.is_text()) {
            return Err(Error::InvalidArgument(
                "frame manifest contains a non-media atom".into(),
            ));
        }
        Ok(())
    }
}

/// A constructed video probe: frames plus the yes/no question about the key
/// action. The ground-truth answer is always "Yes" by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoProbe {
    pub id: String,
    pub manifest: FrameManifest,
    pub question: String,
}

#[derive(Deserialize)]
struct SidecarRaw {
    id: Option<String>,
    fps: f64,
    caption: String,
    frames: Vec<String>,
    key_range: Option<KeyRangeRaw>,
}

#[derive(Deserialize)]
struct KeyRangeRaw {
    start: usize,
    len: usize,
}

fn read_sidecar(path: &Path) -> Result<SidecarRaw> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedRow {
        path: path.to_path_buf(),
        row: 1,
        reason: e.to_string(),
    })
}

fn resolve_frames(base: &Path, names: &[String]) -> Result<Vec<ModalityAtom>> {
    names
        .iter()
        .map(|n| ModalityAtom::frame_seq_ref(base, n, None))
        .collect()
}

/// Load a full frame manifest (sidecar with a required key_range).
pub fn load_frame_manifest(sidecar: &Path) -> Result<FrameManifest> {
    let raw = read_sidecar(sidecar)?;
    let base = sidecar.parent().unwrap_or(Path::new("."));
    let frames = resolve_frames(base, &raw.frames)?;
    let key = raw.key_range.ok_or_else(|| Error::MalformedRow {
        path: sidecar.to_path_buf(),
        row: 1,
        reason: "missing key_range".into(),
    })?;
    let manifest = FrameManifest {
        frames,
        fps: raw.fps,
        key_start: key.start,
        key_len: key.len,
        caption: raw.caption,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Keep the clips whose duration falls inside `bounds` (inclusive).
pub fn filter_clips_by_duration(clips: &[ClipSpec], bounds: (f64, f64)) -> Vec<ClipSpec> {
    clips
        .iter()
        .filter(|c| {
            let d = c.duration_secs();
            d >= bounds.0 && d <= bounds.1
        })
        .cloned()
        .collect()
}

/// Build one video probe: the key clip first, then seed-sampled filler clips
/// appended until the manifest reaches `target_duration` seconds.
///
/// Filler clips are drawn in shuffled order without replacement (reshuffling
/// if the pool runs out) and the final filler is truncated so the total frame
/// count is exactly round(target_duration x fps).
pub fn build_video_probe(
    key: &ClipSpec,
    target_duration: f64,
    filler_pool: &[ClipSpec],
    key_bounds: (f64, f64),
    seed: u64,
) -> Result<VideoProbe> {
    let dur = key.duration_secs();
    if dur < key_bounds.0 || dur > key_bounds.1 {
        return Err(Error::InvalidArgument(format!(
            "key clip {} duration {dur:.3}s outside bounds [{}, {}]",
            key.id, key_bounds.0, key_bounds.1
        )));
    }
    if dur > target_duration {
        return Err(Error::InvalidArgument(format!(
            "key clip {} duration {dur:.3}s exceeds target {target_duration}s",
            key.id
        )));
    }
    let total = (target_duration * key.fps).round() as usize;
    let key_len = key.frames.len();
    let mut needed = total.saturating_sub(key_len);

    let pool: Vec<&ClipSpec> = filler_pool.iter().filter(|c| c.id != key.id).collect();
    if needed > 0 && pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty filler pool while {needed} filler frames are needed"
        )));
    }

    let mut frames = key.frames.clone();
    let mut rng = derive_rng(seed, &format!("video:{}", key.id));
    let mut order: Vec<usize> = Vec::new();
    while needed > 0 {
        if order.is_empty() {
            order = (0..pool.len()).collect();
            order.shuffle(&mut rng);
        }
        let clip = pool[order.remove(0)];
        let take = needed.min(clip.frames.len());
        frames.extend_from_slice(&clip.frames[..take]);
        needed -= take;
    }

    let manifest = FrameManifest {
        frames,
        fps: key.fps,
        key_start: 0,
        key_len,
        caption: key.caption.clone(),
    };
    manifest.validate()?;
    Ok(VideoProbe {
        id: key.id.clone(),
        question: format!(
            "Is anyone in the video performing the following action: {}?",
            key.caption
        ),
        manifest,
    })
}

/// Write video probes to a JSONL file with a leading provenance record.
pub fn write_video_probe_file(
    path: &Path,
    probes: &[VideoProbe],
    provenance: &crate::runner::FileMeta,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(provenance)?);
    out.push('\n');
    for p in probes {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    crate::runner::write_atomic(path, out.as_bytes())
}

/// Load video probes from a JSONL file, skipping the provenance record.
pub fn load_video_probe_file(path: &Path) -> Result<Vec<VideoProbe>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut probes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if lineno == 0 && line.contains("\"record\":\"meta\"") {
            continue;
        }
        let probe: VideoProbe = serde_json::from_str(line).map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            row: lineno + 1,
            reason: e.to_string(),
        })?;
        probe.manifest.validate()?;
        probes.push(probe);
    }
    Ok(probes)
}


#[cfg(test)]
mod tests {
    use super::testclips::clip;
    use super::*;

    fn filler_pool() -> Vec<ClipSpec> {
        (0..6).map(|i| clip(&format!("fill{i}"), 9, 3.0)).collect()
    }

    #[test]
    fn eight_frame_key_reaches_thirty_frames() {
        // 8 frames at 3 fps is a 2.67 s key clip; target 10 s -> 30 frames.
        let key = clip("key", 8, 3.0);
        let probe =
            build_video_probe(&key, 10.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 7).unwrap();
        assert_eq!(probe.manifest.frames.len(), 30);
        assert_eq!(probe.manifest.key_range(), 0..8);
        assert_eq!(
            probe.question,
            "Is anyone in the video performing the following action: action key?"
        );
    }

    #[test]
    fn seven_frame_key_also_valid() {
        // 7 frames at 3 fps = 2.33 s, the other rounding of a 2.5 s clip.
        let key = clip("key", 7, 3.0);
        let probe =
            build_video_probe(&key, 10.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 7).unwrap();
        assert_eq!(probe.manifest.frames.len(), 30);
        assert_eq!(probe.manifest.key_len, 7);
    }

    #[test]
    fn degenerate_fill_is_exactly_the_key_clip() {
        let key = clip("key", 9, 3.0); // 3.0 s
        let probe =
            build_video_probe(&key, 3.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 7).unwrap();
        assert_eq!(probe.manifest.frames, key.frames);
        assert_eq!(probe.manifest.key_range(), 0..9);
    }

    #[test]
    fn key_longer_than_target_is_an_error() {
        let key = clip("key", 9, 3.0); // 3.0 s
        let err = build_video_probe(&key, 2.5, &filler_pool(), (1.0, 4.0), 7).unwrap_err();
        assert!(err.to_string().contains("exceeds target"));
    }

    #[test]
    fn out_of_bounds_key_rejected() {
        let key = clip("key", 30, 3.0); // 10 s
        let err =
            build_video_probe(&key, 10.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 7).unwrap_err();
        assert!(err.to_string().contains("outside bounds"));
    }

    #[test]
    fn duration_filter_matches_pool_construction() {
        // 200-clip pool built so exactly 135 fall inside the 2-3 s window.
        let mut clips = Vec::new();
        for i in 0..135 {
            clips.push(clip(&format!("in{i}"), 7, 3.0)); // 2.33 s
        }
        for i in 0..40 {
            clips.push(clip(&format!("short{i}"), 3, 3.0)); // 1 s
        }
        for i in 0..25 {
            clips.push(clip(&format!("long{i}"), 12, 3.0)); // 4 s
        }
        assert_eq!(clips.len(), 200);
        let kept = filter_clips_by_duration(&clips, DEFAULT_KEY_CLIP_BOUNDS);
        assert_eq!(kept.len(), 135);
    }

    #[test]
    fn same_seed_same_fill() {
        let key = clip("key", 8, 3.0);
        let a = build_video_probe(&key, 10.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 3).unwrap();
        let b = build_video_probe(&key, 10.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 3).unwrap();
        assert_eq!(a, b);
        let c = build_video_probe(&key, 10.0, &filler_pool(), DEFAULT_KEY_CLIP_BOUNDS, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            std::fs::write(dir.path().join(format!("f{i}.jpg")), format!("frame{i}")).unwrap();
        }
        let sidecar = dir.path().join("clip.json");
        std::fs::write(
            &sidecar,
            r#"{"id":"c1","fps":2.0,"caption":"jumping","frames":["f0.jpg","f1.jpg","f2.jpg","f3.jpg"],"key_range":{"start":1,"len":2}}"#,
        )
        .unwrap();
        let manifest = load_frame_manifest(&sidecar).unwrap();
        assert_eq!(manifest.frames.len(), 4);
        assert_eq!(manifest.key_range(), 1..3);
        let spec = ClipSpec::load(&sidecar).unwrap();
        assert_eq!(spec.id, "c1");
        assert_eq!(spec.duration_secs(), 2.0);
    }
}
