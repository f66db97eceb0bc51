//! Probe datasets: domain types plus the builders that turn external files
//! into probe items.
//!
//! The harness works over five probe families:
//! - `text_only`: an image anchor, a question, and M text option slots
//! - `image_only`: a caption anchor and M image option slots
//! - `pair`: M image+caption option slots, no anchor
//! - `rag_placement`: a text MCQ carrying a retrieved image set with exactly
//!   one question-relevant image
//! - `video_placement`: a frame manifest paired with a yes/no question
//!   (see [`VideoProbe`])
//!
//! Every builder is a pure function of (inputs, seed): rerunning with the
//! same arguments yields content-hash-identical output.

mod matching;
mod mcq;
mod rag;
mod video;

pub use matching::{build_matching_probes, CaptionEntry, MatchingMode};
pub use mcq::{ingest_mcq, McqIngest, SkipReport};
pub use rag::{build_rag_probe, PoolImage};
pub use video::{
    build_video_probe, filter_clips_by_duration, load_frame_manifest, load_video_probe_file,
    write_video_probe_file, ClipSpec, FrameManifest, VideoProbe, DEFAULT_KEY_CLIP_BOUNDS,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ContentHash;

/// One atom of context: a text span or a reference to media on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomPayload {
    Text { text: String },
    ImageRef { path: PathBuf, media_type: String },
    FrameSeqRef { path: PathBuf, media_type: String },
}

/// A context element with a stable 128-bit content hash.
///
/// The hash is computed from payload bytes at construction time (file bytes
/// for media refs, canonical UTF-8 for text) and carried through
/// serialization so downstream stages never need to re-read media.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityAtom {
    #[serde(flatten)]
    pub payload: AtomPayload,
    pub hash: ContentHash,
}

impl ModalityAtom {
    pub fn text(text: impl Into<String>) -> Self {
        let text = text.into();
        let hash = ContentHash::of_text(&text);
        ModalityAtom {
            payload: AtomPayload::Text { text },
            hash,
        }
    }

    /// Resolve `raw` against `base`, read the file, and hash its bytes.
    ///
    /// Unresolvable paths are a load error, never a silent skip.
    pub fn image_ref(base: &Path, raw: &str, media_type: Option<&str>) -> Result<Self> {
        let (path, hash) = resolve_and_hash(base, raw)?;
        let media_type = media_type
            .map(str::to_owned)
            .unwrap_or_else(|| guess_media_type(&path));
        Ok(ModalityAtom {
            payload: AtomPayload::ImageRef { path, media_type },
            hash,
        })
    }

    /// Like [`ModalityAtom::image_ref`] but tagged as one frame of a sequence.
    pub fn frame_seq_ref(base: &Path, raw: &str, media_type: Option<&str>) -> Result<Self> {
        let (path, hash) = resolve_and_hash(base, raw)?;
        let media_type = media_type
            .map(str::to_owned)
            .unwrap_or_else(|| guess_media_type(&path));
        Ok(ModalityAtom {
            payload: AtomPayload::FrameSeqRef { path, media_type },
            hash,
        })
    }

    pub fn is_text(&self) -> bool {
        matches!(self.payload, AtomPayload::Text { .. })
    }

    pub fn is_image(&self) -> bool {
        matches!(self.payload, AtomPayload::ImageRef { .. })
    }

    pub fn as_text(&self) -> Option<&str> {
        match &self.payload {
            AtomPayload::Text { text } => Some(text),
            _ => None,
        }
    }

    /// Path and media type for media atoms; None for text.
    pub fn media(&self) -> Option<(&Path, &str)> {
        match &self.payload {
            AtomPayload::ImageRef { path, media_type }
            | AtomPayload::FrameSeqRef { path, media_type } => Some((path, media_type)),
            AtomPayload::Text { .. } => None,
        }
    }
}

fn resolve_and_hash(base: &Path, raw: &str) -> Result<(PathBuf, ContentHash)> {
    let candidate = if Path::new(raw).is_absolute() {
        PathBuf::from(raw)
    } else {
        base.join(raw)
    };
    let bytes = fs::read(&candidate).map_err(|_| Error::UnresolvablePath {
        path: raw.to_string(),
        base: base.to_path_buf(),
    })?;
    Ok((candidate, ContentHash::of_bytes(&bytes)))
}

fn guess_media_type(path: &Path) -> String {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/jpeg",
    }
    .to_string()
}

/// Position label for option slot `index` (1-based): A=1, B=2, ...
///
/// Labels name positions, not contents; swapping contents between slots
/// leaves labels where they are.
pub fn position_label(index: usize) -> String {
    debug_assert!(index >= 1);
    let mut n = index - 1;
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

/// The letter labels for an M-option probe: ["A", "B", ...].
pub fn option_labels(m: usize) -> Vec<String> {
    (1..=m).map(position_label).collect()
}

/// Content of one labeled option slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotContent {
    Single(ModalityAtom),
    Pair {
        image: ModalityAtom,
        text: ModalityAtom,
    },
}

impl SlotContent {
    /// Combined hash of the slot's content, order-sensitive for pairs.
    pub fn content_hash(&self) -> ContentHash {
        match self {
            SlotContent::Single(atom) => atom.hash,
            SlotContent::Pair { image, text } => {
                let mut bytes = Vec::with_capacity(32);
                bytes.extend_from_slice(&image.hash.0);
                bytes.extend_from_slice(&text.hash.0);
                ContentHash::of_bytes(&bytes)
            }
        }
    }
}

/// One labeled option slot. The label index is the presentation position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionSlot {
    pub label: String,
    pub content: SlotContent,
}

/// Probe family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    TextOnly,
    ImageOnly,
    Pair,
    VideoPlacement,
    RagPlacement,
}

impl std::fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProbeMode::TextOnly => "text_only",
            ProbeMode::ImageOnly => "image_only",
            ProbeMode::Pair => "pair",
            ProbeMode::VideoPlacement => "video_placement",
            ProbeMode::RagPlacement => "rag_placement",
        };
        f.write_str(s)
    }
}

/// Retrieved image set attached to a `rag_placement` probe.
///
/// Exactly one image (at `relevant_index`, 1-based) is the one the question
/// is actually about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagImageSet {
    pub images: Vec<ModalityAtom>,
    pub relevant_index: usize,
}

impl RagImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One question with an ordered multimodal context and a single correct slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub id: String,
    pub mode: ProbeMode,
    /// Question text.
    pub stem: String,
    /// The image the question depends on (text_only) or the caption to match
    /// (image_only). None for pair mode.
    pub anchor: Option<ModalityAtom>,
    pub slots: Vec<OptionSlot>,
    /// 1-based index of the correct slot.
    pub correct_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_images: Option<RagImageSet>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metadata: Vec<(String, String)>,
}

impl ProbeItem {
    pub fn option_count(&self) -> usize {
        self.slots.len()
    }

    pub fn correct_label(&self) -> &str {
        &self.slots[self.correct_index - 1].label
    }

    /// Check the shared and mode-specific shape invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidProbe {
            id: self.id.clone(),
            reason,
        };
        let m = self.slots.len();
        if m < 2 {
            return Err(fail(format!("option count {m} < 2")));
        }
        if self.correct_index < 1 || self.correct_index > m {
            return Err(fail(format!(
                "correct_index {} out of range 1..={m}",
                self.correct_index
            )));
        }
        for (i, slot) in self.slots.iter().enumerate() {
            if slot.label != position_label(i + 1) {
                return Err(fail(format!(
                    "slot {} label {:?} does not name its position",
                    i + 1,
                    slot.label
                )));
            }
        }
        let mut hashes: Vec<ContentHash> =
            self.slots.iter().map(|s| s.content.content_hash()).collect();
        hashes.sort();
        if hashes.windows(2).any(|w| w[0] == w[1]) {
            return Err(fail("slot contents are not pairwise distinct".into()));
        }
        match self.mode {
            ProbeMode::TextOnly => {
                match &self.anchor {
                    Some(a) if a.is_image() => {}
                    _ => return Err(fail("text_only requires an image anchor".into())),
                }
                if !self.slots.iter().all(|s| {
                    matches!(&s.content, SlotContent::Single(a) if a.is_text())
                }) {
                    return Err(fail("text_only requires all-text slots".into()));
                }
            }
            ProbeMode::ImageOnly => {
                match &self.anchor {
                    Some(a) if a.is_text() => {}
                    _ => return Err(fail("image_only requires a text anchor".into())),
                }
                if !self.slots.iter().all(|s| {
                    matches!(&s.content, SlotContent::Single(a) if a.is_image())
                }) {
                    return Err(fail("image_only requires all-image slots".into()));
                }
            }
            ProbeMode::Pair => {
                if self.anchor.is_some() {
                    return Err(fail("pair mode takes no anchor".into()));
                }
                if !self
                    .slots
                    .iter()
                    .all(|s| matches!(&s.content, SlotContent::Pair { .. }))
                {
                    return Err(fail("pair mode requires image-text pair slots".into()));
                }
            }
            ProbeMode::RagPlacement => {
                let rag = self
                    .rag_images
                    .as_ref()
                    .ok_or_else(|| fail("rag_placement requires a rag image set".into()))?;
                if rag.images.is_empty() {
                    return Err(fail("rag image set is empty".into()));
                }
                if rag.relevant_index < 1 || rag.relevant_index > rag.images.len() {
                    return Err(fail(format!(
                        "rag relevant_index {} out of range 1..={}",
                        rag.relevant_index,
                        rag.images.len()
                    )));
                }
                if !rag.images.iter().all(|a| a.is_image()) {
                    return Err(fail("rag image set must contain images".into()));
                }
                if !self.slots.iter().all(|s| {
                    matches!(&s.content, SlotContent::Single(a) if a.is_text())
                }) {
                    return Err(fail("rag_placement requires text option slots".into()));
                }
            }
            ProbeMode::VideoPlacement => {
                // Yes/No slots; the frame context travels in a VideoProbe.
                if m != 2 {
                    return Err(fail("video_placement uses exactly Yes/No slots".into()));
                }
            }
        }
        Ok(())
    }
}

/// Write probes to a JSONL file with a leading provenance record.
pub fn write_probe_file(
    path: &Path,
    probes: &[ProbeItem],
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

/// Load probes from a JSONL file, skipping the provenance record if present.
pub fn load_probe_file(path: &Path) -> Result<Vec<ProbeItem>> {
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
        let item: ProbeItem = serde_json::from_str(line).map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            row: lineno + 1,
            reason: e.to_string(),
        })?;
        probes.push(item);
    }
    Ok(probes)
}

#[cfg(test)]
pub(crate) mod testutil {
    //! Builders for synthetic probes used across the crate's tests.

    use super::*;

    pub fn text_slot(i: usize, text: &str) -> OptionSlot {
        OptionSlot {
            label: position_label(i),
            content: SlotContent::Single(ModalityAtom::text(text)),
        }
    }

    /// A text_only probe with distinct option texts and a synthetic anchor.
    pub fn text_item(id: &str, m: usize, correct: usize) -> ProbeItem {
        let anchor = ModalityAtom {
            payload: AtomPayload::ImageRef {
                path: PathBuf::from(format!("{id}.jpg")),
                media_type: "image/jpeg".into(),
            },
            hash: ContentHash::of_text(&format!("anchor:{id}")),
        };
        ProbeItem {
            id: id.to_string(),
            mode: ProbeMode::TextOnly,
            stem: format!("Question for {id}?"),
            anchor: Some(anchor),
            slots: (1..=m)
                .map(|i| text_slot(i, &format!("{id} option {i}")))
                .collect(),
            correct_index: correct,
            rag_images: None,
            metadata: Vec::new(),
        }
    }

    pub fn synthetic_image(tag: &str) -> ModalityAtom {
        ModalityAtom {
            payload: AtomPayload::ImageRef {
                path: PathBuf::from(format!("{tag}.jpg")),
                media_type: "image/jpeg".into(),
            },
            hash: ContentHash::of_text(tag),
        }
    }
}
