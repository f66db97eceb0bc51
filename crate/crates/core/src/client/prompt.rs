//! Prompt rendering: ProbeItem variants become ordered sequences of text
//! segments and image attachments.
//!
//! Rendering is a pure function of (variant, template id). Image bytes are
//! not read here; segments carry the source path and content hash, and the
//! wire layer loads bytes only when a request is actually sent.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ingest::{
    option_labels, AtomPayload, FrameManifest, ModalityAtom, ProbeItem, ProbeMode, SlotContent,
};

pub const DEFAULT_TEMPLATE: &str = "default-v1";

/// Where an attachment's bytes come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    Inline(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptSegment {
    Text(String),
    Image {
        media_type: String,
        hash: ContentHash,
        source: ImageSource,
    },
}

/// A rendered prompt: ordered segments plus the template that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub template_id: String,
    pub segments: Vec<PromptSegment>,
}

impl Prompt {
    /// Canonical byte form used for cache keys. Attachments are represented
    /// by media type and content hash, so the form is stable whether bytes
    /// are inline or on disk.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str("template=");
        out.push_str(&self.template_id);
        out.push('\n');
        for seg in &self.segments {
            match seg {
                PromptSegment::Text(t) => {
                    out.push_str("text:");
                    out.push_str(&serde_json::to_string(t).expect("string to json"));
                    out.push('\n');
                }
                PromptSegment::Image {
                    media_type, hash, ..
                } => {
                    out.push_str("image:");
                    out.push_str(media_type);
                    out.push(':');
                    out.push_str(&hash.to_hex());
                    out.push('\n');
                }
            }
        }
        out.into_bytes()
    }
}

/// One in-context demonstration: its atoms render in order ahead of the
/// evaluation probe.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub atoms: Vec<ModalityAtom>,
}

fn atom_segment(atom: &ModalityAtom) -> PromptSegment {
    match &atom.payload {
        AtomPayload::Text { text } => PromptSegment::Text(text.clone()),
        AtomPayload::ImageRef { path, media_type }
        | AtomPayload::FrameSeqRef { path, media_type } => PromptSegment::Image {
            media_type: media_type.clone(),
            hash: atom.hash,
            source: ImageSource::Path(path.clone()),
        },
    }
}

fn label_instruction(m: usize) -> String {
    let labels = option_labels(m);
    format!(
        "Answer with the letter of the correct option ({}).",
        labels.join(", ")
    )
}

fn check_template(template_id: &str, mode: &str) -> Result<()> {
    if template_id != DEFAULT_TEMPLATE {
        return Err(Error::UnknownTemplate {
            template: template_id.to_string(),
            mode: mode.to_string(),
        });
    }
    Ok(())
}

/// Render a probe variant. Slots appear in label order; the anchor precedes
/// the options for text_only and image_only modes.
pub fn render_prompt(variant: &ProbeItem, template_id: &str) -> Result<Prompt> {
    check_template(template_id, &variant.mode.to_string())?;
    let m = variant.option_count();
    let mut segments = Vec::new();
    match variant.mode {
        ProbeMode::TextOnly => {
            let anchor = variant.anchor.as_ref().expect("validated");
            segments.push(atom_segment(anchor));
            segments.push(PromptSegment::Text(format!("Question: {}", variant.stem)));
            for slot in &variant.slots {
                let text = match &slot.content {
                    SlotContent::Single(a) => a.as_text().expect("validated text slot"),
                    SlotContent::Pair { .. } => unreachable!("validated"),
                };
                segments.push(PromptSegment::Text(format!("Op.{}: {}", slot.label, text)));
            }
            segments.push(PromptSegment::Text(label_instruction(m)));
        }
        ProbeMode::ImageOnly => {
            let anchor = variant.anchor.as_ref().expect("validated");
            segments.push(PromptSegment::Text(format!(
                "Caption: {}",
                anchor.as_text().expect("validated text anchor")
            )));
            segments.push(PromptSegment::Text(format!("Question: {}", variant.stem)));
            for slot in &variant.slots {
                segments.push(PromptSegment::Text(format!("Op.{}:", slot.label)));
                match &slot.content {
                    SlotContent::Single(a) => segments.push(atom_segment(a)),
                    SlotContent::Pair { .. } => unreachable!("validated"),
                }
            }
            segments.push(PromptSegment::Text(label_instruction(m)));
        }
        ProbeMode::Pair => {
            segments.push(PromptSegment::Text(format!("Question: {}", variant.stem)));
            for slot in &variant.slots {
                segments.push(PromptSegment::Text(format!("Op.{}:", slot.label)));
                match &slot.content {
                    SlotContent::Pair { image, text } => {
                        segments.push(atom_segment(image));
                        segments.push(PromptSegment::Text(
                            text.as_text().expect("validated pair text").to_string(),
                        ));
                    }
                    SlotContent::Single(_) => unreachable!("validated"),
                }
            }
            segments.push(PromptSegment::Text(label_instruction(m)));
        }
        ProbeMode::RagPlacement => {
            let rag = variant.rag_images.as_ref().expect("validated");
            segments.push(PromptSegment::Text("Retrieved images:".to_string()));
            for image in &rag.images {
                segments.push(atom_segment(image));
            }
            segments.push(PromptSegment::Text(format!("Question: {}", variant.stem)));
            for slot in &variant.slots {
                let text = match &slot.content {
                    SlotContent::Single(a) => a.as_text().expect("validated text slot"),
                    SlotContent::Pair { .. } => unreachable!("validated"),
                };
                segments.push(PromptSegment::Text(format!("Op.{}: {}", slot.label, text)));
            }
            segments.push(PromptSegment::Text(label_instruction(m)));
        }
        ProbeMode::VideoPlacement => {
            return Err(Error::UnknownTemplate {
                template: template_id.to_string(),
                mode: "video_placement (use render_video_prompt)".to_string(),
            });
        }
    }
    Ok(Prompt {
        template_id: template_id.to_string(),
        segments,
    })
}

/// Indices of `n` frames sampled uniformly by index from `total` frames.
///
/// Includes the first and last frame when n >= 2; returns all indices when
/// the manifest is shorter than the sample budget.
pub fn sample_frame_indices(total: usize, n: usize) -> Vec<usize> {
    if total == 0 || n == 0 {
        return Vec::new();
    }
    if total <= n {
        return (0..total).collect();
    }
    if n == 1 {
        return vec![0];
    }
    (0..n)
        .map(|i| (i as f64 * (total - 1) as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

/// Render a video probe: sampled frames in manifest order, the question, and
/// a yes/no instruction.
pub fn render_video_prompt(
    manifest: &FrameManifest,
    question: &str,
    frame_samples: usize,
    template_id: &str,
) -> Result<Prompt> {
    check_template(template_id, "video_placement")?;
    let mut segments = Vec::new();
    for idx in sample_frame_indices(manifest.frames.len(), frame_samples) {
        segments.push(atom_segment(&manifest.frames[idx]));
    }
    segments.push(PromptSegment::Text(format!("Question: {question}")));
    segments.push(PromptSegment::Text("Answer Yes or No.".to_string()));
    Ok(Prompt {
        template_id: template_id.to_string(),
        segments,
    })
}

/// Render a variant with a demonstration block prepended.
pub fn render_with_demonstrations(
    demonstrations: &[Demonstration],
    variant: &ProbeItem,
    template_id: &str,
) -> Result<Prompt> {
    let mut prompt = render_prompt(variant, template_id)?;
    let mut segments = Vec::with_capacity(prompt.segments.len() + demonstrations.len() * 2);
    for demo in demonstrations {
        for atom in &demo.atoms {
            segments.push(atom_segment(atom));
        }
    }
    segments.append(&mut prompt.segments);
    prompt.segments = segments;
    Ok(prompt)
}
