//! Image-caption matching probes.
//!
//! Each manifest entry becomes one probe whose correct slot is the entry's
//! own image (or image+caption pair) and whose distractors are drawn without
//! replacement from the other entries. All sampling is keyed by
//! (run seed, entry id) so per-item streams are independent and reruns are
//! byte-identical.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::derive_rng;
use crate::ingest::{
    position_label, ModalityAtom, OptionSlot, ProbeItem, ProbeMode, SlotContent,
};

/// One line of an image-caption manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionEntry {
    pub id: String,
    pub image_path: String,
    pub caption: String,
}

impl CaptionEntry {
    /// Load a line-delimited manifest. Paths inside stay raw; they resolve
    /// against the manifest's directory when probes are built.
    pub fn load_manifest(path: &Path) -> Result<Vec<CaptionEntry>> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CaptionEntry =
                serde_json::from_str(line).map_err(|e| Error::MalformedRow {
                    path: path.to_path_buf(),
                    row: i + 1,
                    reason: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(entries)
    }
}

/// Which matching family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    ImageOnly,
    Pair,
}

const DISTRACTOR_RETRIES: usize = 16;

/// Build one matching probe per manifest entry.
///
/// `base` is the directory image paths resolve against (normally the
/// manifest's directory). The correct slot's initial position is
/// seed-derived, not fixed, so fixtures do not bake in the bias under study.
pub fn build_matching_probes(
    entries: &[CaptionEntry],
    base: &Path,
    mode: MatchingMode,
    distractor_count: usize,
    seed: u64,
) -> Result<Vec<ProbeItem>> {
    let m = distractor_count + 1;
    if m < 2 {
        return Err(Error::InvalidArgument(
            "distractor_count 0 would give single-slot probes (M >= 2 required)".into(),
        ));
    }
    if entries.len() < distractor_count + 1 {
        return Err(Error::TooFewEntries {
            needed: distractor_count + 1,
            have: entries.len(),
        });
    }

    let mut probes = Vec::with_capacity(entries.len());
    for (idx, entry) in entries.iter().enumerate() {
        let mut rng = derive_rng(seed, &format!("matching:{}:{}", mode_tag(mode), entry.id));
        let correct_atom = ModalityAtom::image_ref(base, &entry.image_path, None)?;

        // Distractors sampled without replacement from the other entries;
        // resample on a content-hash collision with the correct entry.
        let other: Vec<usize> = (0..entries.len()).filter(|&j| j != idx).collect();
        let mut contents: Option<Vec<SlotContent>> = None;
        'retry: for attempt in 0..DISTRACTOR_RETRIES {
            let picks: Vec<usize> = {
                let mut pool = other.clone();
                pool.shuffle(&mut rng);
                pool.truncate(distractor_count);
                pool
            };
            let mut cand = Vec::with_capacity(m);
            let correct_content = match mode {
                MatchingMode::ImageOnly => SlotContent::Single(correct_atom.clone()),
                MatchingMode::Pair => SlotContent::Pair {
                    image: correct_atom.clone(),
                    text: ModalityAtom::text(&entry.caption),
                },
            };
            cand.push(correct_content);
            for &j in &picks {
                let atom = ModalityAtom::image_ref(base, &entries[j].image_path, None)?;
                let content = match mode {
                    MatchingMode::ImageOnly => SlotContent::Single(atom),
                    MatchingMode::Pair => SlotContent::Pair {
                        image: atom,
                        text: ModalityAtom::text(&entries[j].caption),
                    },
                };
                cand.push(content);
            }
            let mut hashes: Vec<_> = cand.iter().map(SlotContent::content_hash).collect();
            hashes.sort();
            if hashes.windows(2).any(|w| w[0] == w[1]) {
                if attempt + 1 == DISTRACTOR_RETRIES {
                    return Err(Error::DistractorExhausted {
                        id: entry.id.clone(),
                        retries: DISTRACTOR_RETRIES,
                    });
                }
                continue 'retry;
            }
            contents = Some(cand);
            break;
        }
        let mut contents = contents.expect("loop either sets contents or errors");

        // Seed-derived initial position for the correct slot.
        let correct_index = rng.gen_range(1..=m);
        contents.swap(0, correct_index - 1);

        let slots: Vec<OptionSlot> = contents
            .into_iter()
            .enumerate()
            .map(|(j, content)| OptionSlot {
                label: position_label(j + 1),
                content,
            })
            .collect();

        let (mode_enum, stem, anchor) = match mode {
            MatchingMode::ImageOnly => (
                ProbeMode::ImageOnly,
                "Which image best matches the caption?".to_string(),
                Some(ModalityAtom::text(&entry.caption)),
            ),
            MatchingMode::Pair => (
                ProbeMode::Pair,
                "Which image and caption pair match each other best?".to_string(),
                None,
            ),
        };

        let item = ProbeItem {
            id: entry.id.clone(),
            mode: mode_enum,
            stem,
            anchor,
            slots,
            correct_index,
            rag_images: None,
            metadata: Vec::new(),
        };
        item.validate()?;
        probes.push(item);
    }
    Ok(probes)
}

fn mode_tag(mode: MatchingMode) -> &'static str {
    match mode {
        MatchingMode::ImageOnly => "image_only",
        MatchingMode::Pair => "pair",
    }
}
