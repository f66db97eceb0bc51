//! Retrieval-simulation probes: attach an image set to a text MCQ in which
//! exactly one image is relevant to the question.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::hash::derive_rng;
use crate::ingest::{ModalityAtom, ProbeItem, ProbeMode, RagImageSet};

/// A candidate distractor image for RAG sets, typically another question's
/// image.
#[derive(Debug, Clone)]
pub struct PoolImage {
    pub source_id: String,
    pub atom: ModalityAtom,
}

/// Turn a text MCQ into a `rag_placement` probe.
///
/// The item's own anchor image becomes the question-relevant image inside a
/// set of `distractor_image_count + 1` images; distractors are sampled
/// without replacement from `pool`, excluding any image whose content hash
/// matches the relevant one. Text options are left untouched.
pub fn build_rag_probe(
    item: &ProbeItem,
    pool: &[PoolImage],
    distractor_image_count: usize,
    seed: u64,
) -> Result<ProbeItem> {
    item.validate()?;
    let relevant = match &item.anchor {
        Some(a) if a.is_image() => a.clone(),
        _ => {
            return Err(Error::InvalidProbe {
                id: item.id.clone(),
                reason: "rag construction needs an image-anchored MCQ".into(),
            })
        }
    };

    let candidates: Vec<&PoolImage> = pool
        .iter()
        .filter(|p| p.atom.hash != relevant.hash)
        .collect();
    if candidates.len() < distractor_image_count {
        return Err(Error::TooFewEntries {
            needed: distractor_image_count,
            have: candidates.len(),
        });
    }

    let mut rng = derive_rng(seed, &format!("rag:{}", item.id));
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut rng);
    let mut images: Vec<ModalityAtom> = order
        .into_iter()
        .take(distractor_image_count)
        .map(|i| candidates[i].atom.clone())
        .collect();

    // Seed-derived initial position for the relevant image.
    let relevant_index = rng.gen_range(1..=distractor_image_count + 1);
    images.insert(relevant_index - 1, relevant);

    let mut out = item.clone();
    out.mode = ProbeMode::RagPlacement;
    out.anchor = None;
    out.rag_images = Some(RagImageSet {
        images,
        relevant_index,
    });
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::testutil::{synthetic_image, text_item};

    fn pool(n: usize) -> Vec<PoolImage> {
        (0..n)
            .map(|i| PoolImage {
                source_id: format!("other{i}"),
                atom: synthetic_image(&format!("pool-image-{i}")),
            })
            .collect()
    }

    #[test]
    fn set_has_one_relevant_image() {
        let item = text_item("q1", 4, 2);
        let rag = build_rag_probe(&item, &pool(10), 3, 5).unwrap();
        let set = rag.rag_images.as_ref().unwrap();
        assert_eq!(set.images.len(), 4);
        let anchor_hash = item.anchor.as_ref().unwrap().hash;
        let relevant_count = set
            .images
            .iter()
            .filter(|a| a.hash == anchor_hash)
            .count();
        assert_eq!(relevant_count, 1);
        assert_eq!(set.images[set.relevant_index - 1].hash, anchor_hash);
        // Options untouched.
        assert_eq!(rag.slots, item.slots);
        assert_eq!(rag.correct_index, item.correct_index);
    }

    #[test]
    fn zero_distractors_is_the_control_condition() {
        let item = text_item("q1", 4, 1);
        let rag = build_rag_probe(&item, &pool(3), 0, 5).unwrap();
        let set = rag.rag_images.as_ref().unwrap();
        assert_eq!(set.images.len(), 1);
        assert_eq!(set.relevant_index, 1);
    }

    #[test]
    fn pool_exhaustion_is_an_error() {
        let item = text_item("q1", 4, 1);
        match build_rag_probe(&item, &pool(2), 3, 5) {
            Err(Error::TooFewEntries { needed: 3, have: 2 }) => {}
            other => panic!("expected TooFewEntries, got {other:?}"),
        }
    }

    #[test]
    fn own_image_excluded_from_distractors() {
        let item = text_item("q1", 4, 1);
        let mut p = pool(3);
        // Poison the pool with the item's own image; it must not count.
        p.push(PoolImage {
            source_id: "dup".into(),
            atom: item.anchor.clone().unwrap(),
        });
        match build_rag_probe(&item, &p, 4, 5) {
            Err(Error::TooFewEntries { needed: 4, have: 3 }) => {}
            other => panic!("expected TooFewEntries, got {other:?}"),
        }
    }

    #[test]
    fn rerun_is_identical() {
        let item = text_item("q1", 4, 3);
        let p = pool(12);
        let a = build_rag_probe(&item, &p, 3, 42).unwrap();
        let b = build_rag_probe(&item, &p, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = build_rag_probe(&item, &p, 3, 43).unwrap();
        assert_ne!(a, c);
    }
}
