//! Comparative groups: position-swap variant sets, full ordering
//! enumerations, key-frame and retrieved-image placements, and
//! importance-based reorderings.
//!
//! Every function here is pure over immutable values; callers can fan work
//! out across threads without coordination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::ContentHash;
use crate::ingest::{FrameManifest, ProbeItem, ProbeMode};

/// How a variant set moves the correct content through the slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariantStyle {
    /// Pairwise exchange: variant k swaps the correct slot's content with
    /// slot k's content and leaves everything else in place.
    #[default]
    Swap,
    /// Cyclic shift: variant k rotates all contents so the correct one lands
    /// in slot k. Matches the circular-evaluation convention.
    Rotate,
}

/// The M position variants of one probe. Variant k (1-based) has its correct
/// content in slot k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSet {
    pub parent_id: String,
    pub variants: Vec<ProbeItem>,
    /// placement_of_correct[k-1] == k for every variant; kept explicit so
    /// serialized sets are self-describing.
    pub placement_of_correct: Vec<usize>,
}

/// Pairwise-exchange variant set (the default style).
pub fn swap_variants(item: &ProbeItem) -> Result<VariantSet> {
    variant_set(item, VariantStyle::Swap)
}

/// Build the M position variants of `item` in the given style.
///
/// Variant ids are `{parent}::k{k}`; stem, anchor, and labels are unchanged.
/// When k equals the parent's correct index the variant is content-identical
/// to the parent.
pub fn variant_set(item: &ProbeItem, style: VariantStyle) -> Result<VariantSet> {
    item.validate()?;
    let m = item.option_count();
    let c = item.correct_index;
    let mut variants = Vec::with_capacity(m);
    for k in 1..=m {
        let mut v = item.clone();
        v.id = format!("{}::k{}", item.id, k);
        match style {
            VariantStyle::Swap => {
                if k != c {
                    let (a, b) = (c - 1, k - 1);
                    let tmp = v.slots[a].content.clone();
                    v.slots[a].content = v.slots[b].content.clone();
                    v.slots[b].content = tmp;
                }
            }
            VariantStyle::Rotate => {
                // Rotate contents so the correct one lands in slot k.
                let shift = (k + m - c) % m;
                let contents: Vec<_> =
                    item.slots.iter().map(|s| s.content.clone()).collect();
                for (i, slot) in v.slots.iter_mut().enumerate() {
                    slot.content = contents[(i + m - shift) % m].clone();
                }
            }
        }
        v.correct_index = k;
        v.validate()?;
        variants.push(v);
    }
    Ok(VariantSet {
        parent_id: item.id.clone(),
        variants,
        placement_of_correct: (1..=m).collect(),
    })
}

impl VariantSet {
    /// The content-hash multiset of a variant's slots, sorted.
    pub fn slot_hashes(item: &ProbeItem) -> Vec<ContentHash> {
        let mut hashes: Vec<_> = item
            .slots
            .iter()
            .map(|s| s.content.content_hash())
            .collect();
        hashes.sort();
        hashes
    }
}

/// A permutation of [1..n] with its rank in the lexicographic enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    /// 0-based permutation: output position j takes input element perm[j].
    pub perm: Vec<usize>,
    /// Rank in 0..n!-1, lexicographic.
    pub rank: u64,
}

pub const DEFAULT_ORDERING_CAP: usize = 8;

/// All n! orderings in lexicographic order, under the default cap of 8.
pub fn enumerate_orderings(n: usize) -> Result<Vec<Ordering>> {
    enumerate_orderings_with_cap(n, DEFAULT_ORDERING_CAP)
}

pub fn enumerate_orderings_with_cap(n: usize, cap: usize) -> Result<Vec<Ordering>> {
    if n == 0 {
        return Err(Error::InvalidArgument("ordering size must be >= 1".into()));
    }
    if n > cap {
        return Err(Error::OrderingCapExceeded { n, cap });
    }
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rank = 0u64;
    loop {
        out.push(Ordering {
            perm: perm.clone(),
            rank,
        });
        rank += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(out)
}

fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Reorder `items` by an ordering: output position j gets input element
/// `ordering.perm[j]`.
pub fn apply_ordering<T: Clone>(items: &[T], ordering: &Ordering) -> Result<Vec<T>> {
    if items.len() != ordering.perm.len() {
        return Err(Error::InvalidArgument(format!(
            "ordering size {} does not match list length {}",
            ordering.perm.len(),
            items.len()
        )));
    }
    Ok(ordering.perm.iter().map(|&i| items[i].clone()).collect())
}

/// Where the key-frame block goes inside a constructed video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframePlacement {
    Front,
    Middle,
    Back,
}

impl KeyframePlacement {
    pub const ALL: [KeyframePlacement; 3] = [
        KeyframePlacement::Front,
        KeyframePlacement::Middle,
        KeyframePlacement::Back,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            KeyframePlacement::Front => "front",
            KeyframePlacement::Middle => "middle",
            KeyframePlacement::Back => "back",
        }
    }

    /// 1-based position index used by the simulated model's hit-rate vector.
    pub fn position(self) -> usize {
        match self {
            KeyframePlacement::Front => 1,
            KeyframePlacement::Middle => 2,
            KeyframePlacement::Back => 3,
        }
    }
}

impl std::fmt::Display for KeyframePlacement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Move the key-frame block to the front, middle, or back of the manifest.
///
/// The block stays contiguous; non-key frames keep their relative order.
/// Middle offset is floor((total - key_len) / 2).
pub fn place_keyframes(manifest: &FrameManifest, placement: KeyframePlacement) -> FrameManifest {
    let total = manifest.frames.len();
    let key_len = manifest.key_len;
    let offset = match placement {
        KeyframePlacement::Front => 0,
        KeyframePlacement::Middle => (total - key_len) / 2,
        KeyframePlacement::Back => total - key_len,
    };
    let key: Vec<_> = manifest.frames[manifest.key_range()].to_vec();
    let rest: Vec<_> = manifest
        .frames
        .iter()
        .enumerate()
        .filter(|(i, _)| !manifest.key_range().contains(i))
        .map(|(_, f)| f.clone())
        .collect();
    let mut frames = Vec::with_capacity(total);
    frames.extend_from_slice(&rest[..offset]);
    frames.extend_from_slice(&key);
    frames.extend_from_slice(&rest[offset..]);
    FrameManifest {
        frames,
        fps: manifest.fps,
        key_start: offset,
        key_len,
        caption: manifest.caption.clone(),
    }
}

/// Move the question-relevant image to `position` (1-based) inside the RAG
/// image set; the other images keep their relative order.
pub fn place_rag_image(item: &ProbeItem, position: usize) -> Result<ProbeItem> {
    if item.mode != ProbeMode::RagPlacement {
        return Err(Error::InvalidProbe {
            id: item.id.clone(),
            reason: format!("place_rag_image needs mode rag_placement, got {}", item.mode),
        });
    }
    item.validate()?;
    let set = item.rag_images.as_ref().expect("validated above");
    if position < 1 || position > set.images.len() {
        return Err(Error::InvalidArgument(format!(
            "rag position {position} out of range 1..={}",
            set.images.len()
        )));
    }
    let mut images = set.images.clone();
    let relevant = images.remove(set.relevant_index - 1);
    images.insert(position - 1, relevant);
    let mut out = item.clone();
    out.rag_images = Some(crate::ingest::RagImageSet {
        images,
        relevant_index: position,
    });
    Ok(out)
}

/// Where important content should end up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceStrategy {
    /// Highest score first, descending after that.
    Begin,
    /// Highest score last, ascending before that.
    End,
    /// Scores dealt alternately to the two ends, starting at the end
    /// (rank 1 -> last, rank 2 -> first, rank 3 -> second-to-last, ...),
    /// leaving the lowest scores in the middle.
    BeginEnd,
}

/// Reorder `items` by per-item importance scores.
///
/// Ties keep original relative order: tied items occupy their assigned
/// positions left-to-right in input order, so uniform scores leave the list
/// unchanged under every strategy.
pub fn reorder_by_importance<T: Clone>(
    items: &[T],
    importance: &[f64],
    strategy: ImportanceStrategy,
) -> Result<Vec<T>> {
    if items.len() != importance.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} items",
            importance.len(),
            items.len()
        )));
    }
    if importance.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite importance score".into()));
    }
    let n = items.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    match strategy {
        ImportanceStrategy::Begin | ImportanceStrategy::End => {
            let mut idx: Vec<usize> = (0..n).collect();
            match strategy {
                // Stable sorts, so equal scores preserve input order.
                ImportanceStrategy::End => {
                    idx.sort_by(|&a, &b| importance[a].total_cmp(&importance[b]))
                }
                ImportanceStrategy::Begin => {
                    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]))
                }
                ImportanceStrategy::BeginEnd => unreachable!(),
            }
            Ok(idx.into_iter().map(|i| items[i].clone()).collect())
        }
        ImportanceStrategy::BeginEnd => {
            // Rank items by descending score (ties by input order), then deal
            // target positions end-first: last, first, second-to-last, ...
            let mut ranked: Vec<usize> = (0..n).collect();
            ranked.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
            let mut positions = Vec::with_capacity(n);
            let (mut lo, mut hi) = (0usize, n - 1);
            for r in 0..n {
                if r % 2 == 0 {
                    positions.push(hi);
                    hi = hi.saturating_sub(1);
                } else {
                    positions.push(lo);
                    lo += 1;
                }
            }
            // Within a tied score group, hand out that group's positions in
            // ascending order so tied items read left-to-right in input order.
            let mut assignment = vec![usize::MAX; n];
            let mut g = 0;
            while g < n {
                let mut h = g + 1;
                while h < n && importance[ranked[h]] == importance[ranked[g]] {
                    h += 1;
                }
                let mut group_positions: Vec<usize> = positions[g..h].to_vec();
                group_positions.sort_unstable();
                let mut group_items: Vec<usize> = ranked[g..h].to_vec();
                group_items.sort_unstable();
                for (item, pos) in group_items.into_iter().zip(group_positions) {
                    assignment[pos] = item;
                }
                g = h;
            }
            Ok(assignment.into_iter().map(|i| items[i].clone()).collect())
        }
    }
}
