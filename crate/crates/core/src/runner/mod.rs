//! Experiment orchestration: expand probes into comparative groups, schedule
//! model calls with caching and resumability, and persist trial records.
//!
//! A bounded worker pool drives trials concurrently; the store serializes
//! appends through a single writer; all scoring happens after the run on the
//! immutable store.

mod store;

pub use store::{
    write_atomic, CachedOutcome, FileMeta, ResponseCache, TrialRecord, TrialStore, VariantKey,
    SCHEMA_VERSION,
};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::client::{
    render_prompt, render_video_prompt, render_with_demonstrations, AnswerMode, AnswerParser,
    BiasProfile, ChatClient, Demonstration, ModelEndpoint, Prompt,
};
use crate::error::{Error, ErrorClass, Result};
use crate::hash::sha256_hex;
use crate::ingest::{option_labels, ProbeItem, VideoProbe};
use crate::variants::{
    apply_ordering, enumerate_orderings, place_keyframes, place_rag_image, variant_set,
    KeyframePlacement, VariantStyle,
};

/// What kind of comparative groups a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SwapAudit,
    OrderingSweep,
    KeyframePlacement,
    RagPlacement,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ExperimentKind::SwapAudit => "swap_audit",
            ExperimentKind::OrderingSweep => "ordering_sweep",
            ExperimentKind::KeyframePlacement => "keyframe_placement",
            ExperimentKind::RagPlacement => "rag_placement",
        };
        f.write_str(s)
    }
}

/// Exactly one model drives a run: a wire endpoint or a simulated profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Endpoint(ModelEndpoint),
    Profile(BiasProfile),
}

impl ModelSource {
    /// Identifier folded into cache keys.
    pub fn model_id(&self) -> String {
        match self {
            ModelSource::Endpoint(ep) => ep.model_id(),
            ModelSource::Profile(p) => format!(
                "sim:{}",
                &sha256_hex(
                    serde_json::to_string(p)
                        .expect("profile to json")
                        .as_bytes()
                )[..16]
            ),
        }
    }
}

/// Everything a run needs besides the probes themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub model: ModelSource,
    pub seed: u64,
    pub parallelism: usize,
    /// Response cache directory; None keeps the cache in memory only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Trial store path; None keeps the store in memory only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "default_template")]
    pub template: String,
    /// Frames attached per video trial.
    #[serde(default = "default_frame_samples")]
    pub frame_samples: usize,
    #[serde(default)]
    pub variant_style: VariantStyle,
}

fn default_template() -> String {
    crate::client::DEFAULT_TEMPLATE.to_string()
}

fn default_frame_samples() -> usize {
    15
}

impl RunConfig {
    /// In-memory simulated run; the workhorse for tests and acceptance
    /// checks.
    pub fn simulated(kind: ExperimentKind, profile: BiasProfile, seed: u64) -> Self {
        RunConfig {
            kind,
            model: ModelSource::Profile(profile),
            seed,
            parallelism: 1,
            cache_dir: None,
            output: None,
            template: default_template(),
            frame_samples: default_frame_samples(),
            variant_style: VariantStyle::default(),
        }
    }

    /// Digest of the canonical config serialization; embedded in every
    /// artifact the run writes.
    pub fn digest(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config to json")
                .as_bytes(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        match &self.model {
            ModelSource::Endpoint(ep) => ep.validate(),
            ModelSource::Profile(p) => p.validate(),
        }
    }
}

/// One scheduled model call.
#[derive(Debug, Clone)]
struct TrialTask {
    parent_id: String,
    key: VariantKey,
    trial_id: String,
    prompt: Prompt,
    labels: Vec<String>,
    /// 0-based index of the correct label.
    correct_label_idx: usize,
    answer_mode: AnswerMode,
    /// 1-based position of the important content; indexes the profile's
    /// hit-rate vector in simulated runs.
    bias_position: usize,
}

impl TrialTask {
    fn cache_key(&self, model_id: &str, decoding_tag: &str) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(model_id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(decoding_tag.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&self.prompt.canonical_bytes());
        sha256_hex(&bytes)
    }
}

/// Run the swap audit: every probe expands into its M position variants, and
/// each variant is executed once (cache hits skipped) and recorded under its
/// position tag.
pub fn run_swap_audit(probes: &[ProbeItem], config: &RunConfig) -> Result<TrialStore> {
    if config.kind != ExperimentKind::SwapAudit {
        return Err(Error::Config(format!(
            "run_swap_audit called with kind {}",
            config.kind
        )));
    }
    let mut tasks = Vec::new();
    for probe in probes {
        let set = variant_set(probe, config.variant_style)?;
        let m = probe.option_count();
        let labels = option_labels(m);
        for (i, variant) in set.variants.iter().enumerate() {
            let k = i + 1;
            tasks.push(TrialTask {
                parent_id: probe.id.clone(),
                key: VariantKey::Position { k: k as u32 },
                trial_id: variant.id.clone(),
                prompt: render_prompt(variant, &config.template)?,
                labels: labels.clone(),
                correct_label_idx: k - 1,
                answer_mode: AnswerMode::Label,
                bias_position: k,
            });
        }
    }
    execute(tasks, config)
}

/// Run the full ordering sweep and score each ordering.
///
/// Returns the per-ordering accuracy vector indexed by lexicographic rank,
/// along with the underlying store. A simulated model keys its randomness on
/// the evaluation probe alone, so it has no demonstration effect by
/// construction and yields identical scores for every ordering.
pub fn run_ordering_sweep(
    demonstrations: &[Demonstration],
    evals: &[ProbeItem],
    config: &RunConfig,
) -> Result<(Vec<f64>, TrialStore)> {
    if config.kind != ExperimentKind::OrderingSweep {
        return Err(Error::Config(format!(
            "run_ordering_sweep called with kind {}",
            config.kind
        )));
    }
    if evals.is_empty() {
        return Err(Error::Config("no evaluation probes".into()));
    }
    let orderings = enumerate_orderings(demonstrations.len())?;
    let mut tasks = Vec::new();
    for ordering in &orderings {
        let block = apply_ordering(demonstrations, ordering)?;
        for probe in evals {
            probe.validate()?;
            let labels = option_labels(probe.option_count());
            tasks.push(TrialTask {
                parent_id: probe.id.clone(),
                key: VariantKey::Ordering {
                    rank: ordering.rank,
                },
                trial_id: format!("sweep:{}", probe.id),
                prompt: render_with_demonstrations(&block, probe, &config.template)?,
                labels,
                correct_label_idx: probe.correct_index - 1,
                answer_mode: AnswerMode::Label,
                bias_position: probe.correct_index,
            });
        }
    }
    let store = execute(tasks, config)?;

    let mut correct = vec![0usize; orderings.len()];
    for record in store.records() {
        if let VariantKey::Ordering { rank } = record.key {
            if record.correct {
                correct[rank as usize] += 1;
            }
        }
    }
    let scores = correct
        .into_iter()
        .map(|c| c as f64 / evals.len() as f64)
        .collect();
    Ok((scores, store))
}

/// Probe source for a placement run.
pub enum PlacementProbes<'a> {
    /// Each video probe runs once per front/middle/back key-frame placement.
    Keyframe(&'a [VideoProbe]),
    /// Each RAG probe runs once per relevant-image position 1..=K.
    Rag(&'a [ProbeItem]),
}

/// Run a placement experiment: one trial per probe per placement, with the
/// question and answer identical across a probe's group.
pub fn run_placement(source: PlacementProbes<'_>, config: &RunConfig) -> Result<TrialStore> {
    let yes_no: Vec<String> = vec!["Yes".into(), "No".into()];
    let mut tasks = Vec::new();
    match source {
        PlacementProbes::Keyframe(probes) => {
            if config.kind != ExperimentKind::KeyframePlacement {
                return Err(Error::Config(format!(
                    "keyframe placement needs kind keyframe_placement, got {}",
                    config.kind
                )));
            }
            for probe in probes {
                probe.manifest.validate()?;
                for placement in KeyframePlacement::ALL {
                    let placed = place_keyframes(&probe.manifest, placement);
                    tasks.push(TrialTask {
                        parent_id: probe.id.clone(),
                        key: VariantKey::Placement {
                            tag: placement.tag().to_string(),
                            position: placement.position() as u32,
                        },
                        trial_id: format!("{}::{}", probe.id, placement.tag()),
                        prompt: render_video_prompt(
                            &placed,
                            &probe.question,
                            config.frame_samples,
                            &config.template,
                        )?,
                        labels: yes_no.clone(),
                        correct_label_idx: 0,
                        answer_mode: AnswerMode::YesNo,
                        bias_position: placement.position(),
                    });
                }
            }
        }
        PlacementProbes::Rag(probes) => {
            if config.kind != ExperimentKind::RagPlacement {
                return Err(Error::Config(format!(
                    "rag placement needs kind rag_placement, got {}",
                    config.kind
                )));
            }
            for probe in probes {
                probe.validate()?;
                let set_size = probe
                    .rag_images
                    .as_ref()
                    .map(|r| r.images.len())
                    .unwrap_or(0);
                let labels = option_labels(probe.option_count());
                for position in 1..=set_size {
                    let placed = place_rag_image(probe, position)?;
                    tasks.push(TrialTask {
                        parent_id: probe.id.clone(),
                        key: VariantKey::Placement {
                            tag: format!("pos{position}"),
                            position: position as u32,
                        },
                        trial_id: format!("{}::pos{position}", probe.id),
                        prompt: render_prompt(&placed, &config.template)?,
                        labels: labels.clone(),
                        correct_label_idx: probe.correct_index - 1,
                        answer_mode: AnswerMode::Label,
                        bias_position: position,
                    });
                }
            }
        }
    }
    execute(tasks, config)
}

/// Outcome of one model call before it becomes a record.
struct CallOutcome {
    raw: Option<String>,
    error_class: Option<ErrorClass>,
    attempts: u32,
    latency_ms: u64,
    cache_hit: bool,
}

fn call_model(
    task: &TrialTask,
    config: &RunConfig,
    client: Option<&ChatClient>,
) -> CallOutcome {
    match &config.model {
        ModelSource::Profile(profile) => {
            let raw = profile.respond(
                &task.trial_id,
                task.bias_position,
                &task.labels,
                task.correct_label_idx,
                config.seed,
            );
            CallOutcome {
                raw: Some(raw),
                error_class: None,
                attempts: 0,
                latency_ms: 0,
                cache_hit: false,
            }
        }
        ModelSource::Endpoint(_) => {
            let client = client.expect("endpoint runs build a client");
            let start = Instant::now();
            match client.query(&task.prompt) {
                Ok(resp) => CallOutcome {
                    raw: Some(resp.text),
                    error_class: None,
                    attempts: resp.attempts,
                    latency_ms: start.elapsed().as_millis() as u64,
                    cache_hit: false,
                },
                Err(failure) => CallOutcome {
                    raw: None,
                    error_class: Some(failure.class),
                    attempts: failure.attempts,
                    latency_ms: start.elapsed().as_millis() as u64,
                    cache_hit: false,
                },
            }
        }
    }
}

fn build_record(task: &TrialTask, cache_key: String, outcome: CallOutcome) -> TrialRecord {
    let parser = AnswerParser::new(&task.labels, task.answer_mode);
    let pick = outcome.raw.as_deref().and_then(|raw| parser.parse(raw));
    let pick_position = pick
        .as_deref()
        .and_then(|p| task.labels.iter().position(|l| l == p))
        .map(|i| (i + 1) as u32);
    let correct_label = &task.labels[task.correct_label_idx];
    let correct = pick.as_deref() == Some(correct_label.as_str());
    TrialRecord {
        schema_version: SCHEMA_VERSION,
        parent_id: task.parent_id.clone(),
        key: task.key.clone(),
        trial_id: task.trial_id.clone(),
        cache_key,
        m: task.labels.len() as u32,
        correct_position: (task.correct_label_idx + 1) as u32,
        raw_response: outcome.raw,
        pick,
        pick_position,
        correct,
        error_class: outcome.error_class,
        attempts: outcome.attempts,
        latency_ms: outcome.latency_ms,
        cache_hit: outcome.cache_hit,
    }
}

/// Execute tasks through the cache and worker pool, appending records in
/// task order through the single writer.
fn execute(tasks: Vec<TrialTask>, config: &RunConfig) -> Result<TrialStore> {
    config.validate()?;
    if let ModelSource::Profile(profile) = &config.model {
        // Shape check up front so simulation never sees a bad position.
        for task in &tasks {
            if task.bias_position > profile.hit_rate.len() {
                return Err(Error::Config(format!(
                    "profile hit_rate has {} entries but trial {} needs position {}",
                    profile.hit_rate.len(),
                    task.trial_id,
                    task.bias_position
                )));
            }
        }
    }

    let meta = FileMeta::new(&config.kind.to_string(), &config.digest(), config.seed);
    let mut store = match &config.output {
        Some(path) => TrialStore::open_or_create(path, meta)?,
        None => TrialStore::in_memory(meta),
    };
    let mut cache = match &config.cache_dir {
        Some(dir) => ResponseCache::open(&dir.join("responses.jsonl"))?,
        None => ResponseCache::ephemeral(),
    };

    let model_id = config.model.model_id();
    let decoding_tag = match &config.model {
        ModelSource::Endpoint(ep) => serde_json::to_string(&ep.decoding)?,
        ModelSource::Profile(_) => format!("seed={}", config.seed),
    };

    let client = match &config.model {
        ModelSource::Endpoint(ep) => Some(ChatClient::new(ep.clone())?),
        ModelSource::Profile(_) => None,
    };

    // Resolve resume hits and cache hits up front; only genuinely pending
    // tasks go to the pool.
    let mut pending: Vec<(usize, TrialTask, String)> = Vec::new();
    let mut prefilled: Vec<(usize, TrialRecord)> = Vec::new();
    for (idx, task) in tasks.into_iter().enumerate() {
        if store.has_trial(&task.parent_id, &task.key) {
            continue;
        }
        let cache_key = task.cache_key(&model_id, &decoding_tag);
        if let Some(hit) = cache.get(&cache_key) {
            let outcome = CallOutcome {
                raw: hit.raw_response.clone(),
                error_class: hit.error_class,
                attempts: 0,
                latency_ms: 0,
                cache_hit: true,
            };
            prefilled.push((idx, build_record(&task, cache_key, outcome)));
        } else {
            pending.push((idx, task, cache_key));
        }
    }

    let mut results: Vec<(usize, TrialRecord, Option<CachedOutcome>)> = Vec::new();
    if !pending.is_empty() {
        let workers = config.parallelism.min(pending.len()).max(1);
        if workers == 1 {
            for (idx, task, cache_key) in &pending {
                let outcome = call_model(task, config, client.as_ref());
                let cached = CachedOutcome {
                    cache_key: cache_key.clone(),
                    raw_response: outcome.raw.clone(),
                    error_class: outcome.error_class,
                };
                results.push((*idx, build_record(task, cache_key.clone(), outcome), Some(cached)));
            }
        } else {
            let pending = Arc::new(pending);
            let cursor = AtomicUsize::new(0);
            let (tx, rx) = mpsc::channel();
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    let tx = tx.clone();
                    let pending = Arc::clone(&pending);
                    let cursor = &cursor;
                    let client = client.as_ref();
                    scope.spawn(move || loop {
                        let i = cursor.fetch_add(1, AtomicOrdering::SeqCst);
                        if i >= pending.len() {
                            break;
                        }
                        let (idx, task, cache_key) = &pending[i];
                        let outcome = call_model(task, config, client);
                        let cached = CachedOutcome {
                            cache_key: cache_key.clone(),
                            raw_response: outcome.raw.clone(),
                            error_class: outcome.error_class,
                        };
                        let record = build_record(task, cache_key.clone(), outcome);
                        if tx.send((*idx, record, Some(cached))).is_err() {
                            break;
                        }
                    });
                }
                drop(tx);
                while let Ok(item) = rx.recv() {
                    results.push(item);
                }
            });
        }
    }

    // Single writer appends everything in task order so equal runs produce
    // identical files regardless of worker interleaving.
    results.extend(prefilled.into_iter().map(|(i, r)| (i, r, None)));
    results.sort_by_key(|(i, _, _)| *i);
    for (_, record, cached) in results {
        if let Some(outcome) = cached {
            cache.put(outcome)?;
        }
        store.append(record)?;
    }
    Ok(store)
}
