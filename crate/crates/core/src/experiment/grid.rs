//! The scenes × iterations × models grid and its run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::agent::{
    estimate_cost, Caption, CaptionPipeline, ChatCompletion, ChatProvider, ChatRequest, KeywordSet, PriceTable,
    ProviderFactory, SharedLedger, StageModels, TokenLedger, AgentError,
};
use crate::maps::BuildingQuery;
use crate::scoring::{score_caption, ScoreFailure, ScoreTriplet, ScoringProviders};
use crate::store::{sha256_hex, ImageAsset};

pub const MANIFEST_FORMAT: &str = "dba-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub query: BuildingQuery,
    pub images: Vec<ImageAsset>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub label: String,
    #[serde(flatten)]
    pub models: StageModels,
}

impl ModelConfig {
    pub fn uniform(model: &str) -> Self {
        ModelConfig {
            label: model.to_string(),
            models: StageModels::uniform(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentGrid {
    scenes: Vec<SceneSpec>,
    iterations: u32,
    models: Vec<ModelConfig>,
}

impl ExperimentGrid {
    pub fn new(scenes: Vec<SceneSpec>, iterations: u32, models: Vec<ModelConfig>) -> Result<Self, ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidGrid(m.to_string()));
        if scenes.is_empty() {
            return bad("grid has no scenes");
        }
        if models.is_empty() {
            return bad("grid has no models");
        }
        if iterations == 0 {
            return bad("iterations must be at least 1");
        }
        for (i, s) in scenes.iter().enumerate() {
            if s.name.trim().is_empty() {
                return bad("scene name is empty");
            }
            if scenes[..i].iter().any(|o| o.name == s.name) {
                return Err(ExperimentError::InvalidGrid(format!("duplicate scene {}", s.name)));
            }
        }
        for (i, m) in models.iter().enumerate() {
            if m.label.trim().is_empty() {
                return bad("model label is empty");
            }
            if models[..i].iter().any(|o| o.label == m.label) {
                return Err(ExperimentError::InvalidGrid(format!("duplicate model label {}", m.label)));
            }
        }
        Ok(ExperimentGrid {
            scenes,
            iterations,
            models,
        })
    }

    pub fn scenes(&self) -> &[SceneSpec] {
        &self.scenes
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn models(&self) -> &[ModelConfig] {
        &self.models
    }

    pub fn cell_count(&self) -> usize {
        self.scenes.len() * self.models.len() * self.iterations as usize
    }

    /// Calls a fully successful run issues: one per image plus two per cell.
    pub fn expected_calls(&self) -> u64 {
        let per_iteration: u64 = self.scenes.iter().map(|s| s.images.len() as u64 + 2).sum();
        per_iteration * self.models.len() as u64 * self.iterations as u64
    }

    pub fn expected_triplets(&self) -> u64 {
        let per_iteration: u64 = self.scenes.iter().map(|s| s.images.len() as u64).sum();
        per_iteration * self.models.len() as u64 * self.iterations as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEcho {
    pub name: String,
    pub query: BuildingQuery,
    pub asset_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEcho {
    pub scenes: Vec<SceneEcho>,
    pub iterations: u32,
    pub models: Vec<ModelConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub scene: String,
    pub model: String,
    pub iteration: u32,
    #[serde(flatten)]
    pub status: CellStatus,
    pub caption: Option<Caption>,
    pub keyword_sets: Vec<KeywordSet>,
    pub aggregate: Option<KeywordSet>,
    pub triplets: Vec<ScoreTriplet>,
    pub score_failures: Vec<ScoreFailure>,
    pub ledger: TokenLedger,
    pub provider_calls: u64,
    pub wall_clock_ms: u64,
}

impl CellRecord {
    pub fn is_complete(&self) -> bool {
        self.status == CellStatus::Complete
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub cells: u64,
    pub complete_cells: u64,
    pub failed_cells: u64,
    pub provider_calls: u64,
    pub triplets: u64,
    pub score_failures: u64,
    pub triplets_per_model: BTreeMap<String, u64>,
    pub ledger: TokenLedger,
    #[serde(with = "rust_decimal::serde::str")]
    pub cost_usd: Decimal,
}

impl RunTotals {
    /// Folds cell records; the cost is priced from the summed ledger.
    pub fn from_cells(cells: &[CellRecord], prices: &PriceTable) -> Result<Self, ExperimentError> {
        let mut t = Self::fold(cells);
        t.cost_usd = estimate_cost(&t.ledger, prices).map_err(ExperimentError::Cost)?;
        Ok(t)
    }

    fn fold(cells: &[CellRecord]) -> Self {
        let mut t = RunTotals {
            cells: cells.len() as u64,
            complete_cells: 0,
            failed_cells: 0,
            provider_calls: 0,
            triplets: 0,
            score_failures: 0,
            triplets_per_model: BTreeMap::new(),
            ledger: TokenLedger::default(),
            cost_usd: Decimal::ZERO,
        };
        for c in cells {
            if c.is_complete() {
                t.complete_cells += 1;
            } else {
                t.failed_cells += 1;
            }
            t.provider_calls += c.provider_calls;
            t.triplets += c.triplets.len() as u64;
            t.score_failures += c.score_failures.len() as u64;
            *t.triplets_per_model.entry(c.model.clone()).or_default() += c.triplets.len() as u64;
            t.ledger += &c.ledger;
        }
        t
    }

    fn same_counts(&self, other: &RunTotals) -> bool {
        self.cells == other.cells
            && self.complete_cells == other.complete_cells
            && self.failed_cells == other.failed_cells
            && self.provider_calls == other.provider_calls
            && self.triplets == other.triplets
            && self.score_failures == other.score_failures
            && self.triplets_per_model == other.triplets_per_model
            && self.ledger == other.ledger
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub created_at: String,
    pub grid: GridEcho,
    /// Ordered by scene, then model, then iteration, in grid order.
    pub cells: Vec<CellRecord>,
    pub totals: RunTotals,
    /// Name → SHA-256 of every input that shaped the run.
    pub artifact_hashes: BTreeMap<String, String>,
    pub complete: bool,
}

impl RunManifest {
    /// Checks that the stored totals equal a fresh fold over the cells.
    pub fn check_conservation(&self) -> Result<(), ExperimentError> {
        let fresh = RunTotals::fold(&self.cells);
        if !self.totals.same_counts(&fresh) {
            return Err(ExperimentError::Conservation(format!(
                "stored totals (calls {}, triplets {}, cells {}) differ from the cell sum (calls {}, triplets {}, cells {})",
                self.totals.provider_calls,
                self.totals.triplets,
                self.totals.cells,
                fresh.provider_calls,
                fresh.triplets,
                fresh.cells
            )));
        }
        if self.complete != (fresh.failed_cells == 0) {
            return Err(ExperimentError::Conservation("completeness flag disagrees with cell statuses".into()));
        }
        Ok(())
    }

    pub fn scene_order(&self) -> Vec<String> {
        self.grid.scenes.iter().map(|s| s.name.clone()).collect()
    }

    pub fn model_order(&self) -> Vec<String> {
        self.grid.models.iter().map(|m| m.label.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| ExperimentError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(ExperimentError::Manifest {
                path: path.to_path_buf(),
                reason: format!("unsupported format {} v{}", m.format, m.version),
            });
        }
        Ok(m)
    }

    /// Writes `<dir>/manifest.json` atomically.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join("manifest.json");
        let tmp = dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|source| ExperimentError::Io {
            path: tmp.clone(),
            source,
        })?;
        std::fs::rename(&tmp, &path).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    /// Saves under `<runs_root>/<UTC timestamp>/manifest.json`.
    pub fn save_in_runs(&self, runs_root: &Path) -> Result<PathBuf, ExperimentError> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let mut dir = runs_root.join(&stamp);
        let mut n = 1;
        while dir.join("manifest.json").exists() {
            dir = runs_root.join(format!("{stamp}-{n}"));
            n += 1;
        }
        self.save(&dir)
    }
}

/// Counts every `complete` call its clients make, failed ones included.
struct CountingFactory {
    inner: Arc<dyn ProviderFactory>,
    calls: Arc<AtomicU64>,
}

struct Counting {
    inner: Box<dyn ChatProvider>,
    calls: Arc<AtomicU64>,
}

impl ChatProvider for Counting {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

impl ProviderFactory for CountingFactory {
    fn client_for(&self, agent_id: &str, model_id: &str) -> Result<Box<dyn ChatProvider>, AgentError> {
        Ok(Box::new(Counting {
            inner: self.inner.client_for(agent_id, model_id)?,
            calls: self.calls.clone(),
        }))
    }
}

type CellCallback = dyn Fn(&CellRecord) + Send + Sync;

/// Executes every grid cell: caption the scene's images, then score the
/// caption against each of them.
pub struct GridRunner {
    pub pipeline: CaptionPipeline,
    pub scoring: ScoringProviders,
    /// Upper bound on cells running at once.
    pub parallelism: usize,
    /// When set, cells not yet started are recorded as cancelled.
    pub cancel: Option<Arc<AtomicBool>>,
    pub on_cell: Option<Box<CellCallback>>,
    /// Extra named input hashes echoed into the manifest.
    pub extra_hashes: BTreeMap<String, String>,
}

impl GridRunner {
    pub fn new(pipeline: CaptionPipeline, scoring: ScoringProviders) -> Self {
        GridRunner {
            pipeline,
            scoring,
            parallelism: 4,
            cancel: None,
            on_cell: None,
            extra_hashes: BTreeMap::new(),
        }
    }

    fn run_cell(&self, scene: &SceneSpec, model: &ModelConfig, iteration: u32) -> CellRecord {
        let started = Instant::now();
        let calls = Arc::new(AtomicU64::new(0));
        let ledger = Arc::new(SharedLedger::default());
        let pipeline = CaptionPipeline {
            prices: self.pipeline.prices.clone(),
            factory: Arc::new(CountingFactory {
                inner: self.pipeline.factory.clone(),
                calls: calls.clone(),
            }),
            templates: self.pipeline.templates.clone(),
            parallelism: self.pipeline.parallelism,
            detail: self.pipeline.detail,
            sampling: self.pipeline.sampling.clone(),
        };
        let mut record = CellRecord {
            scene: scene.name.clone(),
            model: model.label.clone(),
            iteration,
            status: CellStatus::Complete,
            caption: None,
            keyword_sets: Vec::new(),
            aggregate: None,
            triplets: Vec::new(),
            score_failures: Vec::new(),
            ledger: TokenLedger::default(),
            provider_calls: 0,
            wall_clock_ms: 0,
        };
        let tag = format!("{}/{}/it{iteration}", scene.name, model.label);
        match pipeline.caption_building_into(&scene.images, &model.models, &tag, iteration, &ledger) {
            Ok(outcome) => {
                match score_caption(&outcome.caption.text, &scene.images, &self.scoring) {
                    Ok(scores) => {
                        record.triplets = scores.triplets;
                        record.score_failures = scores.failures;
                        if !record.score_failures.is_empty() {
                            record.status = CellStatus::Failed {
                                reason: format!("{} image(s) could not be scored", record.score_failures.len()),
                            };
                        }
                    }
                    Err(e) => {
                        record.status = CellStatus::Failed {
                            reason: format!("scoring: {e}"),
                        }
                    }
                }
                record.caption = Some(outcome.caption);
                record.keyword_sets = outcome.keyword_sets;
                record.aggregate = Some(outcome.aggregate);
            }
            Err(e) => {
                record.status = CellStatus::Failed { reason: e.to_string() };
            }
        }
        record.ledger = ledger.snapshot();
        record.provider_calls = calls.load(Ordering::SeqCst);
        record.wall_clock_ms = started.elapsed().as_millis() as u64;
        record
    }

    /// Runs the whole grid. Cell failures are recorded and the run goes on.
    pub fn run_grid(&self, grid: &ExperimentGrid) -> Result<RunManifest, ExperimentError> {
        let mut keys = Vec::with_capacity(grid.cell_count());
        for (si, _) in grid.scenes.iter().enumerate() {
            for (mi, _) in grid.models.iter().enumerate() {
                for it in 0..grid.iterations {
                    keys.push((si, mi, it));
                }
            }
        }
        let slots: Vec<Mutex<Option<CellRecord>>> = keys.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.parallelism.clamp(1, keys.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(si, mi, it)) = keys.get(k) else { break };
                    let (scene, model) = (&grid.scenes[si], &grid.models[mi]);
                    let record = if self.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
                        cancelled(scene, model, it)
                    } else {
                        self.run_cell(scene, model, it)
                    };
                    if let Some(cb) = &self.on_cell {
                        cb(&record);
                    }
                    *slots[k].lock().expect("slot lock") = Some(record);
                });
            }
        });
        let cells: Vec<CellRecord> = slots
            .into_iter()
            .zip(&keys)
            .map(|(slot, &(si, mi, it))| {
                slot.into_inner()
                    .expect("slot lock")
                    .unwrap_or_else(|| cancelled(&grid.scenes[si], &grid.models[mi], it))
            })
            .collect();

        let totals = RunTotals::from_cells(&cells, &self.pipeline.prices)?;
        let mut artifact_hashes = self.extra_hashes.clone();
        artifact_hashes.insert(
            "price_table".into(),
            sha256_hex(&serde_json::to_vec(self.pipeline.prices.as_ref()).expect("price table serializes")),
        );
        artifact_hashes.insert("prompt_templates".into(), templates_hash(&self.pipeline));
        for scene in &grid.scenes {
            for a in &scene.images {
                artifact_hashes.insert(format!("image:{}/{}", scene.name, a.asset_id), a.asset_id.clone());
            }
        }
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            grid: GridEcho {
                scenes: grid
                    .scenes
                    .iter()
                    .map(|s| SceneEcho {
                        name: s.name.clone(),
                        query: s.query.clone(),
                        asset_ids: s.images.iter().map(|a| a.asset_id.clone()).collect(),
                    })
                    .collect(),
                iterations: grid.iterations,
                models: grid.models.clone(),
            },
            complete: totals.failed_cells == 0,
            cells,
            totals,
            artifact_hashes,
        };
        manifest.check_conservation()?;
        Ok(manifest)
    }
}

fn cancelled(scene: &SceneSpec, model: &ModelConfig, iteration: u32) -> CellRecord {
    CellRecord {
        scene: scene.name.clone(),
        model: model.label.clone(),
        iteration,
        status: CellStatus::Failed {
            reason: "cancelled before start".into(),
        },
        caption: None,
        keyword_sets: Vec::new(),
        aggregate: None,
        triplets: Vec::new(),
        score_failures: Vec::new(),
        ledger: TokenLedger::default(),
        provider_calls: 0,
        wall_clock_ms: 0,
    }
}

fn templates_hash(p: &CaptionPipeline) -> String {
    let t = &p.templates;
    let joined = [
        &t.keyword_system,
        &t.keyword_request,
        &t.aggregate_system,
        &t.aggregate_request,
        &t.caption_system,
        &t.caption_request,
        &t.meta_prompt,
    ]
    .iter()
    .map(|s| s.as_str())
    .collect::<Vec<_>>()
    .join("\u{0}");
    sha256_hex(joined.as_bytes())
}
