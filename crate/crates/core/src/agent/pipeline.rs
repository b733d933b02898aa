//! Keyword → aggregate → caption pipeline for one building.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{Agent, AgentSpec, Caption, KeywordSet};
use super::ledger::{SharedLedger, TokenLedger};
use super::message::ImageDetail;
use super::prices::PriceTable;
use super::prompts::PromptTemplates;
use super::provider::{ProviderFactory, Sampling};
use super::AgentError;
use crate::store::{ImageAsset, ImageKind};

/// Model assignment per pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageModels {
    pub keyword_model: String,
    pub aggregate_model: String,
    pub caption_model: String,
}

impl StageModels {
    pub fn uniform(model: impl Into<String>) -> Self {
        let m = model.into();
        StageModels {
            keyword_model: m.clone(),
            aggregate_model: m.clone(),
            caption_model: m,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no images to caption")]
    NoImages,
    #[error("keyword extraction failed for image {index} ({asset_id}): {source}")]
    KeywordStage {
        index: usize,
        asset_id: String,
        #[source]
        source: AgentError,
    },
    #[error("keyword aggregation failed: {0}")]
    Aggregate(#[source] AgentError),
    #[error("caption generation failed: {0}")]
    Caption(#[source] AgentError),
    #[error("agent setup failed: {0}")]
    Setup(#[source] AgentError),
}

impl PipelineError {
    /// The asset whose keyword extraction failed, if that is what happened.
    pub fn failed_asset(&self) -> Option<&str> {
        match self {
            PipelineError::KeywordStage { asset_id, .. } => Some(asset_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionOutcome {
    pub caption: Caption,
    pub keyword_sets: Vec<KeywordSet>,
    pub aggregate: KeywordSet,
    pub ledger: TokenLedger,
    pub provider_calls: u64,
}

/// Street maps are stored but not captioned unless asked for.
pub fn select_caption_inputs(assets: &[ImageAsset], include_street_maps: bool) -> Vec<ImageAsset> {
    assets
        .iter()
        .filter(|a| include_street_maps || a.kind != ImageKind::StreetMap)
        .cloned()
        .collect()
}

pub struct CaptionPipeline {
    pub prices: Arc<PriceTable>,
    pub factory: Arc<dyn ProviderFactory>,
    pub templates: Arc<PromptTemplates>,
    /// Upper bound on concurrently running keyword agents.
    pub parallelism: usize,
    pub detail: ImageDetail,
    pub sampling: Sampling,
}

impl CaptionPipeline {
    pub fn new(prices: Arc<PriceTable>, factory: Arc<dyn ProviderFactory>) -> Self {
        CaptionPipeline {
            prices,
            factory,
            templates: Arc::new(PromptTemplates::default()),
            parallelism: 8,
            detail: ImageDetail::High,
            sampling: Sampling::new(),
        }
    }

    fn agent(&self, id: String, model: &str, system: &str, ledger: &Arc<SharedLedger>) -> Result<Agent, AgentError> {
        let mut spec = AgentSpec::new(id, model, system);
        spec.sampling = self.sampling.clone();
        spec.image_detail = self.detail;
        Ok(Agent::new(spec, &self.prices, self.factory.as_ref(), ledger.clone())?.with_templates(self.templates.clone()))
    }

    /// Runs one keyword agent per image, then one aggregator and one
    /// captioner. Issues exactly `images.len() + 2` provider calls on
    /// success; any keyword failure stops the run before aggregation.
    pub fn caption_building(
        &self,
        images: &[ImageAsset],
        models: &StageModels,
        run_tag: &str,
        iteration: u32,
    ) -> Result<CaptionOutcome, PipelineError> {
        self.caption_building_into(images, models, run_tag, iteration, &Arc::new(SharedLedger::default()))
    }

    /// As [`caption_building`](Self::caption_building), booking usage into
    /// `ledger` as calls complete, so spend is visible even when a later
    /// stage fails. The outcome's ledger is a snapshot of `ledger`.
    pub fn caption_building_into(
        &self,
        images: &[ImageAsset],
        models: &StageModels,
        run_tag: &str,
        iteration: u32,
        ledger: &Arc<SharedLedger>,
    ) -> Result<CaptionOutcome, PipelineError> {
        if images.is_empty() {
            return Err(PipelineError::NoImages);
        }
        let calls = AtomicUsize::new(0);

        let mut keyword_agents = Vec::with_capacity(images.len());
        for i in 0..images.len() {
            let id = format!("{run_tag}/keyword-{i:02}");
            keyword_agents.push(Mutex::new(
                self.agent(id, &models.keyword_model, &self.templates.keyword_system, ledger)
                    .map_err(PipelineError::Setup)?,
            ));
        }

        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let results: Vec<Mutex<Option<Result<KeywordSet, AgentError>>>> =
            (0..images.len()).map(|_| Mutex::new(None)).collect();
        let workers = self.parallelism.clamp(1, images.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= images.len() {
                        break;
                    }
                    let mut agent = keyword_agents[i].lock().expect("agent lock");
                    let r = agent.extract_keywords(&images[i]);
                    calls.fetch_add(agent.calls() as usize, Ordering::SeqCst);
                    if r.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    *results[i].lock().expect("result lock") = Some(r);
                });
            }
        });

        let mut keyword_sets = Vec::with_capacity(images.len());
        for (i, slot) in results.into_iter().enumerate() {
            match slot.into_inner().expect("result lock") {
                Some(Ok(set)) => keyword_sets.push(set),
                Some(Err(source)) => {
                    return Err(PipelineError::KeywordStage {
                        index: i,
                        asset_id: images[i].asset_id.clone(),
                        source,
                    })
                }
                None => {}
            }
        }
        if keyword_sets.len() != images.len() {
            return Err(PipelineError::Aggregate(AgentError::Precondition(
                "keyword stage incomplete".into(),
            )));
        }

        let mut aggregator = self
            .agent(
                format!("{run_tag}/aggregator"),
                &models.aggregate_model,
                &self.templates.aggregate_system,
                ledger,
            )
            .map_err(PipelineError::Setup)?;
        let aggregate = aggregator.aggregate_keywords(&keyword_sets).map_err(PipelineError::Aggregate)?;

        let mut captioner = self
            .agent(
                format!("{run_tag}/captioner"),
                &models.caption_model,
                &self.templates.caption_system,
                ledger,
            )
            .map_err(PipelineError::Setup)?;
        let caption = captioner.compose_caption(&aggregate, iteration).map_err(PipelineError::Caption)?;

        let provider_calls = calls.load(Ordering::SeqCst) as u64 + aggregator.calls() + captioner.calls();
        Ok(CaptionOutcome {
            caption,
            keyword_sets,
            aggregate,
            ledger: ledger.snapshot(),
            provider_calls,
        })
    }
}
