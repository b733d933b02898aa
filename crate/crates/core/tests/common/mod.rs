#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use dba_core::agent::mock::synthetic_factory;
use dba_core::agent::{CaptionPipeline, StageModels};
use dba_core::cassette::ReplayTransport;
use dba_core::experiment::{synthetic_scene_images, GridRunner, ModelConfig, SceneSpec};
use dba_core::http::{CanonicalRequest, HttpRequest, HttpResponse, Transport, TransportError};
use dba_core::scoring::ScoringProviders;
use dba_core::{AssetStore, BuildingQuery, ExperimentGrid, PriceTable};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// Replays a cassette and remembers the order requests arrived in.
pub struct OrderedReplay {
    inner: ReplayTransport,
    log: Mutex<Vec<CanonicalRequest>>,
}

impl OrderedReplay {
    pub fn open(rel: &str) -> Arc<Self> {
        Arc::new(OrderedReplay {
            inner: ReplayTransport::from_file(&fixture(rel)).expect("cassette loads"),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn paths(&self) -> Vec<String> {
        self.log.lock().unwrap().iter().map(|c| c.path.clone()).collect()
    }

    pub fn served(&self) -> usize {
        self.inner.served()
    }
}

impl Transport for OrderedReplay {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().unwrap().push(request.canonical());
        self.inner.send(request)
    }
}

pub const GRID_MODELS: [&str; 4] = ["chatgpt4o-latest", "gpt-4o-mini", "deepseek-chat", "deepseek-reasoner"];

/// Keywords always come from a vision model; the label's model aggregates
/// and captions.
pub fn model_config(label: &str) -> ModelConfig {
    ModelConfig {
        label: label.to_string(),
        models: StageModels {
            keyword_model: "gpt-4o".to_string(),
            aggregate_model: label.to_string(),
            caption_model: label.to_string(),
        },
    }
}

pub fn mock_grid(store: &AssetStore, scenes: usize, iterations: u32, models: &[&str], images: usize) -> ExperimentGrid {
    let scenes = (0..scenes)
        .map(|s| {
            let name = format!("scene-{s}");
            SceneSpec {
                images: synthetic_scene_images(&name, images, store).unwrap(),
                query: BuildingQuery::place_name(&format!("Building {s}")).unwrap(),
                name,
            }
        })
        .collect();
    ExperimentGrid::new(scenes, iterations, models.iter().map(|m| model_config(m)).collect()).unwrap()
}

pub fn mock_runner(parallelism: usize) -> GridRunner {
    let pipeline = CaptionPipeline::new(Arc::new(PriceTable::builtin()), synthetic_factory());
    let mut runner = GridRunner::new(pipeline, ScoringProviders::hash_mock(512));
    runner.parallelism = parallelism;
    runner
}
