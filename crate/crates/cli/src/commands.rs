use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use dba_core::agent::mock::synthetic_factory;
use dba_core::agent::{
    estimate_cost, select_caption_inputs, CaptionPipeline, HttpProviderFactory, ProviderFactory, StageModels,
};
use dba_core::experiment::{emit_reports, CellStatus, EmbeddingKind, ExperimentError, GridConfig, GridRunner};
use dba_core::http::{ResponseCache, RetryingTransport, Transport};
use dba_core::maps::{BundlePlan, MapKind, MapsClient};
use dba_core::orbit::{export_orbit_document, generate_orbit};
use dba_core::scoring::ScoringProviders;
use dba_core::store::{stage_directory, write_staging_index, Acquisition, StagedEntry};
use dba_core::{AssetStore, BuildingQuery, ImageAsset, OrbitSpec, RunManifest, ZoomLevel};
use serde::Serialize;

use crate::config::{CliConfig, Overrides};
use crate::net::{Net, NetMode};
use crate::{Cli, CliError, Command, QueryArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mode = match (&cli.replay, &cli.record, cli.mock) {
        (_, _, true) => NetMode::Mock,
        (Some(p), _, _) => NetMode::Replay(p.clone()),
        (_, Some(p), _) => NetMode::Record(p.clone()),
        _ => NetMode::Live,
    };
    let cfg = CliConfig::load(Overrides {
        config: cli.config.clone(),
        cache_dir: cli.cache_dir.clone(),
        asset_dir: cli.asset_dir.clone(),
        parallelism: cli.parallelism,
    })?;

    // Reports are pure file transforms; no transport or stores needed.
    if let Command::Report { run, out } = &cli.command {
        return report(run, out.as_deref());
    }

    cfg.ensure_dirs()?;
    let net = Net::open(mode)?;
    let ctx = Ctx {
        store: Arc::new(AssetStore::open(&cfg.asset_dir).context("cannot open asset store")?),
        cache: if cli.no_cache || net.is_mock() {
            None
        } else {
            Some(Arc::new(ResponseCache::on_disk(cfg.cache_dir.join("http")).context("cannot open response cache")?))
        },
        cfg,
        net,
    };

    let result = match cli.command {
        Command::Geocode(q) => geocode(&ctx, &q),
        Command::Fetch {
            query,
            zooms,
            roadmaps,
            orbit_count,
            orbit_radius,
            altitude,
            out,
        } => fetch(&ctx, &query, &zooms, roadmaps, orbit_count, orbit_radius, altitude, &out),
        Command::Caption {
            images,
            models,
            model,
            keyword_model,
            include_street_maps,
            out,
        } => {
            let stage_models = match models {
                Some(path) => load_stage_models(&path),
                None => Ok(StageModels {
                    keyword_model,
                    aggregate_model: model.clone(),
                    caption_model: model,
                }),
            };
            stage_models.and_then(|m| caption(&ctx, &images, &m, include_street_maps, out.as_deref()))
        }
        Command::Experiment { grid, runs, out } => experiment(&ctx, &grid, &runs, out.as_deref()),
        Command::Report { .. } => unreachable!("handled above"),
    };
    if let Some(path) = ctx.net.finish()? {
        eprintln!("cassette saved to {}", path.display());
    }
    result
}

struct Ctx {
    cfg: CliConfig,
    net: Net,
    store: Arc<AssetStore>,
    cache: Option<Arc<ResponseCache>>,
}

impl Ctx {
    fn maps(&self) -> Result<MapsClient, CliError> {
        if !self.net.is_offline() && self.cfg.maps_key.is_none() {
            return Err(CliError::Usage(format!(
                "{} is not set; use --mock or --replay to run offline",
                dba_core::maps::MAPS_API_KEY_ENV
            )));
        }
        let mut b = MapsClient::builder(self.net.transport.clone(), self.store.clone())
            .base_url(self.cfg.maps_base_url.clone())
            .api_key(self.cfg.maps_key.clone())
            .retry(if self.net.is_offline() {
                dba_core::http::RetryPolicy::immediate(1)
            } else {
                self.cfg.retry
            })
            .max_in_flight(self.cfg.parallelism);
        if let Some(c) = &self.cache {
            b = b.cache(c.clone());
        }
        Ok(b.build())
    }

    fn chat_factory(&self) -> Arc<dyn ProviderFactory> {
        if self.net.is_mock() {
            return synthetic_factory();
        }
        let transport: Arc<dyn Transport> = Arc::new(RetryingTransport::new(
            self.net.transport.clone(),
            self.cfg.retry,
            self.cfg.parallelism,
        ));
        Arc::new(
            HttpProviderFactory::new(transport, self.cfg.prices.clone(), Some(self.store.clone())).with_env_endpoints(),
        )
    }

    fn pipeline(&self) -> CaptionPipeline {
        let mut p = CaptionPipeline::new(self.cfg.prices.clone(), self.chat_factory());
        p.templates = self.cfg.templates.clone();
        p.parallelism = self.cfg.parallelism;
        p
    }
}

fn building_query(q: &QueryArgs) -> Result<BuildingQuery, CliError> {
    let parsed = if let Some(a) = &q.address {
        BuildingQuery::address(a)
    } else if let Some(p) = &q.place {
        BuildingQuery::place_name(p)
    } else if let Some(p) = &q.postal {
        BuildingQuery::postal_code(p)
    } else if let Some((lat, lng)) = q.latlng {
        BuildingQuery::coordinates(lat, lng)
    } else {
        return Err(CliError::Usage("one of --address, --place, --postal or --latlng is required".into()));
    };
    parsed.map_err(|e| CliError::Usage(e.to_string()))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).context("cannot serialize output")?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").context("cannot write to stdout")?;
    Ok(())
}

fn geocode(ctx: &Ctx, q: &QueryArgs) -> Result<(), CliError> {
    let query = building_query(q)?;
    let record = ctx
        .maps()?
        .geocode(&query)
        .map_err(|e| CliError::Runtime(anyhow!(e).context("geocoding failed")))?;
    eprintln!(
        "{} ({:.6}, {:.6}), {} entrance(s)",
        record.formatted_address,
        record.location.lat(),
        record.location.lng(),
        record.entrances.len()
    );
    print_json(&record)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn fetch(
    ctx: &Ctx,
    q: &QueryArgs,
    zooms: &str,
    roadmaps: bool,
    orbit_count: usize,
    orbit_radius: f64,
    altitude: f64,
    out: &Path,
) -> Result<(), CliError> {
    let query = building_query(q)?;
    let zooms = zooms
        .split(',')
        .map(|z| {
            let n: i64 = z
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--zooms expects comma-separated integers, got {zooms:?}")))?;
            ZoomLevel::new(n).map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if orbit_count == 0 {
        return Err(CliError::Usage("--orbit-count must be at least 1".into()));
    }
    let plan = if roadmaps {
        BundlePlan::per_zoom(&zooms)
    } else {
        BundlePlan::satellite_only(&zooms)
    };

    let bundle = ctx
        .maps()?
        .retrieve_building_bundle(&query, &plan)
        .map_err(|e| CliError::Runtime(anyhow!(e).context("bundle retrieval failed")))?;
    for call in bundle.failed_calls() {
        eprintln!("warning: {} failed: {}", call.endpoint, call.error.as_deref().unwrap_or("unknown error"));
    }

    let mut written: Vec<PathBuf> = Vec::new();
    let record_path = out.join("record.json");
    write_file(&record_path, serde_json::to_string_pretty(&bundle.record).context("record")?.as_bytes())?;
    written.push(record_path);
    let calls_path = out.join("calls.json");
    write_file(&calls_path, serde_json::to_string_pretty(&bundle.calls).context("calls")?.as_bytes())?;
    written.push(calls_path);

    let maps_dir = out.join("maps");
    let mut index = BTreeMap::new();
    for asset in &bundle.assets {
        let Acquisition::Map(req) = &asset.acquisition else { continue };
        let kind = match req.map_kind {
            MapKind::Satellite => "satellite",
            MapKind::Roadmap => "roadmap",
        };
        let name = format!("{kind}_z{}.{}", req.zoom, asset.media_type.extension());
        let bytes = ctx.store.read(&asset.asset_id).context("cannot read stored map")?;
        let path = maps_dir.join(&name);
        write_file(&path, &bytes)?;
        index.insert(
            name,
            StagedEntry {
                kind: asset.kind,
                acquisition: asset.acquisition.clone(),
            },
        );
        written.push(path);
    }
    if !index.is_empty() {
        write_staging_index(&maps_dir, &index).context("cannot write staging index")?;
    }

    let spec = OrbitSpec::new(bundle.record.location, orbit_count, orbit_radius, altitude);
    let poses = generate_orbit(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let orbit_path = out.join(format!("orbit_{orbit_count}.orbit.json"));
    write_file(&orbit_path, export_orbit_document(&poses).context("orbit document")?.as_bytes())?;
    written.push(orbit_path);

    eprintln!(
        "{}: {} map image(s), {} request(s), {} failed; orbit of {} poses",
        bundle.record.formatted_address,
        bundle.assets.len(),
        bundle.calls.len(),
        bundle.failed_calls().count(),
        poses.len()
    );
    let mut stdout = std::io::stdout().lock();
    for p in written {
        writeln!(stdout, "{}", p.display()).context("cannot write to stdout")?;
    }
    Ok(())
}

fn load_stage_models(path: &Path) -> Result<StageModels, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct CaptionFragment<'a> {
    images: Vec<&'a str>,
    models: &'a StageModels,
    outcome: &'a dba_core::agent::CaptionOutcome,
    #[serde(with = "rust_decimal_str")]
    cost_usd: rust_decimal::Decimal,
}

mod rust_decimal_str {
    pub fn serialize<S: serde::Serializer>(d: &rust_decimal::Decimal, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&d.to_string())
    }
}

fn display_name(asset: &ImageAsset) -> String {
    match &asset.acquisition {
        Acquisition::Imported { file_name } => format!("{file_name} ({})", &asset.asset_id[..12]),
        _ => asset.asset_id.clone(),
    }
}

fn caption(
    ctx: &Ctx,
    dir: &Path,
    models: &StageModels,
    include_street_maps: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("image directory {} does not exist", dir.display())));
    }
    for m in [&models.keyword_model, &models.aggregate_model, &models.caption_model] {
        ctx.cfg.prices.get(m).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let staged = stage_directory(dir, &ctx.store).with_context(|| format!("cannot stage {}", dir.display()))?;
    let images = select_caption_inputs(&staged, include_street_maps);
    if images.is_empty() {
        return Err(CliError::Runtime(anyhow!("no images to caption in {}", dir.display())));
    }
    eprintln!("captioning {} image(s) with {}", images.len(), models.caption_model);

    let outcome = ctx.pipeline().caption_building(&images, models, "caption", 0).map_err(|e| {
        let culprit = e
            .failed_asset()
            .and_then(|id| images.iter().find(|a| a.asset_id == id))
            .map(|a| format!(" (failed image: {})", display_name(a)))
            .unwrap_or_default();
        CliError::Runtime(anyhow!("caption pipeline failed{culprit}: {e}"))
    })?;
    let cost = estimate_cost(&outcome.ledger, &ctx.cfg.prices).context("cannot price the run")?;

    eprintln!("caption: {}", outcome.caption.text);
    eprintln!("keywords: {}", outcome.aggregate.keywords.join(", "));
    eprintln!("{} calls, cost {cost} USD", outcome.provider_calls);

    let fragment = CaptionFragment {
        images: images.iter().map(|a| a.asset_id.as_str()).collect(),
        models,
        outcome: &outcome,
        cost_usd: cost,
    };
    match out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&fragment).context("cannot serialize fragment")?;
            write_file(path, text.as_bytes())?;
            println!("{}", path.display());
            Ok(())
        }
        None => print_json(&fragment),
    }
}

fn experiment(ctx: &Ctx, grid_path: &Path, runs: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (grid_cfg, cfg_hash) = GridConfig::load(grid_path).map_err(|e| match e {
        ExperimentError::Io { .. } | ExperimentError::Config(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(anyhow!(other)),
    })?;
    let base = grid_path.parent().unwrap_or(Path::new("."));
    let grid = grid_cfg.stage(base, &ctx.store).map_err(|e| match e {
        ExperimentError::Config(_) | ExperimentError::InvalidGrid(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(anyhow!(other)),
    })?;
    for m in grid.models() {
        for id in [&m.models.keyword_model, &m.models.aggregate_model, &m.models.caption_model] {
            ctx.cfg
                .prices
                .get(id)
                .map_err(|e| CliError::Usage(format!("model {}: {e}", m.label)))?;
        }
    }

    let scoring = if ctx.net.is_mock() && grid_cfg.scoring.kind == EmbeddingKind::Remote {
        eprintln!("--mock: using hash embeddings instead of the remote scorer");
        let mut p = ScoringProviders::hash_mock(grid_cfg.scoring.mock_dim);
        p.pac_scale = grid_cfg.scoring.pac_scale;
        p
    } else {
        let transport: Option<Arc<dyn Transport>> = if ctx.net.is_mock() {
            None
        } else {
            Some(Arc::new(RetryingTransport::new(ctx.net.transport.clone(), ctx.cfg.retry, ctx.cfg.parallelism)))
        };
        grid_cfg
            .scoring_providers(base, transport, Some(ctx.store.clone()))
            .map_err(|e| CliError::Usage(e.to_string()))?
    };

    let total = grid.cell_count();
    eprintln!(
        "grid: {} scene(s) x {} model(s) x {} iteration(s) = {} cells, {} calls expected",
        grid.scenes().len(),
        grid.models().len(),
        grid.iterations(),
        total,
        grid.expected_calls()
    );

    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        // A second handler cannot be installed in one process; ignore that case.
        let _ = ctrlc::set_handler(move || {
            if !cancel.swap(true, Ordering::SeqCst) {
                eprintln!("interrupt: finishing running cells, then saving the manifest");
            }
        });
    }

    let done = Arc::new(AtomicUsize::new(0));
    let mut runner = GridRunner::new(ctx.pipeline(), scoring);
    runner.parallelism = grid_cfg.parallelism.min(ctx.cfg.parallelism).max(1);
    runner.cancel = Some(cancel.clone());
    runner.extra_hashes.insert("grid_config".into(), cfg_hash);
    let counter = done.clone();
    runner.on_cell = Some(Box::new(move |cell| {
        let k = counter.fetch_add(1, Ordering::SeqCst) + 1;
        let status = match &cell.status {
            CellStatus::Complete => "ok".to_string(),
            CellStatus::Failed { reason } => format!("FAILED: {reason}"),
        };
        eprintln!(
            "[{k}/{total}] {}/{}/it{}: {} calls, {} triplets, {status}",
            cell.scene,
            cell.model,
            cell.iteration,
            cell.provider_calls,
            cell.triplets.len()
        );
    }));

    let manifest = runner.run_grid(&grid).map_err(|e| CliError::Runtime(anyhow!(e)))?;
    let path = match out {
        Some(dir) => manifest.save(dir),
        None => manifest.save_in_runs(runs),
    }
    .map_err(|e| CliError::Runtime(anyhow!(e).context("cannot save manifest")))?;

    let t = &manifest.totals;
    eprintln!(
        "cells {} ({} complete, {} failed), provider calls {}, triplets {}, cost {} USD",
        t.cells, t.complete_cells, t.failed_cells, t.provider_calls, t.triplets, t.cost_usd
    );
    for (model, n) in &t.triplets_per_model {
        eprintln!("  {model}: {n} triplets");
    }
    println!("{}", path.display());
    if cancel.load(Ordering::SeqCst) {
        return Err(CliError::Runtime(anyhow!("interrupted; partial manifest saved to {}", path.display())));
    }
    if t.failed_cells > 0 {
        return Err(CliError::Runtime(anyhow!("{} of {} cells failed", t.failed_cells, t.cells)));
    }
    Ok(())
}

fn report(run: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (manifest_path, run_dir) = if run.is_dir() {
        (run.join("manifest.json"), run.to_path_buf())
    } else {
        (run.to_path_buf(), run.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    if !manifest_path.is_file() {
        return Err(CliError::Usage(format!("no manifest at {}", manifest_path.display())));
    }
    let manifest = RunManifest::load(&manifest_path).map_err(|e| CliError::Runtime(anyhow!(e)))?;
    manifest
        .check_conservation()
        .map_err(|e| CliError::Runtime(anyhow!(e)))?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("reports"));
    let files = emit_reports(&manifest, &out_dir).map_err(|e| CliError::Runtime(anyhow!(e)))?;
    eprintln!(
        "{} triplet(s) from {} cell(s); {} file(s) in {}",
        manifest.totals.triplets,
        manifest.cells.len(),
        files.all().len(),
        out_dir.display()
    );
    let mut stdout = std::io::stdout().lock();
    for p in files.all() {
        writeln!(stdout, "{}", p.display()).context("cannot write to stdout")?;
    }
    Ok(())
}
