//! CSV and SVG report emission. Output bytes depend only on the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::RunManifest;
use super::stats::{box_stats, BoxStats, QUARTILE_METHOD};
use super::ExperimentError;
use crate::scoring::ScoreTriplet;

pub const SCORES_CSV: &str = "scores.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const MEANS_CSV: &str = "means.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Clip,
    Blip,
    Pac,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Clip, Metric::Blip, Metric::Pac];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Clip => "clip",
            Metric::Blip => "blip",
            Metric::Pac => "pac",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Clip => "CLIP",
            Metric::Blip => "BLIP",
            Metric::Pac => "PAC",
        }
    }

    pub fn of(self, t: &ScoreTriplet) -> f64 {
        match self {
            Metric::Clip => t.clip_pct,
            Metric::Blip => t.blip_pct,
            Metric::Pac => t.pac_pct,
        }
    }

    pub fn svg_name(self) -> String {
        format!("{}_boxplot.svg", self.as_str())
    }
}

/// Scores grouped by model label, in grid model order. Failed cells are
/// left out: they count in the manifest but carry no data.
pub fn samples_by_model(manifest: &RunManifest, metric: Metric) -> Vec<(String, Vec<f64>)> {
    manifest
        .model_order()
        .into_iter()
        .map(|model| {
            let values = manifest
                .cells
                .iter()
                .filter(|c| c.is_complete() && c.model == model)
                .flat_map(|c| c.triplets.iter().map(|t| metric.of(t)))
                .collect();
            (model, values)
        })
        .collect()
}

/// Mean score per (scene, model); `None` marks a group without triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansTable {
    pub metric: Metric,
    pub scenes: Vec<String>,
    pub models: Vec<String>,
    /// `values[scene][model]`.
    pub values: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl MeansTable {
    pub fn get(&self, scene: &str, model: &str) -> Option<f64> {
        let s = self.scenes.iter().position(|x| x == scene)?;
        let m = self.models.iter().position(|x| x == model)?;
        self.values[s][m]
    }
}

pub fn per_scene_model_means(manifest: &RunManifest) -> MeansTable {
    per_scene_model_means_of(manifest, Metric::Clip)
}

pub fn per_scene_model_means_of(manifest: &RunManifest, metric: Metric) -> MeansTable {
    let scenes = manifest.scene_order();
    let models = manifest.model_order();
    let mut values = vec![vec![None; models.len()]; scenes.len()];
    let mut counts = vec![vec![0usize; models.len()]; scenes.len()];
    for (si, scene) in scenes.iter().enumerate() {
        for (mi, model) in models.iter().enumerate() {
            let mut sum = 0.0;
            let mut n = 0usize;
            for c in manifest
                .cells
                .iter()
                .filter(|c| c.is_complete() && &c.scene == scene && &c.model == model)
            {
                for t in &c.triplets {
                    sum += metric.of(t);
                    n += 1;
                }
            }
            counts[si][mi] = n;
            if n > 0 {
                values[si][mi] = Some(sum / n as f64);
            }
        }
    }
    MeansTable {
        metric,
        scenes,
        models,
        values,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub scores_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub means_csv: PathBuf,
    pub svgs: Vec<PathBuf>,
}

impl ReportFiles {
    pub fn all(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.scores_csv, &self.summary_csv, &self.means_csv];
        v.extend(self.svgs.iter().map(|p| p.as_path()));
        v
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn render_scores(manifest: &RunManifest, path: &Path) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = csv_err(path);
    w.write_record(["scene", "model", "iteration", "asset_id", "clip_pct", "blip_pct", "pac_pct"])
        .map_err(&e)?;
    for c in manifest.cells.iter().filter(|c| c.is_complete()) {
        for t in &c.triplets {
            w.write_record([
                c.scene.clone(),
                c.model.clone(),
                c.iteration.to_string(),
                t.asset_id.clone(),
                t.clip_pct.to_string(),
                t.blip_pct.to_string(),
                t.pac_pct.to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.into_inner().map_err(|err| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(err.to_string()),
    })
}

fn render_summary(stats: &BTreeMap<Metric, Vec<(String, BoxStats)>>, path: &Path) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = csv_err(path);
    w.write_record([
        "metric",
        "model",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
        "iqr",
        "lower_whisker",
        "upper_whisker",
        "outlier_count",
        "outliers",
        "method",
    ])
    .map_err(&e)?;
    for metric in Metric::ALL {
        for (model, s) in stats.get(&metric).into_iter().flatten() {
            let outliers = s.outliers.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([
                metric.as_str().to_string(),
                model.clone(),
                s.n.to_string(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
                s.mean.to_string(),
                s.iqr.to_string(),
                s.lower_whisker.to_string(),
                s.upper_whisker.to_string(),
                s.outliers.len().to_string(),
                outliers,
                QUARTILE_METHOD.to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.into_inner().map_err(|err| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(err.to_string()),
    })
}

fn render_means(manifest: &RunManifest, path: &Path) -> Result<Vec<u8>, ExperimentError> {
    let tables: Vec<MeansTable> = Metric::ALL.iter().map(|m| per_scene_model_means_of(manifest, *m)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = csv_err(path);
    w.write_record(["scene", "model", "n", "clip_mean_pct", "blip_mean_pct", "pac_mean_pct"])
        .map_err(&e)?;
    let base = &tables[0];
    for (si, scene) in base.scenes.iter().enumerate() {
        for (mi, model) in base.models.iter().enumerate() {
            if base.counts[si][mi] == 0 {
                continue;
            }
            w.write_record([
                scene.clone(),
                model.clone(),
                base.counts[si][mi].to_string(),
                opt(tables[0].values[si][mi]),
                opt(tables[1].values[si][mi]),
                opt(tables[2].values[si][mi]),
            ])
            .map_err(&e)?;
        }
    }
    w.into_inner().map_err(|err| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(err.to_string()),
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Box plot, one box per model, mean drawn as a green diamond.
pub fn render_boxplot_svg(metric: Metric, stats: &[(String, BoxStats)]) -> String {
    const SLOT: f64 = 110.0;
    const LEFT: f64 = 70.0;
    const TOP: f64 = 50.0;
    const PLOT_H: f64 = 320.0;
    const BOX_W: f64 = 50.0;
    let width = LEFT + SLOT * stats.len() as f64 + 30.0;
    let height = TOP + PLOT_H + 70.0;

    let mut lo = stats.iter().map(|(_, s)| s.min).fold(f64::INFINITY, f64::min);
    let mut hi = stats.iter().map(|(_, s)| s.max).fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        lo = 0.0;
        hi = 100.0;
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let y = |v: f64| TOP + PLOT_H - (v - lo) / (hi - lo) * PLOT_H;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{} score per model (mean in green)</text>"#,
        width / 2.0,
        metric.title()
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.1}" y1="{TOP:.1}" x2="{LEFT:.1}" y2="{:.1}" stroke="black"/>"#,
        TOP + PLOT_H
    );
    for k in 0..=5 {
        let v = lo + (hi - lo) * k as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{yy:.2}" x2="{:.1}" y2="{yy:.2}" stroke="#dddddd"/>"##,
            LEFT,
            width - 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{} score (%)</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0,
        metric.title()
    );
    for (i, (model, b)) in stats.iter().enumerate() {
        let cx = LEFT + SLOT * i as f64 + SLOT / 2.0;
        let (l, r) = (cx - BOX_W / 2.0, cx + BOX_W / 2.0);
        let _ = writeln!(s, r#"<g class="model" data-model="{}">"#, xml_escape(model));
        for (a, bb) in [(b.lower_whisker, b.q1), (b.q3, b.upper_whisker)] {
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.2}" x2="{cx:.1}" y2="{:.2}" stroke="black" stroke-dasharray="4 2"/>"#,
                y(a),
                y(bb)
            );
        }
        for w in [b.lower_whisker, b.upper_whisker] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="black"/>"#,
                cx - BOX_W / 4.0,
                y(w),
                cx + BOX_W / 4.0,
                y(w)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{l:.1}" y="{:.2}" width="{BOX_W:.1}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
            y(b.q3),
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{l:.1}" y1="{:.2}" x2="{r:.1}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            y(b.median),
            y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.1}" cy="{:.2}" r="3" fill="none" stroke="black"/>"#,
                y(*o)
            );
        }
        let my = y(b.mean);
        let _ = writeln!(
            s,
            r#"<path d="M {cx:.1} {:.2} L {:.1} {my:.2} L {cx:.1} {:.2} L {:.1} {my:.2} Z" fill="green"/>"#,
            my - 5.0,
            cx + 5.0,
            my + 5.0,
            cx - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + PLOT_H + 20.0,
            xml_escape(model)
        );
        let _ = writeln!(
            s,
            r##"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="#555555">n={}</text>"##,
            TOP + PLOT_H + 36.0,
            b.n
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    std::fs::write(path, bytes).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `scores.csv`, `summary.csv`, `means.csv` and one box plot per
/// metric. With no scored triplets the CSVs hold headers only and no plots
/// are written. Stale plots from an earlier emit are removed.
pub fn emit_reports(manifest: &RunManifest, out_dir: &Path) -> Result<ReportFiles, ExperimentError> {
    manifest.check_conservation()?;
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut stats: BTreeMap<Metric, Vec<(String, BoxStats)>> = BTreeMap::new();
    for metric in Metric::ALL {
        let mut per_model = Vec::new();
        for (model, values) in samples_by_model(manifest, metric) {
            if !values.is_empty() {
                per_model.push((model, box_stats(&values)?));
            }
        }
        stats.insert(metric, per_model);
    }

    let files = ReportFiles {
        scores_csv: out_dir.join(SCORES_CSV),
        summary_csv: out_dir.join(SUMMARY_CSV),
        means_csv: out_dir.join(MEANS_CSV),
        svgs: Vec::new(),
    };
    write(&files.scores_csv, &render_scores(manifest, &files.scores_csv)?)?;
    write(&files.summary_csv, &render_summary(&stats, &files.summary_csv)?)?;
    write(&files.means_csv, &render_means(manifest, &files.means_csv)?)?;

    let mut files = files;
    for metric in Metric::ALL {
        let path = out_dir.join(metric.svg_name());
        let per_model = &stats[&metric];
        if per_model.is_empty() {
            if path.exists() {
                std::fs::remove_file(&path).map_err(|source| ExperimentError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            continue;
        }
        write(&path, render_boxplot_svg(metric, per_model).as_bytes())?;
        files.svgs.push(path);
    }
    Ok(files)
}
