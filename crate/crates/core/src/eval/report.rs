// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::UncertainStats;
use crate::cma::{layer_role_score, AIEMatrix, CircuitGraph, MetricRow, PathEdgeScore};

/// Share of heads per layer averaged into a layer score.
pub const LAYER_PCT: f64 = 0.15;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plot-data" | "plot_data" => Ok(ReportFormat::PlotData),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Everything a report is built from, each list sorted by source file name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub matrices: Vec<AIEMatrix>,
    pub edges: Vec<(String, Vec<PathEdgeScore>)>,
    pub circuits: Vec<CircuitGraph>,
    pub uncertain: Vec<(String, UncertainStats)>,
    pub metrics: Vec<MetricRow>,
}

fn parse_err(path: &Path, message: impl ToString) -> ReportError {
    ReportError::Parse { path: path.to_path_buf(), message: message.to_string() }
}

/// Reads score, edge, circuit and uncertainty JSON files and metrics CSV
/// files from `dir`. Run manifests and unrecognized JSON are ignored.
pub fn load_artifacts(dir: &Path) -> Result<Artifacts, ReportError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.sort();
    let mut a = Artifacts::default();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if name.ends_with(".manifest.json") {
            continue;
        }
        if name.ends_with(".csv") {
            let mut r = csv::Reader::from_path(&path)?;
            if r.headers()?.iter().eq(["config", "dataset", "metric", "value", "n", "seed"]) {
                for row in r.deserialize() {
                    a.metrics.push(row?);
                }
            }
            continue;
        }
        if !name.ends_with(".json") {
            continue;
        }
        let v: Value = serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| parse_err(&path, e))?;
        let stem = name.trim_end_matches(".json").to_string();
        if v.get("scores").is_some() && v.get("role").is_some() {
            a.matrices.push(serde_json::from_value(v).map_err(|e| parse_err(&path, e))?);
        } else if v.get("nodes").is_some() && v.get("edges").is_some() {
            a.circuits.push(serde_json::from_value(v).map_err(|e| parse_err(&path, e))?);
        } else if v.get("roles").is_some() && v.get("threshold").is_some() {
            a.uncertain.push((stem, serde_json::from_value(v).map_err(|e| parse_err(&path, e))?));
        } else if v.as_array().is_some_and(|xs| xs.iter().all(|x| x.get("emit").is_some())) {
            a.edges.push((stem, serde_json::from_value(v).map_err(|e| parse_err(&path, e))?));
        }
    }
    a.matrices.sort_by(|x, y| (x.role, &x.model_id).cmp(&(y.role, &y.model_id)));
    Ok(a)
}

/// Long-format plot row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub chart_id: String,
    pub series: String,
    pub x: String,
    pub y: f64,
}

fn row(chart_id: impl Into<String>, series: impl Into<String>, x: impl ToString, y: f64) -> PlotRow {
    PlotRow { chart_id: chart_id.into(), series: series.into(), x: x.to_string(), y }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |b, (i, &x)| if x > xs[b] { i } else { b })
}

/// Heatmaps, layer-score lines with their peak layer, circuit edge bars,
/// ablation bars and uncertain-token bars and histograms.
pub fn plot_rows(a: &Artifacts) -> Vec<PlotRow> {
    let mut out = Vec::new();
    for m in &a.matrices {
        for (l, scores) in m.scores.iter().enumerate() {
            for (h, &s) in scores.iter().enumerate() {
                out.push(row(format!("aie_heatmap/{}", m.role), format!("L{l}"), h, s));
            }
        }
    }
    for m in &a.matrices {
        let ls = layer_role_score(m, LAYER_PCT);
        for (l, &s) in ls.iter().enumerate() {
            out.push(row("layer_scores", m.role.name(), l, s));
        }
        let peak = argmax(&ls);
        out.push(row("layer_scores_peak", m.role.name(), peak, ls[peak]));
    }
    for (src, edges) in &a.edges {
        for e in edges {
            out.push(row(format!("path_edges/{src}"), e.kind.map_or("all".to_string(), |k| k.to_string()), format!("{}->{}", e.emit, e.rec), e.score));
        }
    }
    for (i, g) in a.circuits.iter().enumerate() {
        for n in &g.nodes {
            out.push(row(format!("circuit_nodes/{i}"), n.roles.iter().map(|r| r.name()).collect::<Vec<_>>().join("+"), n.head, n.roles.len() as f64));
        }
        for e in &g.edges {
            out.push(row(format!("circuit_edges/{i}"), e.kind.to_string(), format!("{}->{}", e.edge.emit, e.edge.rec), e.edge.score));
        }
    }
    for m in &a.metrics {
        out.push(row(format!("ablation/{}", m.metric), m.dataset.clone(), &m.config, m.value));
    }
    for (src, u) in &a.uncertain {
        for r in &u.roles {
            let rate = if r.total == 0 { 0.0 } else { r.uncertain as f64 / r.total as f64 };
            out.push(row(format!("uncertain_rate/{src}"), "rate", r.role.name(), rate));
            out.push(row(format!("uncertain_count/{src}"), "uncertain", r.role.name(), r.uncertain as f64));
            for (b, &c) in r.histogram.iter().enumerate() {
                out.push(row(format!("uncertain_hist/{src}"), r.role.name(), format!("{:.2}", b as f64 * 0.05), c as f64));
            }
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    artifacts: &'a Artifacts,
    layer_scores: Vec<LayerScores>,
}

#[derive(Serialize)]
struct LayerScores {
    role: String,
    scores: Vec<f64>,
    peak_layer: usize,
}

/// Writes the report files for `format` into `out` and returns their paths.
pub fn emit_report(a: &Artifacts, format: ReportFormat, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::PlotData => {
            let p = out.join("plot_data.csv");
            write_csv(&p, &plot_rows(a))?;
            written.push(p);
        }
        ReportFormat::Json => {
            let layer_scores = a
                .matrices
                .iter()
                .map(|m| {
                    let scores = layer_role_score(m, LAYER_PCT);
                    LayerScores { role: m.role.to_string(), peak_layer: argmax(&scores), scores }
                })
                .collect();
            let p = out.join("report.json");
            let json = serde_json::to_string_pretty(&JsonReport { artifacts: a, layer_scores }).map_err(io::Error::other)?;
            fs::write(&p, json)?;
            written.push(p);
        }
        ReportFormat::Csv => {
            if !a.matrices.is_empty() {
                let p = out.join("aie_heatmap.csv");
                let mut w = csv::Writer::from_path(&p)?;
                let j = a.matrices.iter().map(|m| m.n_heads).max().unwrap_or(0);
                let mut header = vec!["role".to_string(), "layer".to_string()];
                header.extend((0..j).map(|h| format!("head_{h}")));
                w.write_record(&header)?;
                for m in &a.matrices {
                    for (l, scores) in m.scores.iter().enumerate() {
                        let mut rec = vec![m.role.to_string(), l.to_string()];
                        rec.extend((0..j).map(|h| scores.get(h).map(|s| s.to_string()).unwrap_or_default()));
                        w.write_record(&rec)?;
                    }
                }
                w.flush()?;
                written.push(p);

                let p = out.join("layer_scores.csv");
                let mut w = csv::Writer::from_path(&p)?;
                w.write_record(["role", "layer", "score", "peak"])?;
                for m in &a.matrices {
                    let ls = layer_role_score(m, LAYER_PCT);
                    let peak = argmax(&ls);
                    for (l, s) in ls.iter().enumerate() {
                        w.write_record([m.role.to_string(), l.to_string(), s.to_string(), (l == peak).to_string()])?;
                    }
                }
                w.flush()?;
                written.push(p);
            }
            if !a.edges.is_empty() || !a.circuits.is_empty() {
                let p = out.join("edges.csv");
                let mut w = csv::Writer::from_path(&p)?;
                w.write_record(["source", "kind", "emit", "rec", "score", "n_pairs"])?;
                for (src, edges) in &a.edges {
                    for e in edges {
                        let kind = e.kind.map(|k| k.to_string()).unwrap_or_default();
                        w.write_record([src.clone(), kind, e.emit.to_string(), e.rec.to_string(), e.score.to_string(), e.n_pairs.to_string()])?;
                    }
                }
                for (i, g) in a.circuits.iter().enumerate() {
                    for e in &g.edges {
                        let src = format!("circuit_{i}");
                        let (emit, rec) = (e.edge.emit.to_string(), e.edge.rec.to_string());
                        w.write_record([src, e.kind.to_string(), emit, rec, e.edge.score.to_string(), e.edge.n_pairs.to_string()])?;
                    }
                }
                w.flush()?;
                written.push(p);
            }
            if !a.metrics.is_empty() {
                let p = out.join("ablation.csv");
                write_csv(&p, &a.metrics)?;
                written.push(p);
            }
            if !a.uncertain.is_empty() {
                let p = out.join("uncertain.csv");
                let mut w = csv::Writer::from_path(&p)?;
                w.write_record(["source", "role", "uncertain", "total", "threshold"])?;
                for (src, u) in &a.uncertain {
                    for r in &u.roles {
                        w.write_record([src.clone(), r.role.name().to_string(), r.uncertain.to_string(), r.total.to_string(), u.threshold.to_string()])?;
                    }
                }
                w.flush()?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cma::HeadRole;

    fn artifacts() -> Artifacts {
        let m = AIEMatrix {
            model_id: "toy".into(),
            role: HeadRole::SelectRule,
            n_layers: 3,
            n_heads: 2,
            scores: vec![vec![0.0, 0.1], vec![0.3, 0.2], vec![0.05, 0.0]],
            n_pairs: 4,
            skipped: 0,
        };
        Artifacts { matrices: vec![m], ..Artifacts::default() }
    }

    #[test]
    fn heatmap_and_peak_layer() {
        let rows = plot_rows(&artifacts());
        assert_eq!(rows.iter().filter(|r| r.chart_id == "aie_heatmap/SelectRule").count(), 6);
        let peak = rows.iter().find(|r| r.chart_id == "layer_scores_peak").unwrap();
        assert_eq!((peak.x.as_str(), peak.y), ("1", 0.3));
    }

    #[test]
    fn csv_heatmap_shape_and_determinism() {
        let a = artifacts();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(&a, ReportFormat::Csv, d1.path()).unwrap();
        emit_report(&a, ReportFormat::Csv, d2.path()).unwrap();
        let t = fs::read_to_string(d1.path().join("aie_heatmap.csv")).unwrap();
        assert_eq!(t.lines().next(), Some("role,layer,head_0,head_1"));
        assert_eq!(t.lines().count(), 4);
        assert_eq!(t, fs::read_to_string(d2.path().join("aie_heatmap.csv")).unwrap());
    }

    #[test]
    fn artifacts_round_trip_through_a_directory() {
        let a = artifacts();
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("select_rule.json"), serde_json::to_string(&a.matrices[0]).unwrap()).unwrap();
        fs::write(dir.path().join("x.manifest.json"), "{}").unwrap();
        assert_eq!(load_artifacts(dir.path()).unwrap(), a);
    }
}
