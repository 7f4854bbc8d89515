// SPDX-License-Identifier: MIT OR Apache-2.0

//! Writes score and metric files into a directory and renders every report
//! format from it.

use std::fs;

use circuitlab::cma::{ablate_eval, aie, AblationConfig, AblationName, HeadRole, PositionMode};
use circuitlab::counterfactual::{generate_pairs, CorruptionType};
use circuitlab::eval::{emit_report, load_artifacts, ReportFormat};
use circuitlab::logic::GenConfig;
use circuitlab::promptgen::{synth_dataset, SynthConfig};
use circuitlab::toymodel::{ToyConfig, ToyModel};

fn main() {
    let dir = std::env::temp_dir().join("circuitlab-report-demo");
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();

    let model = ToyModel::new(ToyConfig::default());
    let pairs = generate_pairs(2, 0, CorruptionType::C3, 0, &GenConfig::default()).unwrap().pairs;
    let m = aie(&model, &pairs, PositionMode::PrecedingToken, HeadRole::SelectRule).unwrap();
    fs::write(dir.join("aie_c3.json"), serde_json::to_string(&m).unwrap()).unwrap();

    let records = synth_dataset(&SynthConfig::new(0, 2, 0)).unwrap();
    let metrics = ablate_eval(&model, &records, "k0", &AblationConfig::new(AblationName::Baseline), &Default::default()).unwrap();
    let mut w = csv::Writer::from_path(dir.join("metrics.csv")).unwrap();
    for row in metrics.rows() {
        w.serialize(row).unwrap();
    }
    w.flush().unwrap();

    let artifacts = load_artifacts(&dir).unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::PlotData] {
        for p in emit_report(&artifacts, format, &dir.join("out")).unwrap() {
            println!("{}", p.display());
        }
    }
    print!("{}", fs::read_to_string(dir.join("out/layer_scores.csv")).unwrap());
}
