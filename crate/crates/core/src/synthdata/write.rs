use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cohort_fields, Background, FieldSpec, LabelWeights, SynthCohort};
use crate::dataprep::ImageTensor;
use crate::error::{Error, Result};
use crate::tasks::SplitConfig;
use crate::vesselgraph::{self, write_pgm, ExtractConfig};

pub const MANIFEST_VERSION: u32 = 1;

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub n: usize,
    pub prevalence_target: f64,
    pub prevalence: f64,
    pub intercept: f64,
    pub weights: LabelWeights,
    pub missing_rate: f64,
    pub blur_sigma: f64,
    pub image_size: usize,
    pub split: SplitConfig,
    pub fields: Vec<FieldSpec>,
}

/// Pseudo-fundus RGB: a smooth orange-red background darkened where the
/// probability map is high.
pub fn render_raw(prob: &[f64], size: usize, bg: &Background) -> ImageTensor {
    let hw = size * size;
    let mut data = vec![0.0; 3 * hw];
    let base = [0.78, 0.36 + 0.1 * bg.tint, 0.16];
    let dark = [0.45, 0.6, 0.6];
    let c = (size as f64 - 1.0) / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            let wave: f64 = bg.waves.iter().map(|w| w[3] * (2.0 * std::f64::consts::PI * (w[0] * u + w[1] * v) + w[2]).cos()).sum();
            let r2 = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (c * c);
            let shade = (0.85 + 0.15 * wave) * (1.0 - 0.35 * r2.min(1.5));
            let i = y * size + x;
            for ch in 0..3 {
                data[ch * hw + i] = (base[ch] * shade * (1.0 - dark[ch] * prob[i])).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(3, size, size, data).expect("consistent dims")
}

fn to_gray(v: &[f64]) -> Vec<u8> {
    v.iter().map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Writes `cohort.csv`, `masks/`, `prob/`, `raw/`, `graphs/` and
/// `manifest.json` under `dir`. Every mask must yield a non-empty graph.
pub fn write_cohort(cohort: &SynthCohort, dir: &Path, extract: &ExtractConfig) -> Result<Manifest> {
    for sub in ["masks", "prob", "raw", "graphs"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let cfg = &cohort.config;
    cohort.subjects.par_iter().enumerate().try_for_each(|(i, s)| -> Result<()> {
        let size = s.mask.width();
        s.mask.write_pgm(&dir.join(format!("masks/{i:05}.pgm")))?;
        let prob = super::blur_mask(&s.mask, cfg.blur_sigma);
        write_pgm(&dir.join(format!("prob/{i:05}.pgm")), size, size, &to_gray(&prob))?;
        render_raw(&prob, size, &s.background).write_png(&dir.join(format!("raw/{i:05}.png")))?;
        let g = vesselgraph::extract_graph(&s.mask, extract)?;
        if g.is_empty() {
            return Err(Error::Graph(format!("subject {i}: mask produced an empty graph")));
        }
        fs::write(dir.join(format!("graphs/{i:05}.json")), vesselgraph::serialize(&g))?;
        Ok(())
    })?;

    let fields = cohort_fields();
    let mut w = csv::Writer::from_path(dir.join("cohort.csv")).map_err(|e| Error::Data(format!("csv: {e}")))?;
    let mut header = vec!["id".to_string()];
    header.extend(fields.iter().map(|f| f.field.name.clone()));
    header.extend(["label".to_string(), "split".to_string()]);
    w.write_record(&header).map_err(|e| Error::Data(format!("csv: {e}")))?;
    for (i, s) in cohort.subjects.iter().enumerate() {
        let mut rec = vec![format!("{i:05}")];
        rec.extend(s.tabular.iter().map(|c| c.clone().unwrap_or_default()));
        rec.push(if s.label { "1" } else { "0" }.to_string());
        rec.push(cohort.roles[i].as_str().to_string());
        w.write_record(&rec).map_err(|e| Error::Data(format!("csv: {e}")))?;
    }
    w.flush()?;

    let positives = cohort.subjects.iter().filter(|s| s.label).count();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: cohort.seed,
        n: cohort.subjects.len(),
        prevalence_target: cfg.prevalence,
        prevalence: positives as f64 / cohort.subjects.len() as f64,
        intercept: cohort.intercept,
        weights: cfg.weights,
        missing_rate: cfg.missing_rate,
        blur_sigma: cfg.blur_sigma,
        image_size: cfg.tree.size,
        split: cfg.split,
        fields,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}
