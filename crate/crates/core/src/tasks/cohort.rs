use std::fs::{self, File};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Deserialize;

use super::split::{CohortSplit, SplitConfig, SplitRole};
use crate::contrastive::{ImageSource, Modality};
use crate::dataprep::{preprocess_image, Field, ImageTensor, ImputeConfig, IterativeImputer, RawTable, TabularSchema, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::vesselgraph::{self, normalize_graph, GraphFeatures, NormStats};

#[derive(Deserialize)]
struct ManifestFields {
    fields: Vec<Field>,
}

/// A cohort directory ready for training: encoded, imputed tabular rows,
/// labels and the stored split roles. Imaging is loaded on request.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub dir: PathBuf,
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    pub roles: Vec<SplitRole>,
    pub column_names: Vec<String>,
    /// Row-major `[n × tab_dim]`.
    pub tabular: Vec<f64>,
    pub tab_dim: usize,
}

fn parse_label(s: Option<&String>, r: usize) -> Result<bool> {
    match s.map(String::as_str) {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        other => Err(Error::Data(format!("row {r}: label must be 0 or 1, got {other:?}"))),
    }
}

impl Cohort {
    /// Reads `manifest.json` (for the field list) and `cohort.csv`. Encoding
    /// statistics and the imputer are fitted on non-test rows only.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read(dir.join("manifest.json"))?;
        let fields = serde_json::from_slice::<ManifestFields>(&manifest).map_err(|e| Error::Data(format!("manifest.json: {e}")))?.fields;
        let table = RawTable::read_csv(File::open(dir.join("cohort.csv"))?)?;
        let (id_col, label_col, split_col) = (table.column("id")?, table.column("label")?, table.column("split")?);
        let mut ids = Vec::with_capacity(table.rows.len());
        let mut labels = Vec::with_capacity(table.rows.len());
        let mut roles = Vec::with_capacity(table.rows.len());
        for (r, row) in table.rows.iter().enumerate() {
            ids.push(row[id_col].clone().ok_or_else(|| Error::Data(format!("row {r}: missing id")))?);
            labels.push(parse_label(row[label_col].as_ref(), r)?);
            let role = row[split_col].as_deref().ok_or_else(|| Error::Data(format!("row {r}: missing split")))?;
            roles.push(role.parse()?);
        }
        let names: Vec<&str> = fields.iter().map(|f| f.name.as_str()).collect();
        let rows = table.project(&names)?;
        let fit: Vec<usize> = (0..rows.len()).filter(|&i| roles[i] != SplitRole::Test).collect();
        if fit.is_empty() {
            return Err(Error::Data("cohort has no non-test rows".into()));
        }

        let mut schema = TabularSchema::new(fields);
        let fit_rows: Vec<_> = fit.iter().map(|&i| rows[i].clone()).collect();
        schema.fit(&fit_rows)?;
        let encoded = schema.encode(&rows)?;
        let (imputer, _) = IterativeImputer::fit(&encoded.select_rows(&fit), ImputeConfig::default())?;
        let tabular = imputer.transform(&encoded)?;
        info!("loaded {} subjects, {} encoded columns, imputer ran {} rounds", rows.len(), encoded.cols, imputer.rounds_run());
        Ok(Cohort { dir: dir.to_path_buf(), ids, labels, roles, column_names: schema.column_names(), tabular, tab_dim: encoded.cols })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Train and validation rows, in index order.
    pub fn fit_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] != SplitRole::Test).collect()
    }

    /// The stored partition with a balanced subset drawn by `seed`.
    pub fn split(&self, cfg: &SplitConfig, seed: u64) -> Result<CohortSplit> {
        CohortSplit::from_roles(&self.roles, &self.labels, cfg, seed)
    }

    fn file(&self, sub: &str, i: usize, ext: &str) -> PathBuf {
        self.dir.join(sub).join(format!("{}.{ext}", self.ids[i]))
    }

    /// Normalised graphs of every subject; scale constants are fitted on
    /// non-test graphs. A graph with no nodes falls back to a single
    /// featureless node.
    pub fn graphs(&self) -> Result<Vec<GraphFeatures>> {
        let raw = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let path = self.file("graphs", i, "json");
                let bytes = fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
                vesselgraph::deserialize(&bytes)
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = NormStats::fit(self.fit_rows().into_iter().map(|i| &raw[i]));
        raw.iter().map(|g| if g.is_empty() { Ok(GraphFeatures::fallback()) } else { normalize_graph(g, &stats) }).collect()
    }

    /// Lazily read images of one modality.
    pub fn images(&self, modality: Modality) -> Result<DirImages> {
        let (sub, ext) = match modality {
            Modality::Raw => ("raw", "png"),
            Modality::Prob => ("prob", "pgm"),
            Modality::Graph => return Err(Error::invalid("graphs are not images")),
        };
        let paths: Vec<PathBuf> = (0..self.len()).map(|i| self.file(sub, i, ext)).collect();
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return Err(Error::Data(format!("missing {modality} image {}", p.display())));
        }
        Ok(DirImages { paths, channels: modality.image_channels().expect("image modality") })
    }
}

/// Image files read and preprocessed on every access.
#[derive(Debug, Clone)]
pub struct DirImages {
    pub paths: Vec<PathBuf>,
    pub channels: usize,
}

impl ImageSource for DirImages {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, i: usize) -> Result<ImageTensor> {
        let path = self.paths.get(i).ok_or_else(|| Error::Data(format!("image {i} out of range")))?;
        let img = ImageTensor::read(path)?;
        if img.channels != self.channels {
            return Err(Error::Image(format!("{}: {} channels, expected {}", path.display(), img.channels, self.channels)));
        }
        if img.height == IMAGE_SIZE && img.width == IMAGE_SIZE {
            Ok(img)
        } else {
            preprocess_image(&img)
        }
    }
}
