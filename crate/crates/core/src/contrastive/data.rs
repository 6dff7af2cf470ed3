use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataprep::{augment_with, AugmentParams, ImageTensor};
use crate::encoders::{images_to_tensor, GraphBatch};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;
use crate::vesselgraph::GraphFeatures;

/// Imaging input of the image tower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// Pseudo-fundus RGB image.
    Raw,
    /// Single-channel vessel probability map.
    Prob,
    Graph,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Raw => "raw",
            Modality::Prob => "prob",
            Modality::Graph => "graph",
        }
    }

    pub fn image_channels(self) -> Option<usize> {
        match self {
            Modality::Raw => Some(3),
            Modality::Prob => Some(1),
            Modality::Graph => None,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Modality::Raw),
            "prob" => Ok(Modality::Prob),
            "graph" => Ok(Modality::Graph),
            _ => Err(Error::invalid(format!("unknown modality {s:?} (raw | prob | graph)"))),
        }
    }
}

/// Random-access images, e.g. rendered on demand from stored masks.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, i: usize) -> Result<ImageTensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ImageSource for Vec<ImageTensor> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, i: usize) -> Result<ImageTensor> {
        self.get(i).cloned().ok_or_else(|| Error::Data(format!("image {i} out of range")))
    }
}

#[derive(Clone, Copy)]
pub enum ImagingSet<'a> {
    Images(Modality, &'a dyn ImageSource),
    Graphs(&'a [GraphFeatures]),
}

impl ImagingSet<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            ImagingSet::Images(m, _) => *m,
            ImagingSet::Graphs(_) => Modality::Graph,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ImagingSet::Images(_, s) => s.len(),
            ImagingSet::Graphs(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cohort-wide imaging plus encoded tabular rows; `indices` selects the
/// subjects that take part.
#[derive(Clone)]
pub struct PairedData<'a> {
    pub imaging: ImagingSet<'a>,
    /// Row-major `[cohort × tab_dim]`.
    pub tabular: &'a [f64],
    pub tab_dim: usize,
    pub indices: Vec<usize>,
}

/// One assembled batch for the image tower.
pub enum ImagingBatch<T> {
    Images(Tensor<T>),
    Graphs(GraphBatch<T>),
}

impl<'a> PairedData<'a> {
    pub fn new(imaging: ImagingSet<'a>, tabular: &'a [f64], tab_dim: usize, indices: Vec<usize>) -> Result<Self> {
        let n = imaging.len();
        if tab_dim == 0 || tabular.len() != n * tab_dim {
            return Err(Error::shape("paired data", format!("{} tabular values for {n} subjects × {tab_dim}", tabular.len())));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Data(format!("subject index {i} outside cohort of {n}")));
        }
        Ok(PairedData { imaging, tabular, tab_dim, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn modality(&self) -> Modality {
        self.imaging.modality()
    }

    /// `[B×D]` tabular rows of cohort subjects `subjects`.
    pub fn tabular_batch<T: Scalar>(&self, subjects: &[usize]) -> Result<Tensor<T>> {
        let d = self.tab_dim;
        let vals = subjects.iter().flat_map(|&s| self.tabular[s * d..(s + 1) * d].iter().map(|&v| T::lit(v))).collect();
        Tensor::new(&[subjects.len(), d], vals)
    }

    /// Images are loaded (and augmented when `aug` is given) in parallel;
    /// output order follows `subjects`.
    pub fn imaging_batch<T: Scalar>(&self, subjects: &[usize], aug: Option<&[AugmentParams]>) -> Result<ImagingBatch<T>> {
        match self.imaging {
            ImagingSet::Graphs(gs) => {
                let refs: Vec<&GraphFeatures> = subjects.iter().map(|&s| &gs[s]).collect();
                Ok(ImagingBatch::Graphs(GraphBatch::new(&refs)?))
            }
            ImagingSet::Images(_, src) => {
                let imgs = subjects
                    .par_iter()
                    .enumerate()
                    .map(|(k, &s)| {
                        let img = src.load(s)?;
                        Ok(match aug {
                            Some(a) => augment_with(&img, &a[k]),
                            None => img,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&ImageTensor> = imgs.iter().collect();
                Ok(ImagingBatch::Images(images_to_tensor(&refs)?))
            }
        }
    }
}
