//! Cohort datasets, preprocessing, bundle construction and synthetic cohorts.
//!
//! Missing cells are NaN throughout.

mod bundles;
mod io;
mod preprocess;
mod synth;

pub use bundles::{make_bundles, make_bundles_all, make_label, BundleSet, LABEL_THRESHOLD_MIN};
pub use io::{
    read_features_csv, read_labels_csv, write_features_csv, write_labels_csv, FeatureTable,
    DATE_FORMAT,
};
pub use preprocess::{
    drop_columns, drop_sparse_features, impute_matrix, knn_impute, preprocess, preprocess_cohorts,
    remove_outliers, sparse_columns, ImputeReport, OutlierReport, PreprocessReport, Standardizer,
    KNN_K, OUTLIER_CUTOFF, SPARSE_FRACTION,
};
pub use synth::{base_date, generate_synthetic, SynthConfig, SYNTH_KEYS};

use chrono::NaiveDate;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::commgraph::{CommEvent, GraphError, WeightedGraph};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every feature column exceeds the missing-data threshold")]
    AllFeaturesDropped,
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("sleep minutes {0} outside [0, 1440)")]
    BadMinutes(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Physiology,
    Phone,
    Weather,
    Survey,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Physiology,
        Modality::Phone,
        Modality::Weather,
        Modality::Survey,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Physiology => "physiology",
            Modality::Phone => "phone",
            Modality::Weather => "weather",
            Modality::Survey => "survey",
        }
    }

    /// Modality of a column named `<modality>_<suffix>`.
    pub fn from_column(name: &str) -> Option<Self> {
        let prefix = name.split('_').next()?;
        Self::ALL.into_iter().find(|m| m.name() == prefix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    pub cohort_id: String,
    pub participants: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `[participant, day, feature]`.
    pub features: Array3<f64>,
    /// `[participant, day]`.
    pub sleep_minutes: Array2<f64>,
    /// One graph per day over `participants`, in roster order.
    pub graphs: Vec<WeightedGraph>,
    pub feature_names: Vec<String>,
    pub modalities: Vec<Modality>,
    /// Raw events the graphs were built from, if known.
    pub events: Vec<CommEvent>,
}

impl CohortDataset {
    pub fn n_participants(&self) -> usize {
        self.participants.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let (p, d, m) = self.features.dim();
        if p != self.participants.len() || d != self.dates.len() || m != self.feature_names.len() {
            return Err(DataError::Shape(format!(
                "features {p}x{d}x{m} vs {} participants, {} days, {} names",
                self.participants.len(),
                self.dates.len(),
                self.feature_names.len()
            )));
        }
        if self.modalities.len() != m {
            return Err(DataError::Shape("one modality tag per feature".into()));
        }
        if self.sleep_minutes.dim() != (p, d) {
            return Err(DataError::Shape("sleep minutes must be participants x days".into()));
        }
        if let Some(&bad) = self
            .sleep_minutes
            .iter()
            .find(|v| !v.is_nan() && !(0.0..1440.0).contains(*v))
        {
            return Err(DataError::BadMinutes(bad));
        }
        if self.graphs.len() != d {
            return Err(DataError::Shape(format!("{} graphs for {d} days", self.graphs.len())));
        }
        if let Some(g) = self.graphs.iter().find(|g| g.node_ids != self.participants) {
            return Err(DataError::Shape(format!(
                "graph over {} nodes does not follow the roster order",
                g.n()
            )));
        }
        Ok(())
    }

    pub fn missing_cells(&self) -> usize {
        self.features.iter().filter(|v| v.is_nan()).count()
    }

    /// Features as a `(participant·day) × m` matrix, participant-major.
    pub fn rows(&self) -> Array2<f64> {
        let (p, d, m) = self.features.dim();
        self.features
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((p * d, m))
            .expect("contiguous")
    }

    pub(crate) fn set_rows(&mut self, rows: Array2<f64>) {
        let (p, d, m) = self.features.dim();
        self.features = rows.into_shape_with_order((p, d, m)).expect("row count preserved");
    }

    /// Participant index of every row of [`CohortDataset::rows`].
    pub fn row_groups(&self) -> Vec<usize> {
        let d = self.n_days();
        (0..self.n_participants() * d).map(|r| r / d).collect()
    }
}
