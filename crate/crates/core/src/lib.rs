//! Feature-space out-of-distribution monitoring.
//!
//! A monitor models the distribution of in-distribution (ID) feature vectors
//! produced by a fixed encoder and scores new vectors by how well they fit.
//! Five scorers are available behind one interface:
//!
//! * average pairwise cosine similarity to the training set ([`similarity`]),
//! * cosine similarity to the training mean ([`similarity`]),
//! * a one-class SVM ([`ocsvm`]),
//! * a Gaussian mixture with AIC-selected component count ([`gmm`]),
//! * a Real-NVP normalizing flow ([`nflow`]).
//!
//! Every scorer returns a [`ScoreSet`] where higher means more ID. The
//! [`metrics`] module evaluates scores against labels, [`monitor`] turns a
//! scorer into a thresholded detector or a quantile filter, and [`synth`]
//! generates synthetic shifts with brute-force oracles for testing.
//!
//! ```
//! use driftguard::{fit, generate, evaluate, FitOptions, Method, ShiftScenario};
//!
//! let data = generate(&ShiftScenario::preset("covariate-strong", 42)?)?;
//! let (model, _) = fit(Method::Mfs, &data.monitor, &FitOptions::default())?;
//! let scores = model.score(&data.test_set())?.with_labels(data.labels.clone())?;
//! let report = evaluate(&scores, false)?;
//! assert!(report.auroc > 0.99);
//! # Ok::<(), driftguard::Error>(())
//! ```

pub mod error;
pub mod features;
pub mod gmm;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod monitor;
pub mod nflow;
pub mod ocsvm;
pub mod persist;
pub mod scorer;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
pub use features::{
    l2_normalize, FeatureMatrix, FeatureSetMetadata, Normalization, Orientation, SampleLabel, ScoreSet,
};
pub use io::{read_features, read_features_as, write_features, write_features_as, FeatureFormat};
pub use metrics::{aupr, auroc, evaluate, fpr_at_tpr, normalize_minmax, EvalReport};
pub use monitor::{calibrate, filter, FilterLevel, Monitor};
pub use persist::{load_model, load_monitor, save_model, save_monitor};
pub use scorer::{fit, FitOptions, FitReport, GridChoice, Method, MonitorModel, ScorerModel};
pub use synth::{generate, ShiftScenario, SynthData, SynthRng};
