//! Cultural value probing and activation steering for decoder-only language models.
//!
//! The pipeline has five stages, each in its own module:
//!
//! - [`dataset`]: forced-choice scenarios tied to ten World Values Survey items,
//!   with validation, stratified splitting and per-scenario label randomization.
//! - [`model`]: a hookable byte-level transformer plus the [`model::LanguageModel`]
//!   trait that real-model backends implement.
//! - [`persona`]: basic and statistics-grounded country personas.
//! - [`probing`]: prompt rendering and option-logit scoring.
//! - [`steering`]: contrastive mean-difference vectors and layer grid search.
//! - [`analysis`]: projection onto the Inglehart-Welzel plane and the derived metrics.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod hash;
pub mod model;
pub mod persona;
pub mod probing;
pub mod steering;

pub use analysis::{CulturalCoordinate, DomainShiftMatrix, EntanglementRecord, HumanAnchors};
pub use config::RunConfig;
pub use dataset::{Axis, DatasetSplit, Domain, LabelKey, LabeledScenario, Qid, Scenario};
pub use error::{Error, ErrorKind, Result};
pub use model::{InterventionSpec, LanguageModel, ModelConfig, Session, TinyTransformer};
pub use persona::{Codebook, CountryStats, PersonaKind, PersonaProfile};
pub use probing::{ProbeResult, QuestionScore, WvsRangeConfig};
pub use steering::{ContrastPair, LayerSearchReport, SteeringVectorSet};
