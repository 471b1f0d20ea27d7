//! Task-level automation-exposure labels and the machinery that turns them
//! into country, occupation and industry measures.
//!
//! Modules follow the pipeline order: [`types`] and [`schema`] define and
//! validate records, [`ingest`] reads files, [`aggregate`] builds country
//! summaries, [`linkage`] maps tasks onto occupations and industries,
//! [`reweight`] applies employment composition and [`validate`] holds the
//! internal-validity checks.

pub mod aggregate;
pub mod ingest;
pub mod linkage;
pub mod numeric;
pub mod profile;
pub mod provider;
pub mod reweight;
pub mod schema;
pub mod types;
pub mod validate;

pub use ingest::{CountryRegistry, LabelDataset, ParseReport};
pub use types::{
    is_exposed, AiFunction, BenchmarkContext, Channel, CountryContext, CovariateRow, ExposedMargin, ExposureLevel,
    IncomeGroup, Margin, RecordKey, Region, TaskLabelRecord,
};
