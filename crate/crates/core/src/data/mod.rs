//! Data sources: the Beijing air-quality corpus and synthetic graph-VAR
//! processes.

pub mod air_quality;
pub mod synthetic;

pub use air_quality::{
    interpolate_gaps, load_air_quality, Station, StationConfig, TimeRange, AIR_QUALITY_FEATURES,
};
pub use synthetic::{
    companion_matrix, generate_synthetic, matrix_spectral_radius, random_stable_coefficients, spectral_radius,
    SyntheticSpec,
};
