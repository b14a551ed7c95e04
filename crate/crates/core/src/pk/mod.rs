//! One-compartment PK with first-order absorption and linear elimination:
//! closed-form concentrations, exposure metrics, simulation of individual
//! kinetics and population estimation from sparse concentration data.

mod exposure;
mod fit;
mod model;
mod simulate;

pub use exposure::{derive_exposure, ExposureKind};
pub use fit::{fit_poppk, sample_population_exposure, PopPkFit, SaemConfig};
pub use model::{concentration_at, Administration, DoseRegimen, IndividualPk, PopPkParams};
pub use simulate::{simulate_concentrations, simulate_individuals, ConcentrationSample};

/// The 19 post-first-dose sampling times (hours) of the reference protocol.
pub const REFERENCE_SAMPLING_TIMES: [f64; 19] = [
    0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 23.5, 25.0, 26.0, 27.0, 28.0, 30.0, 32.0, 47.0, 169.0,
    176.0, 337.0, 344.0,
];
