//! Random geometric graphs and the connectivity calculators built on them.

mod analysis;
mod rgg;

pub use analysis::{
    average_pairwise_distance, critical_density_report, empirical_expansion, degree_bound_check,
    mean_pairwise_distance_estimate, path_length_bound, tx_success_probability, DensityReport, Estimate, GeomError,
    DegreeBound, Phase, Region, PERCOLATION_EMPIRICAL, PERCOLATION_LOWER, PERCOLATION_UPPER,
};
pub use rgg::{
    connected_components, generate_rgg, major_component_fraction, neighbor_lists, poisson, Placement, PlacementKind,
    Rgg,
};
