//! Grids, uniform-norm cubes, rasterized domains and the geometric
//! measurements made on them (measure density, local quasiconvexity).

mod cube;
mod density;
mod grid;
mod mask;
mod occupancy;
mod quasiconvex;
mod shape;

pub use cube::{euclid_dist, sup_dist, Cube};
pub use density::{measure_density, AhlforsReport, DensitySample};
pub use grid::{GridSpec, MAX_DIM};
pub use mask::{rasterize, DomainMask, Region, CELL_BOUNDARY, CELL_OPEN, CELL_OUTSIDE};
pub use occupancy::Occupancy;
pub use quasiconvex::{
    geodesic_ratio, open_components, quasiconvexity, GeodesicSolver, GeodesicWitness,
    QuasiconvexityReport,
};
pub use shape::{BoundingBox, Combination, CsgOp, Primitive, Shape};
