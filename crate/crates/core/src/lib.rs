pub mod bessel;
pub mod coarse;
pub mod langevin;
pub mod lorentz;
pub mod micro;
pub mod models;
pub mod phase;
pub mod poly;
pub mod quad;
pub mod rng;
pub mod stats;
