//! Single-block carpet process: excursion sampling, the parity chain, the
//! auxiliary `{0,1,?}` process and attempted emissions.

pub mod aux;
pub mod chain;
pub mod emissions;
pub mod oracles;
pub mod path;
pub mod spectral;
