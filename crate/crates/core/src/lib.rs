//! Numerical toolkit for the b-family equation `m_t + u m_x + b u_x m = 0`,
//! `m = (1 - ∂²)u`, centred on the lefton regime `b < -1`.

pub mod conservation;
pub mod diagnostics;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod linops;
pub mod modulation;
pub mod profiles;

pub use error::{Error, Result};
pub use grid::{Field, Grid, GridSpec};
pub use profiles::LeftonParams;
