//! Built-in systems and their conserved quantities.

pub mod kepler;
pub mod oscillator;
pub mod toda;
