//! Weighted least-squares adjustment of horizontal survey networks.

pub mod adjust;
pub mod angle;
pub mod cli;
pub mod control;
pub mod equations;
pub mod fieldbook;
pub mod graph;
pub mod pipeline;
pub mod regress;
pub mod synth;
