pub mod adles;
pub mod classify;
pub mod cli;
pub mod features;
pub mod glottal;
pub mod signal;
pub mod vfmodel;
