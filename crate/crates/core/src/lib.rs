//! Tablature-to-audio rendering, latent rectified-flow style transfer and the
//! distance metrics and rating statistics used to evaluate it.

pub mod audio;
pub mod audiodist;
pub mod fixtures;
pub mod flowmatch;
pub mod latentcodec;
pub mod mosstats;
pub mod neuralnet;
pub mod odesolve;
pub mod stringsynth;
pub mod tabscore;
