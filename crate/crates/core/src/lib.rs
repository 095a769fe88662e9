pub mod alphabet;
pub mod checkpoint;
pub mod data;
pub mod ec;
pub mod geometry;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod sites;
pub mod synth;
pub mod training;
pub mod verify;
