pub mod heuristic;
pub mod poly;
pub mod sdp;
pub mod semialg;
pub mod sosprog;
pub mod verify;
pub mod synth;
pub mod planner;
