//! Object-centric navigation on a procedurally generated 2D multi-room world.
//!
//! The crate is organized bottom-up:
//!
//! * [`geom`] — small 2D vector/segment/rectangle toolkit.
//! * [`rng`] — deterministic seed derivation for independent random streams.
//! * [`patch`] — the 16x16 RGB image patches attached to map nodes.
//! * [`sim`] — floor-plan generation, agent motion, visibility, and patch
//!   rendering.
//! * [`topomap`] — the incrementally grown object/waypoint graph.
//! * [`nav`] — A* planning, the aiming controller, and macro-action execution.
//! * [`qnet`] — a hand-rolled convolutional Q-network with a dynamic action
//!   space (the action's image patches are network *inputs*), replay buffer,
//!   and Adam optimizer.
//! * [`policy`] — Boltzmann exploration with an unexplored-node bonus.
//! * [`agent`] — episode orchestration, training, and evaluation.
//! * [`harness`] — CLI subcommands, CSV/SVG emission, and config handling.

// Modules still being scaffolded are commented out so the crate builds at
// every step; they are restored one at a time.
pub mod agent;
pub mod geom;
pub mod harness;
pub mod nav;
pub mod patch;
pub mod policy;
pub mod qnet;
pub mod rng;
pub mod sim;
pub mod topomap;
