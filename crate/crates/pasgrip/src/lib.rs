//! Passive-gripper generative design: geometry kernel, arm kinematics, grasp
//! synthesis, trajectory co-optimization, and topology optimization, driven by
//! a staged CLI pipeline.

pub mod coopt;
pub mod crs;
pub mod energy;
pub mod fixtures;
pub mod freespace;
pub mod geodesic;
pub mod grasp;
pub mod lp;
pub mod marching;
pub mod math;
pub mod mesh;
pub mod pathcost;
pub mod pipeline;
pub mod remesh;
pub mod robot;
pub mod skeleton;
pub mod topopt;
pub mod voxel;
