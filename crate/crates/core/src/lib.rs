// SPDX-License-Identifier: Apache-2.0

pub mod allan;
pub mod cli;
pub mod cloud;
pub mod fixtures;
pub mod fourcc;
pub mod geometry;
pub mod gpmf;
pub mod map;
pub mod mp4;
pub mod ply;
pub mod report;
pub mod sync;
pub mod traj;
