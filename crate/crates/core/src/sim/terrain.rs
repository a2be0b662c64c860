#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use nalgebra::Vector2;

use super::model::{foot_position, hip_position, knee_position, Coords, RobotParams};

/// Ground plane `z(x) = height + tan(slope) * x`, the rail sitting at `x = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub height: f64,
    pub slope: f64,
}

impl Plane {
    pub fn flat(height: f64) -> Self {
        Plane { height, slope: 0.0 }
    }

    /// Unit normal pointing out of the ground.
    pub fn normal(&self) -> Vector2<f64> {
        Vector2::new(-self.slope.sin(), self.slope.cos())
    }

    pub fn height_at(&self, x: f64) -> f64 {
        self.height + self.slope.tan() * x
    }

    /// Signed distance of a point from the plane (positive above).
    pub fn signed_distance(&self, p: &Vector2<f64>) -> f64 {
        self.normal().dot(&(p - Vector2::new(0.0, self.height)))
    }
}

/// Which bodies of a configuration are below a plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Penetration {
    pub hip: bool,
    pub knee: bool,
    pub foot: bool,
}

impl Penetration {
    pub fn of(params: &RobotParams, q: &Coords, plane: &Plane) -> Self {
        Penetration {
            hip: plane.signed_distance(&hip_position(q)) < 0.0,
            knee: plane.signed_distance(&knee_position(params, q)) < 0.0,
            foot: plane.signed_distance(&foot_position(params, q)) < 0.0,
        }
    }

    pub fn body(&self) -> bool {
        self.hip || self.knee
    }

    pub fn any(&self) -> bool {
        self.hip || self.knee || self.foot
    }
}

/// A change of the floor scheduled at a simulation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerrainChange {
    pub at_time: f64,
    pub floor_height: f64,
    pub floor_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TerrainConfig {
    pub floor_height: f64,
    pub floor_slope: f64,
    pub schedule: Vec<TerrainChange>,
}

impl TerrainConfig {
    pub fn flat() -> Self {
        TerrainConfig::default()
    }

    pub fn sloped(slope: f64) -> Self {
        TerrainConfig { floor_height: 0.0, floor_slope: slope, schedule: Vec::new() }
    }

    /// Flat ground that drops by `drop` metres at `at_time`.
    pub fn with_drop(drop: f64, at_time: f64) -> Self {
        TerrainConfig {
            floor_height: 0.0,
            floor_slope: 0.0,
            schedule: alloc::vec![TerrainChange { at_time, floor_height: -drop, floor_slope: 0.0 }],
        }
    }

    pub fn initial_plane(&self) -> Plane {
        Plane { height: self.floor_height, slope: self.floor_slope }
    }

    pub fn is_valid(&self) -> bool {
        let half_pi = core::f64::consts::FRAC_PI_2;
        self.floor_slope.abs() < half_pi && self.schedule.iter().all(|c| c.floor_slope.abs() < half_pi)
    }
}
