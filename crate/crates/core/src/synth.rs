//! Synthetic lidar-like scenes.
//!
//! Scenes are random layouts of pillars, walls and boxes over an optional
//! ground disk, sampled as surface points in the sensor frame (sensor at the
//! origin, ground at `z = -SENSOR_HEIGHT`). They exist for tests, benchmarks
//! and demos; nothing here models a real sensor's beam pattern.

use std::f64::consts::TAU;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::cloud_io::{Point3, PointCloud, Pose};

/// Height of the simulated sensor above the ground plane (m).
pub const SENSOR_HEIGHT: f64 = 1.7;

/// Default measurement noise of sampled scenes (m).
pub const DEFAULT_NOISE: f64 = 0.02;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    /// Vertical cylinder standing on the ground.
    Pillar { x: f64, y: f64, radius: f64, height: f64 },
    /// Vertical rectangle from `(x0, y0)` to `(x1, y1)`.
    Wall { x0: f64, y0: f64, x1: f64, y1: f64, height: f64 },
    /// Axis-aligned (in its own yaw) box resting on the ground.
    Block { x: f64, y: f64, yaw: f64, length: f64, width: f64, height: f64 },
}

impl Structure {
    /// A representative ground position (x, y).
    fn center(&self) -> (f64, f64) {
        match *self {
            Structure::Pillar { x, y, .. } | Structure::Block { x, y, .. } => (x, y),
            Structure::Wall { x0, y0, x1, y1, .. } => (0.5 * (x0 + x1), 0.5 * (y0 + y1)),
        }
    }

    fn area(&self) -> f64 {
        match *self {
            Structure::Pillar { radius, height, .. } => TAU * radius * height,
            Structure::Wall { x0, y0, x1, y1, height } => (x1 - x0).hypot(y1 - y0) * height,
            Structure::Block { length, width, height, .. } => 2.0 * (length + width) * height + length * width,
        }
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> Point3 {
        let ground = -SENSOR_HEIGHT;
        match *self {
            Structure::Pillar { x, y, radius, height } => {
                let a = rng.random_range(0.0..TAU);
                Point3::new(x + radius * a.cos(), y + radius * a.sin(), ground + rng.random_range(0.0..height))
            }
            Structure::Wall { x0, y0, x1, y1, height } => {
                let t = rng.random::<f64>();
                Point3::new(x0 + t * (x1 - x0), y0 + t * (y1 - y0), ground + rng.random_range(0.0..height))
            }
            Structure::Block { x, y, yaw, length, width, height } => {
                let (hl, hw) = (length / 2.0, width / 2.0);
                let side = 2.0 * (length + width) * height;
                let top = length * width;
                let (u, v, z) = if rng.random_range(0.0..side + top) < side {
                    let s = rng.random_range(0.0..2.0 * (length + width));
                    let z = rng.random_range(0.0..height);
                    if s < length {
                        (s - hl, -hw, z)
                    } else if s < length + width {
                        (hl, s - length - hw, z)
                    } else if s < 2.0 * length + width {
                        (s - length - width - hl, hw, z)
                    } else {
                        (-hl, s - 2.0 * length - width - hw, z)
                    }
                } else {
                    (rng.random_range(-hl..hl), rng.random_range(-hw..hw), height)
                };
                let (s, c) = yaw.sin_cos();
                Point3::new(x + c * u - s * v, y + s * u + c * v, ground + z)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub structures: Vec<Structure>,
    /// Radius of the ground disk; 0 disables the ground.
    pub ground_radius: f64,
    /// Surface sampling density (points per m²) for structures.
    pub density: f64,
    /// Ground sampling density (points per m²).
    pub ground_density: f64,
    /// Standard deviation of isotropic measurement noise (m). Real returns
    /// are never exactly coplanar; without noise, flat cells hit the
    /// eigenvalue floor and their entropy is dominated by it.
    pub noise: f64,
}

impl SceneSpec {
    /// A random layout within 60 m of the sensor.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut structures = Vec::new();
        let place = |rng: &mut R| -> (f64, f64) {
            let r = rng.random_range(3.0..60.0);
            let a = rng.random_range(0.0..TAU);
            (r * a.cos(), r * a.sin())
        };
        for _ in 0..rng.random_range(6..20) {
            let (x, y) = place(rng);
            structures.push(Structure::Pillar {
                x,
                y,
                radius: rng.random_range(0.2..1.0),
                height: rng.random_range(2.0..7.5),
            });
        }
        for _ in 0..rng.random_range(2..8) {
            let (x0, y0) = place(rng);
            let len = rng.random_range(5.0..30.0);
            let dir = rng.random_range(0.0..TAU);
            structures.push(Structure::Wall {
                x0,
                y0,
                x1: x0 + len * dir.cos(),
                y1: y0 + len * dir.sin(),
                height: rng.random_range(2.0..7.5),
            });
        }
        for _ in 0..rng.random_range(3..15) {
            let (x, y) = place(rng);
            structures.push(Structure::Block {
                x,
                y,
                yaw: rng.random_range(0.0..TAU),
                length: rng.random_range(2.0..6.0),
                width: rng.random_range(1.5..3.0),
                height: rng.random_range(1.2..3.5),
            });
        }
        Self {
            structures,
            ground_radius: 40.0,
            density: 20.0,
            ground_density: 1.5,
            noise: DEFAULT_NOISE,
        }
    }

    /// Samples the surfaces. Deterministic for a given rng state.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> PointCloud {
        let jitter = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        let mut points = Vec::new();
        for s in &self.structures {
            let n = (s.area() * self.density).round() as usize;
            points.extend((0..n).map(|_| s.sample_point(rng)));
        }
        if self.ground_radius > 0.0 {
            let area = std::f64::consts::PI * self.ground_radius * self.ground_radius;
            let n = (area * self.ground_density).round() as usize;
            for _ in 0..n {
                let r = self.ground_radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..TAU);
                points.push(Point3::new(r * a.cos(), r * a.sin(), -SENSOR_HEIGHT));
            }
        }
        if self.noise > 0.0 {
            for p in &mut points {
                *p += Point3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng));
            }
        }
        PointCloud::new(points)
    }
}

/// Re-observation noise: each point is dropped with probability `dropout`,
/// survivors get isotropic Gaussian jitter with standard deviation `sigma`.
pub fn reobserve<R: Rng>(cloud: &PointCloud, sigma: f64, dropout: f64, rng: &mut R) -> PointCloud {
    let jitter = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut points = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        if rng.random::<f64>() >= dropout {
            points.push(p + Point3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng)));
        }
    }
    PointCloud {
        points,
        source_id: cloud.source_id.clone(),
        dropped: cloud.dropped,
    }
}

/// Rotates a cloud about the sensor's z axis.
pub fn rotate_yaw(cloud: &PointCloud, yaw: f64) -> PointCloud {
    crate::cloud_io::transform_cloud(cloud, &Pose::from_yaw(yaw, Point3::zeros(), 0))
}

/// A dense frame of roughly `target_points` points (KITTI HDL-64 scans hold
/// about 120k). Structures are sampled more densely near the sensor.
pub fn dense_frame<R: Rng>(rng: &mut R, target_points: usize) -> PointCloud {
    let mut spec = SceneSpec::random(rng);
    spec.ground_radius = 70.0;
    let structure_area: f64 = spec.structures.iter().map(Structure::area).sum();
    let ground_area = std::f64::consts::PI * spec.ground_radius * spec.ground_radius;
    // Split the budget roughly 60/40 between structures and ground.
    spec.density = 0.6 * target_points as f64 / structure_area;
    spec.ground_density = 0.4 * target_points as f64 / ground_area;
    spec.sample(rng)
}

/// A static world larger than one sensor view, observed from poses along a
/// trajectory. The ground is the plane `z = -SENSOR_HEIGHT` in world
/// coordinates, so trajectories should stay at `z = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub structures: Vec<Structure>,
    /// Structures farther than this from the sensor (x-y) are not seen (m).
    pub range: f64,
    /// Ground returns are generated within this radius of the sensor (m).
    pub ground_radius: f64,
    pub density: f64,
    pub ground_density: f64,
    pub noise: f64,
}

impl World {
    /// Random structures over the square `[-half_extent, half_extent]²`,
    /// roughly 10 pillars, 4 walls and 8 blocks per hectare.
    pub fn random<R: Rng>(rng: &mut R, half_extent: f64) -> Self {
        let hectares = (2.0 * half_extent).powi(2) / 10_000.0;
        let count = |rate: f64| (rate * hectares).round() as usize;
        let at = |rng: &mut R| (rng.random_range(-half_extent..half_extent), rng.random_range(-half_extent..half_extent));
        let mut structures = Vec::new();
        for _ in 0..count(10.0) {
            let (x, y) = at(rng);
            structures.push(Structure::Pillar {
                x,
                y,
                radius: rng.random_range(0.2..1.0),
                height: rng.random_range(2.0..7.5),
            });
        }
        for _ in 0..count(4.0) {
            let (x0, y0) = at(rng);
            let len = rng.random_range(5.0..30.0);
            let dir = rng.random_range(0.0..TAU);
            structures.push(Structure::Wall {
                x0,
                y0,
                x1: x0 + len * dir.cos(),
                y1: y0 + len * dir.sin(),
                height: rng.random_range(2.0..7.5),
            });
        }
        for _ in 0..count(8.0) {
            let (x, y) = at(rng);
            structures.push(Structure::Block {
                x,
                y,
                yaw: rng.random_range(0.0..TAU),
                length: rng.random_range(2.0..6.0),
                width: rng.random_range(1.5..3.0),
                height: rng.random_range(1.2..3.5),
            });
        }
        Self {
            structures,
            range: 80.0,
            ground_radius: 40.0,
            density: 40.0,
            ground_density: 3.0,
            noise: DEFAULT_NOISE,
        }
    }

    /// A scan in the sensor frame of `pose` (sensor to world).
    pub fn observe<R: Rng>(&self, pose: &Pose, rng: &mut R) -> PointCloud {
        let origin = pose.translation;
        let visible = |x: f64, y: f64| (x - origin.x).hypot(y - origin.y) <= self.range;
        let spec = SceneSpec {
            structures: self
                .structures
                .iter()
                .filter(|s| {
                    let (x, y) = s.center();
                    visible(x, y)
                })
                .cloned()
                .collect(),
            ground_radius: 0.0,
            density: self.density,
            ground_density: 0.0,
            noise: self.noise,
        };
        let mut world_points = spec.sample(rng).points;
        let ground = (std::f64::consts::PI * self.ground_radius * self.ground_radius * self.ground_density).round() as usize;
        let jitter = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        for _ in 0..ground {
            let r = self.ground_radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..TAU);
            world_points.push(Point3::new(
                origin.x + r * a.cos(),
                origin.y + r * a.sin(),
                -SENSOR_HEIGHT + jitter.sample(rng),
            ));
        }
        let to_sensor = pose.inverse();
        PointCloud::new(world_points.iter().map(|p| to_sensor.transform_point(p)).collect())
    }
}

/// `frames` poses `step` metres apart on a counter-clockwise circle of
/// circumference `loop_length` starting at the origin heading +x. Frames
/// past one lap revisit earlier places.
pub fn loop_trajectory(loop_length: f64, step: f64, frames: usize) -> Vec<Pose> {
    let radius = loop_length / TAU;
    (0..frames)
        .map(|i| {
            let theta = i as f64 * step / radius;
            let t = Point3::new(radius * theta.sin(), radius * (1.0 - theta.cos()), 0.0);
            Pose::from_yaw(theta, t, i)
        })
        .collect()
}

/// A straight drive along +x with one pose every `step` metres.
pub fn straight_trajectory(length: f64, step: f64) -> Vec<Pose> {
    let n = (length / step).round() as usize;
    (0..=n)
        .map(|i| Pose::from_translation(Point3::new(i as f64 * step, 0.0, 0.0), i))
        .collect()
}
