use serde::{Deserialize, Serialize};

use crate::denoise::{GraphPolicy, ViewGraph};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Camera, Point, Vec3};

/// Which sampling phase a camera set serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Global,
    RoomFrame,
    Furniture,
}

/// How far cameras sit from the target center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum DistanceRule {
    /// Half the shorter horizontal extent of the box.
    HalfShortestAxis,
    /// A multiple of the box diagonal.
    DiagonalScale(f64),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPolicy {
    pub phase: Phase,
    pub count: usize,
    pub fov_deg: f64,
    pub distance: DistanceRule,
    /// Elevations assigned round-robin to consecutive azimuths.
    pub elevations_deg: Vec<f64>,
    /// Azimuth of the first camera; the rest are evenly spaced.
    #[serde(default)]
    pub azimuth_offset_deg: f64,
    /// Image width and height in pixels.
    pub resolution: [usize; 2],
    pub graph: GraphPolicy,
}

impl CameraPolicy {
    /// Six cameras on a horizontal circle of half the room's shorter horizontal axis.
    pub fn global() -> Self {
        Self {
            phase: Phase::Global,
            count: 6,
            fov_deg: 60.0,
            distance: DistanceRule::HalfShortestAxis,
            elevations_deg: vec![0.0],
            azimuth_offset_deg: 0.0,
            resolution: [512, 512],
            graph: GraphPolicy::RingWithSelf,
        }
    }

    /// The global placement with twelve wide-angle cameras.
    pub fn room_frame() -> Self {
        Self {
            phase: Phase::RoomFrame,
            count: 12,
            fov_deg: 80.0,
            graph: GraphPolicy::Complete,
            ..Self::global()
        }
    }

    /// Nine cameras at 0.95× the instance diagonal, alternating 0° and 30° elevation.
    pub fn furniture() -> Self {
        Self {
            phase: Phase::Furniture,
            count: 9,
            fov_deg: 60.0,
            distance: DistanceRule::DiagonalScale(0.95),
            elevations_deg: vec![0.0, 30.0],
            azimuth_offset_deg: 0.0,
            resolution: [512, 512],
            graph: GraphPolicy::Complete,
        }
    }

    pub fn for_phase(phase: Phase) -> Self {
        match phase {
            Phase::Global => Self::global(),
            Phase::RoomFrame => Self::room_frame(),
            Phase::Furniture => Self::furniture(),
        }
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.resolution = [width, height];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config(format!("{:?} camera count must be positive", self.phase)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!(
                "{:?} fov {} outside (0, 180)",
                self.phase, self.fov_deg
            )));
        }
        if self.elevations_deg.is_empty() || self.elevations_deg.iter().any(|e| !(e.abs() < 89.0)) {
            return Err(Error::Config(format!(
                "{:?} elevations must be non-empty and within (-89, 89) degrees",
                self.phase
            )));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(Error::Config(format!("{:?} resolution must be positive", self.phase)));
        }
        match self.distance {
            DistanceRule::DiagonalScale(s) | DistanceRule::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(
                Error::Config(format!("{:?} camera distance factor must be positive", self.phase)),
            ),
            _ => Ok(()),
        }
    }

    /// Camera distance for `target`.
    pub fn distance_for(&self, target: &Aabb) -> f64 {
        match self.distance {
            DistanceRule::HalfShortestAxis => {
                let e = target.extent();
                0.5 * e.x.min(e.z)
            }
            DistanceRule::DiagonalScale(s) => s * target.diagonal(),
            DistanceRule::Fixed(d) => d,
        }
    }
}

/// A placed camera and the spherical coordinates it was placed at.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedView {
    pub camera: Camera,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

/// Cameras of one phase with their related-view graph.
#[derive(Clone, Debug)]
pub struct ViewSet {
    pub views: Vec<PlacedView>,
    pub graph: ViewGraph,
    pub center: Point,
    pub distance: f64,
}

impl ViewSet {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Offset from the look-at center for azimuth `az` and elevation `el` (degrees)
/// in a y-up frame where azimuth 0 looks from +z.
pub fn spherical_offset(az_deg: f64, el_deg: f64) -> Vec3 {
    let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
    Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
}

/// Places `policy.count` cameras at evenly spaced azimuths around the center of
/// `target`, all looking at that center.
pub fn place_cameras(policy: &CameraPolicy, target: &Aabb) -> Result<ViewSet> {
    policy.validate()?;
    let e = target.extent();
    if !(e.x.is_finite() && e.y.is_finite() && e.z.is_finite()) || target.diagonal() <= 1e-12 {
        return Err(Error::Config(format!("degenerate target box {target:?}")));
    }
    let distance = policy.distance_for(target);
    if !(distance > 1e-9) {
        return Err(Error::Config(format!(
            "{:?} cameras would sit at distance {distance} from the center of {target:?}",
            policy.phase
        )));
    }
    let center = target.center();
    let near = 1e-3 * target.diagonal().min(distance);
    let far = 4.0 * (distance + target.diagonal());
    let step = 360.0 / policy.count as f64;
    let views = (0..policy.count)
        .map(|i| {
            let azimuth_deg = policy.azimuth_offset_deg + step * i as f64;
            let elevation_deg = policy.elevations_deg[i % policy.elevations_deg.len()];
            let position = center + distance * spherical_offset(azimuth_deg, elevation_deg);
            let camera = Camera::new(
                position,
                center,
                policy.fov_deg,
                policy.resolution[0],
                policy.resolution[1],
            )
            .with_clip(near, far);
            camera.validate()?;
            Ok(PlacedView {
                camera,
                azimuth_deg,
                elevation_deg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet {
        graph: policy.graph.build(views.len()),
        views,
        center,
        distance,
    })
}
