use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mesh::{Point, Vec3};
use crate::error::{Error, Result};

/// Pinhole camera with a vertical field of view and square pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_degrees: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// Orthonormal view frame derived from a validated [`Camera`].
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    pub origin: Point,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(position: Point, look_at: Point, fov_degrees: f64, width: usize, height: usize) -> Self {
        Self {
            position: [position.x, position.y, position.z],
            look_at: [look_at.x, look_at.y, look_at.z],
            up: [0.0, 1.0, 0.0],
            fov_degrees,
            width,
            height,
            near: 0.01,
            far: 100.0,
        }
    }

    pub fn with_up(mut self, up: Vec3) -> Self {
        self.up = [up.x, up.y, up.z];
        self
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Self {
        self.near = near;
        self.far = far;
        self
    }

    pub fn position(&self) -> Point {
        Point::from(self.position)
    }

    pub fn target(&self) -> Point {
        Point::from(self.look_at)
    }

    pub fn validate(&self) -> Result<()> {
        self.frame().map(|_| ())
    }

    pub fn frame(&self) -> Result<CameraFrame> {
        let origin = self.position();
        let view = self.target() - origin;
        if !(view.norm() > 1e-12) {
            return Err(Error::Camera("position equals look_at".into()));
        }
        let forward = view.normalize();
        let up = Vec3::from(self.up);
        let side = forward.cross(&up);
        if !(side.norm() > 1e-9 * up.norm().max(1e-300)) {
            return Err(Error::Camera("up vector is parallel to the view direction".into()));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::Camera(format!("fov {} outside (0, 180)", self.fov_degrees)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Camera(format!(
                "clip range near={} far={} is invalid",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("resolution must be non-zero".into()));
        }
        let right = side.normalize();
        let true_up = right.cross(&forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.fov_degrees.to_radians()).tan();
        Ok(CameraFrame {
            origin,
            right,
            up: true_up,
            forward,
            focal,
            cx: 0.5 * self.width as f64,
            cy: 0.5 * self.height as f64,
            near: self.near,
            far: self.far,
            width: self.width,
            height: self.height,
        })
    }
}

impl CameraFrame {
    /// World point to view space `(right, up, depth)`.
    #[inline]
    pub fn to_view(&self, p: &Point) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }

    /// View-space point to continuous screen coordinates (pixel centers at `i + 0.5`).
    #[inline]
    pub fn view_to_screen(&self, v: &Vec3) -> (f64, f64) {
        (self.cx + self.focal * v.x / v.z, self.cy - self.focal * v.y / v.z)
    }

    /// Unit direction of the ray through a continuous screen position.
    pub fn ray_direction(&self, sx: f64, sy: f64) -> Vec3 {
        let x = (sx - self.cx) / self.focal;
        let y = (self.cy - sy) / self.focal;
        (self.forward + self.right * x + self.up * y).normalize()
    }
}

/// Parses `pos=x,y,z;look=x,y,z[;up=x,y,z][;fov=deg][;res=WxH][;near=n][;far=f]`.
impl FromStr for Camera {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cam = Camera::new(Point::origin(), Point::new(0.0, 0.0, -1.0), 60.0, 256, 256);
        let mut have_pos = false;
        let mut have_look = false;
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("camera spec entry `{part}` lacks `=`")))?;
            let vec3 = |v: &str| -> Result<[f64; 3]> {
                let xs: Vec<f64> = v
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("camera `{key}`: {e}")))?;
                xs.try_into()
                    .map_err(|_| Error::Config(format!("camera `{key}` needs three numbers")))
            };
            let num = |v: &str| -> Result<f64> {
                v.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("camera `{key}`: {e}")))
            };
            match key.trim() {
                "pos" | "position" => {
                    cam.position = vec3(value)?;
                    have_pos = true;
                }
                "look" | "look_at" => {
                    cam.look_at = vec3(value)?;
                    have_look = true;
                }
                "up" => cam.up = vec3(value)?,
                "fov" => cam.fov_degrees = num(value)?,
                "near" => cam.near = num(value)?,
                "far" => cam.far = num(value)?,
                "res" => {
                    let (w, h) = value
                        .split_once('x')
                        .ok_or_else(|| Error::Config("camera `res` must look like 256x256".into()))?;
                    cam.width = num(w)? as usize;
                    cam.height = num(h)? as usize;
                }
                other => return Err(Error::Config(format!("unknown camera key `{other}`"))),
            }
        }
        if !have_pos || !have_look {
            return Err(Error::Config("camera spec needs `pos` and `look`".into()));
        }
        cam.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cam)
    }
}
