//! Pinhole camera model: projection, back-projection and the rigid
//! world-to-camera transform that defines the peeling rays.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera-space depth {0} is in front of znear; point is behind the camera")]
    PointBehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Rigid world→camera transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera placed at `eye`, axes aligned with the world (+z forward).
    pub fn at(eye: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: -eye,
        }
    }

    pub fn to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Pinhole camera with per-axis focal lengths, in pixel units.
///
/// Depth everywhere in this crate is camera-space Z, not ray length.
/// `znear > 0` guarantees that 0.0 is never a valid depth, so it doubles
/// as the background sentinel in peelmaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
    pub znear: f64,
}

impl PinholeCamera {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(CameraError::InvalidCamera("cx out of image bounds".into()));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidCamera("cy out of image bounds".into()));
        }
        if !(self.znear > 0.0) {
            return Err(CameraError::InvalidCamera("znear must be positive".into()));
        }
        let r = &self.pose.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho >= 1e-9 {
            return Err(CameraError::InvalidCamera(format!(
                "rotation not orthonormal, |R^T R - I| = {ortho:.3e}"
            )));
        }
        if (r.determinant() - 1.0).abs() >= 1e-9 {
            return Err(CameraError::InvalidCamera("rotation determinant != 1".into()));
        }
        Ok(())
    }

    /// Project a world point to continuous pixel coordinates and depth.
    pub fn project(&self, point: Vector3<f64>) -> Result<([f64; 2], f64), CameraError> {
        let c = self.pose.to_camera(point);
        if c.z < self.znear {
            return Err(CameraError::PointBehindCamera(c.z));
        }
        let x = self.fx * (c.x / c.z) + self.cx;
        let y = self.fy * (c.y / c.z) + self.cy;
        Ok(([x, y], c.z))
    }

    /// Back-project continuous pixel coordinates at camera-space depth Z
    /// to a world point. Inverse of [`PinholeCamera::project`].
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Result<Vector3<f64>, CameraError> {
        if depth <= 0.0 {
            return Err(CameraError::NonPositiveDepth(depth));
        }
        let c = Vector3::new(
            (pixel[0] - self.cx) / self.fx * depth,
            (pixel[1] - self.cy) / self.fy * depth,
            depth,
        );
        Ok(self.pose.to_world(c))
    }

    /// World-space ray through a continuous pixel coordinate. The direction
    /// is scaled so that the ray parameter t equals camera-space depth.
    pub fn pixel_ray(&self, pixel: [f64; 2]) -> (Vector3<f64>, Vector3<f64>) {
        let d_cam = Vector3::new(
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            1.0,
        );
        (self.pose.center(), self.pose.rotation.transpose() * d_cam)
    }

    /// Metric footprint of one pixel at the given depth: depth * 2*tan(hfov/2) / W,
    /// which reduces to depth / fx for a pinhole.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        depth / self.fx
    }
}
