use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest depth the sensor reports, in meters.
pub const MAX_DEPTH: f64 = 8.0;

/// Depth is usable when finite and inside the sensor range `(0, 8]` m.
pub fn is_valid_depth(z: f64) -> bool {
    z.is_finite() && z > 0.0 && z <= MAX_DEPTH
}

/// Pinhole intrinsics in pixels. With `cx = cy = 0` this is the plain
/// `diag(1/fx, 1/fy, 1)` back-projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// Principal point at the center of a `width x height` image.
    pub fn centered(fx: f64, fy: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0)
    }

    /// Kinect2-class depth camera: 512x424, f = 365 px.
    pub fn kinect2() -> Self {
        Self::centered(365.0, 365.0, 512, 424).expect("valid intrinsics")
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need finite values and positive focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point with `z > 0` to pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Back-projects pixel `(u, v)` at depth `z` into the camera frame.
pub fn lift_point(u: f64, v: f64, z: f64, intrinsics: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !z.is_finite() || z <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "depth must be positive and finite, got {z}"
        )));
    }
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::NonFinite(format!("pixel coordinates ({u}, {v})")));
    }
    Ok(Vector3::new(
        z * (u - intrinsics.cx) / intrinsics.fx,
        z * (v - intrinsics.cy) / intrinsics.fy,
        z,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn principal_point_lifts_onto_optical_axis() {
        let k = CameraIntrinsics::new(412.0, 377.0, 256.0, 212.0).unwrap();
        assert_eq!(lift_point(256.0, 212.0, 2.0, &k).unwrap(), Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn zero_principal_point_closed_form() {
        let k = CameraIntrinsics::new(500.0, 500.0, 0.0, 0.0).unwrap();
        let p = lift_point(100.0, 50.0, 2.0, &k).unwrap();
        assert!((p - Vector3::new(0.4, 0.2, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_depth_and_intrinsics() {
        let k = CameraIntrinsics::kinect2();
        assert!(lift_point(1.0, 1.0, 0.0, &k).is_err());
        assert!(lift_point(1.0, 1.0, -1.0, &k).is_err());
        assert!(lift_point(1.0, 1.0, f64::NAN, &k).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn depth_validity_range() {
        assert!(is_valid_depth(8.0));
        assert!(is_valid_depth(1e-3));
        assert!(!is_valid_depth(0.0));
        assert!(!is_valid_depth(8.01));
        assert!(!is_valid_depth(f64::INFINITY));
    }

    proptest! {
        #[test]
        fn project_then_lift_is_identity(
            x in -4.0f64..4.0, y in -4.0f64..4.0, z in 1e-3f64..8.0,
            fx in 100.0f64..1000.0, fy in 100.0f64..1000.0,
            cx in 0.0f64..640.0, cy in 0.0f64..480.0,
        ) {
            let k = CameraIntrinsics::new(fx, fy, cx, cy).unwrap();
            let p = Vector3::new(x, y, z);
            let (u, v) = k.project(&p);
            let q = lift_point(u, v, z, &k).unwrap();
            prop_assert!((p - q).norm() < 1e-9);
        }

        #[test]
        fn lifting_is_homogeneous_in_depth(
            u in -500.0f64..500.0, v in -500.0f64..500.0,
            z in 0.1f64..8.0, alpha in 0.01f64..10.0,
        ) {
            let k = CameraIntrinsics::kinect2();
            let a = lift_point(u, v, alpha * z, &k).unwrap();
            let b = alpha * lift_point(u, v, z, &k).unwrap();
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
    }
}
