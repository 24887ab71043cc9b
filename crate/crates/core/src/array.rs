//! Uniform square planar arrays, steering vectors and their angular derivatives.
//!
//! Angles follow the physics convention: `theta` is the polar angle from +z and
//! `phi` is the azimuth in the x-y plane measured from +x.

use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CVec;

/// A propagation direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    /// Polar angle from +z, in `[0, pi]`.
    pub theta: f64,
    /// Azimuth in the x-y plane, in `(-pi, pi]`.
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }
    }

    /// Direction of a nonzero vector.
    pub fn from_vector(v: &Vector3<f64>) -> Result<Self> {
        let r = v.norm();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateGeometry(format!(
                "zero-length direction vector {v:?}"
            )));
        }
        let theta = (v.z / r).clamp(-1.0, 1.0).acos();
        let mut phi = v.y.atan2(v.x);
        if phi <= -std::f64::consts::PI {
            phi += 2.0 * std::f64::consts::PI;
        }
        Ok(Self { theta, phi })
    }

    pub fn unit_vector(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }
}

/// Wavenumber vector `(2 pi / lambda) [sin t cos p, sin t sin p, cos t]`.
pub fn wavenumber(dir: Direction, wavelength: f64) -> Vector3<f64> {
    dir.unit_vector() * (2.0 * std::f64::consts::PI / wavelength)
}

/// Partial derivatives of [`wavenumber`] with respect to theta and phi.
pub fn wavenumber_derivatives(dir: Direction, wavelength: f64) -> (Vector3<f64>, Vector3<f64>) {
    let s = 2.0 * std::f64::consts::PI / wavelength;
    let (st, ct) = dir.theta.sin_cos();
    let (sp, cp) = dir.phi.sin_cos();
    (
        Vector3::new(ct * cp, ct * sp, -st) * s,
        Vector3::new(-st * sp, st * cp, 0.0) * s,
    )
}

/// Plane spanned by a square array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayPlane {
    Xy,
    Xz,
    Yz,
}

/// Element positions of an antenna array together with the carrier wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    coords: Vec<Vector3<f64>>,
    wavelength: f64,
}

impl ArrayGeometry {
    /// Arbitrary element layout. Coordinates are relative to the array center.
    pub fn from_coords(coords: Vec<Vector3<f64>>, wavelength: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter(
                "array needs at least one element".into(),
            ));
        }
        if !(wavelength > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        Ok(Self { coords, wavelength })
    }

    /// Centered `side x side` grid at half-wavelength spacing in the given plane.
    pub fn uspa(side: usize, wavelength: f64, plane: ArrayPlane) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidParameter(
                "array side must be positive".into(),
            ));
        }
        let d = wavelength / 2.0;
        let off = (side as f64 - 1.0) / 2.0;
        let mut coords = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let u = (i as f64 - off) * d;
                let w = (j as f64 - off) * d;
                coords.push(match plane {
                    ArrayPlane::Xy => Vector3::new(u, w, 0.0),
                    ArrayPlane::Xz => Vector3::new(u, 0.0, w),
                    ArrayPlane::Yz => Vector3::new(0.0, u, w),
                });
            }
        }
        Self::from_coords(coords, wavelength)
    }

    /// Square array in the x-z plane with `count` elements; `count` must be a perfect square.
    pub fn uspa_xz(count: usize, wavelength: f64) -> Result<Self> {
        let side = (count as f64).sqrt().round() as usize;
        if side * side != count || count == 0 {
            return Err(Error::InvalidParameter(format!(
                "{count} elements is not a perfect square"
            )));
        }
        Self::uspa(side, wavelength, ArrayPlane::Xz)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.coords.iter().sum::<Vector3<f64>>() / self.coords.len() as f64
    }

    /// Second moments `(sum x^2, sum y^2, sum z^2)`.
    pub fn moments(&self) -> Vector3<f64> {
        self.coords.iter().map(|p| p.component_mul(p)).sum()
    }

    /// Copy with every element rotated about the array center.
    pub fn rotated(&self, rot: &Rotation3<f64>) -> Self {
        Self {
            coords: self.coords.iter().map(|p| rot * p).collect(),
            wavelength: self.wavelength,
        }
    }

    fn phases(&self, k: &Vector3<f64>) -> impl Iterator<Item = f64> + '_ {
        let k = *k;
        self.coords.iter().map(move |p| p.dot(&k))
    }

    /// Unit-norm steering vector `exp(-j Lambda^T k) / sqrt(N)`.
    pub fn steering_vector(&self, dir: Direction) -> CVec {
        let k = wavenumber(dir, self.wavelength);
        let s = 1.0 / (self.len() as f64).sqrt();
        CVec::from_iterator(
            self.len(),
            self.phases(&k).map(|ph| Complex64::from_polar(s, -ph)),
        )
    }

    /// `((Lambda^T k_theta) .* a, (Lambda^T k_phi) .* a)`.
    ///
    /// The true derivative of the steering vector is `-j` times each output.
    pub fn steering_derivatives(&self, dir: Direction) -> (CVec, CVec) {
        let a = self.steering_vector(dir);
        let (kt, kp) = wavenumber_derivatives(dir, self.wavelength);
        let dt = CVec::from_iterator(
            self.len(),
            self.phases(&kt).zip(a.iter()).map(|(w, z)| z * w),
        );
        let dp = CVec::from_iterator(
            self.len(),
            self.phases(&kp).zip(a.iter()).map(|(w, z)| z * w),
        );
        (dt, dp)
    }
}
