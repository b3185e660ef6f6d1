//! Boxes and their normalized location parameterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, corners `(x1, y1)` min and
/// `(x2, y2)` max. Treated as a closed real rectangle; area carries no
/// +1 pixel convention.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Box2D { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Valid within a `w × h` image: 0 ≤ x1 < x2 ≤ w and 0 ≤ y1 < y2 ≤ h.
    pub fn validate(&self, w: f64, h: f64) -> Result<()> {
        if !(self.x1 >= 0.0 && self.x1 < self.x2 && self.x2 <= w) {
            return Err(Error::Contract(format!(
                "box x-range [{}, {}] invalid for image width {}",
                self.x1, self.x2, w
            )));
        }
        if !(self.y1 >= 0.0 && self.y1 < self.y2 && self.y2 <= h) {
            return Err(Error::Contract(format!(
                "box y-range [{}, {}] invalid for image height {}",
                self.y1, self.y2, h
            )));
        }
        Ok(())
    }
}

/// Normalized, centered location parameters:
/// `[x1/w, y1/h, x2/w, y2/h] − 0.5`, each in [−0.5, 0.5].
pub fn box_to_location_params(b: &Box2D, w: f64, h: f64) -> Result<[f64; 4]> {
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::Contract(format!(
            "image dimensions must be positive, got {}×{}",
            w, h
        )));
    }
    Ok([
        b.x1 / w - 0.5,
        b.y1 / h - 0.5,
        b.x2 / w - 0.5,
        b.y2 / h - 0.5,
    ])
}

/// Inverse of [`box_to_location_params`].
pub fn params_to_box(t: &[f64; 4], w: f64, h: f64) -> Box2D {
    Box2D {
        x1: (t[0] + 0.5) * w,
        y1: (t[1] + 0.5) * h,
        x2: (t[2] + 0.5) * w,
        y2: (t[3] + 0.5) * h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_image_box_maps_to_corners() {
        let b = Box2D::new(0.0, 0.0, 640.0, 480.0);
        let t = box_to_location_params(&b, 640.0, 480.0).unwrap();
        assert_eq!(t, [-0.5, -0.5, 0.5, 0.5]);
    }

    #[test]
    fn quarter_box_fixture() {
        let b = Box2D::new(25.0, 50.0, 75.0, 150.0);
        let t = box_to_location_params(&b, 100.0, 200.0).unwrap();
        assert_eq!(t, [-0.25, -0.25, 0.25, 0.25]);
    }

    #[test]
    fn roundtrip_is_exact_for_dyadic_dimensions() {
        // Integer coordinates over power-of-two extents divide exactly.
        let (w, h) = (256.0, 128.0);
        for &(x1, y1, x2, y2) in &[(0.0, 0.0, 1.0, 1.0), (13.0, 7.0, 200.0, 100.0), (255.0, 127.0, 256.0, 128.0)] {
            let b = Box2D::new(x1, y1, x2, y2);
            let t = box_to_location_params(&b, w, h).unwrap();
            assert_eq!(params_to_box(&t, w, h), b);
        }
    }

    #[test]
    fn nonpositive_image_is_a_contract_error() {
        let b = Box2D::new(0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            box_to_location_params(&b, 0.0, 10.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn validate_rejects_inverted_and_out_of_range() {
        assert!(Box2D::new(5.0, 0.0, 5.0, 2.0).validate(10.0, 10.0).is_err());
        assert!(Box2D::new(-1.0, 0.0, 5.0, 2.0).validate(10.0, 10.0).is_err());
        assert!(Box2D::new(0.0, 0.0, 11.0, 2.0).validate(10.0, 10.0).is_err());
        assert!(Box2D::new(0.0, 0.0, 10.0, 10.0).validate(10.0, 10.0).is_ok());
    }
}
