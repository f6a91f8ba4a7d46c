//! Fixed quadrature rules on reference triangles and segments.
//!
//! Weights are normalized to sum to one; the measure of the physical
//! entity multiplies the weighted sum at application time. The degree-2
//! triangle rule makes every bilinear-form integral of the P1 method
//! exact; the degree-4 rule is used for right-hand sides and error norms.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("unsupported quadrature degree {0} (supported: {1})")]
    UnsupportedDegree(usize, &'static str),
}

/// Quadrature rule with points in barycentric coordinates.
///
/// `P = [f64; 3]` for triangles, `P = [f64; 2]` for segments.
#[derive(Debug, Clone)]
pub struct QuadRule<P> {
    pub points: Vec<P>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

impl<P> QuadRule<P> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Symmetric rule on the reference triangle, exact for polynomials up to
/// `degree` (supported: 1, 2, 4).
pub fn triangle_rule(degree: usize) -> Result<QuadRule<[f64; 3]>, QuadratureError> {
    let third = 1.0 / 3.0;
    match degree {
        1 => Ok(QuadRule {
            points: vec![[third, third, third]],
            weights: vec![1.0],
            exact_degree: 1,
        }),
        2 => Ok(QuadRule {
            // Edge midpoints.
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![third, third, third],
            exact_degree: 2,
        }),
        4 => {
            // Six-point rule, two symmetry orbits.
            let a = 0.445948490915965;
            let wa = 0.223381589678011;
            let b = 0.091576213509771;
            let wb = 0.109951743655322;
            let orbit = |t: f64| {
                [
                    [t, t, 1.0 - 2.0 * t],
                    [t, 1.0 - 2.0 * t, t],
                    [1.0 - 2.0 * t, t, t],
                ]
            };
            let mut points = Vec::with_capacity(6);
            points.extend_from_slice(&orbit(a));
            points.extend_from_slice(&orbit(b));
            Ok(QuadRule {
                points,
                weights: vec![wa, wa, wa, wb, wb, wb],
                exact_degree: 4,
            })
        }
        d => Err(QuadratureError::UnsupportedDegree(d, "1, 2, 4")),
    }
}

/// Gauss-Legendre rule on the reference segment [0, 1], exact for
/// polynomials up to `degree` (supported: 1, 3, 5).
pub fn segment_rule(degree: usize) -> Result<QuadRule<[f64; 2]>, QuadratureError> {
    let sym = |offsets: &[(f64, f64)]| -> QuadRule<[f64; 2]> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(t, w) in offsets {
            points.push([1.0 - t, t]);
            weights.push(w);
        }
        QuadRule {
            points,
            weights,
            exact_degree: degree,
        }
    };
    match degree {
        1 => Ok(sym(&[(0.5, 1.0)])),
        3 => {
            let d = 0.5 / 3.0_f64.sqrt();
            Ok(sym(&[(0.5 - d, 0.5), (0.5 + d, 0.5)]))
        }
        5 => {
            let d = 0.5 * (3.0_f64 / 5.0).sqrt();
            Ok(sym(&[
                (0.5 - d, 5.0 / 18.0),
                (0.5, 8.0 / 18.0),
                (0.5 + d, 5.0 / 18.0),
            ]))
        }
        d => Err(QuadratureError::UnsupportedDegree(d, "1, 3, 5")),
    }
}
