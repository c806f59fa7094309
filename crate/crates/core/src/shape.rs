//! Bilinear shape functions on an axis-aligned `hx x hy` rectangle with
//! 2x2 Gauss quadrature. Local nodes run counter-clockwise from the
//! lower-left corner.

const G: f64 = 0.577_350_269_189_625_8;

pub const GAUSS_POINTS: [(f64, f64); 4] = [(-G, -G), (G, -G), (G, G), (-G, G)];

const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

pub fn values(xi: f64, eta: f64) -> [f64; 4] {
    CORNERS.map(|(a, b)| 0.25 * (1.0 + a * xi) * (1.0 + b * eta))
}

/// Physical gradients `(dN/dx, dN/dy)` of each shape function.
pub fn gradients(xi: f64, eta: f64, hx: f64, hy: f64) -> [(f64, f64); 4] {
    CORNERS.map(|(a, b)| {
        (
            0.25 * a * (1.0 + b * eta) * 2.0 / hx,
            0.25 * b * (1.0 + a * xi) * 2.0 / hy,
        )
    })
}

/// Quadrature weight including the Jacobian determinant.
pub fn weight(hx: f64, hy: f64) -> f64 {
    0.25 * hx * hy
}
