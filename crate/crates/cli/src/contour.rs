//! Marching-squares iso-contours of an element field.
//!
//! Samples sit at element centers. The grid is padded with a ring of void
//! samples so that solid touching the domain edge still yields closed
//! loops. A sample counts as solid when it is `>= level`. Loops keep solid
//! on their left: outer boundaries run counter-clockwise, holes clockwise.
//! Saddle cells are resolved by the mean of their four corners: a solid
//! mean joins the two solid corners, otherwise they stay apart.

use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Cell edge between two neighboring samples of the padded grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Edge {
    /// From `(i, j)` to `(i + 1, j)`.
    H(usize, usize),
    /// From `(i, j)` to `(i, j + 1)`.
    V(usize, usize),
}

struct Padded<'a> {
    nex: usize,
    ney: usize,
    field: &'a [f64],
}

impl Padded<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        if i == 0 || j == 0 || i > self.nex || j > self.ney {
            0.0
        } else {
            self.field[(j - 1) * self.nex + (i - 1)]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    /// Closed polylines in meters; the last vertex connects to the first.
    pub loops: Vec<Vec<(f64, f64)>>,
}

impl Contour {
    /// Signed shoelace area of each loop.
    pub fn areas(&self) -> Vec<f64> {
        self.loops.iter().map(|l| signed_area(l)).collect()
    }
}

pub fn signed_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    0.5 * (0..n)
        .map(|k| {
            let (a, b) = (pts[k], pts[(k + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
}

/// Extracts the `level` iso-contour of an `nex x ney` element field on a
/// `lx x ly` domain. Returns `None` when the field never crosses `level`.
pub fn extract(nex: usize, ney: usize, lx: f64, ly: f64, field: &[f64], level: f64) -> Option<Contour> {
    assert_eq!(field.len(), nex * ney);
    let solid = field.iter().filter(|&&v| v >= level).count();
    if solid == 0 || solid == field.len() {
        return None;
    }
    let grid = Padded { nex, ney, field };
    let (hx, hy) = (lx / nex as f64, ly / ney as f64);
    let point = |e: Edge| -> (f64, f64) {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::H(i, j) => ((i, j), (i + 1, j)),
            Edge::V(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (grid.at(i0, j0), grid.at(i1, j1));
        let t = (level - a) / (b - a);
        let x0 = (i0 as f64 - 0.5) * hx;
        let y0 = (j0 as f64 - 0.5) * hy;
        let x1 = (i1 as f64 - 0.5) * hx;
        let y1 = (j1 as f64 - 0.5) * hy;
        (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    };

    // Directed segments keyed by their start edge.
    let mut next: BTreeMap<Edge, Edge> = BTreeMap::new();
    for j in 0..=ney {
        for i in 0..=nex {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let values = corners.map(|(a, b)| grid.at(a, b));
            let inside = values.map(|v| v >= level);
            // Cell edges counter-clockwise, matching corner k -> k + 1.
            let edges = [Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j)];
            let mut crossings: Vec<(Edge, bool)> = Vec::with_capacity(4);
            for k in 0..4 {
                if inside[k] != inside[(k + 1) % 4] {
                    // `true` when leaving the solid.
                    crossings.push((edges[k], inside[k]));
                }
            }
            match crossings.len() {
                0 => {}
                2 => {
                    let (exit, entry) = if crossings[0].1 {
                        (crossings[0].0, crossings[1].0)
                    } else {
                        (crossings[1].0, crossings[0].0)
                    };
                    next.insert(exit, entry);
                }
                4 => {
                    let mean = values.iter().sum::<f64>() / 4.0;
                    let joined = mean >= level;
                    for k in 0..4 {
                        if crossings[k].1 {
                            let partner = if joined { (k + 1) % 4 } else { (k + 3) % 4 };
                            next.insert(crossings[k].0, crossings[partner].0);
                        }
                    }
                }
                _ => unreachable!("a cell has an even number of crossings"),
            }
        }
    }

    let mut loops = Vec::new();
    while let Some((&start, _)) = next.iter().next() {
        let mut pts = Vec::new();
        let mut e = start;
        loop {
            pts.push(point(e));
            e = next.remove(&e).expect("every crossing continues");
            if e == start {
                break;
            }
        }
        loops.push(pts);
    }
    Some(Contour { loops })
}

pub fn contour_csv(c: &Contour) -> String {
    let mut s = String::from("loop,vertex,x_mm,y_mm\n");
    for (l, pts) in c.loops.iter().enumerate() {
        for (k, &(x, y)) in pts.iter().enumerate() {
            let _ = writeln!(s, "{l},{k},{},{}", x * 1e3, y * 1e3);
        }
    }
    s
}

/// SVG in millimeters; the y axis is flipped so the domain top is up.
pub fn contour_svg(c: &Contour, lx: f64, ly: f64) -> String {
    let (w, h) = (lx * 1e3, ly * 1e3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}mm\" height=\"{h}mm\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#999\" stroke-width=\"0.2\"/>"
    );
    let mut d = String::new();
    for pts in &c.loops {
        for (k, &(x, y)) in pts.iter().enumerate() {
            let cmd = if k == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.4},{:.4} ", x * 1e3, h - y * 1e3);
        }
        d.push_str("Z ");
    }
    let _ = writeln!(
        s,
        "<path d=\"{}\" fill=\"#333\" fill-rule=\"evenodd\" stroke=\"#000\" stroke-width=\"0.1\"/>",
        d.trim_end()
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(n: usize, lo: usize, hi: usize) -> Vec<f64> {
        (0..n * n)
            .map(|e| {
                let (i, j) = (e % n, e / n);
                if (lo..hi).contains(&i) && (lo..hi).contains(&j) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn uniform_fields_have_no_contour() {
        assert!(extract(3, 3, 3.0, 3.0, &[0.8; 9], 0.5).is_none());
        assert!(extract(3, 3, 3.0, 3.0, &[0.1; 9], 0.5).is_none());
    }

    #[test]
    fn square_block_gives_one_counter_clockwise_loop() {
        // 4 x 4 solid block at elements 2..6 of an 8 x 8 unit grid. Edge
        // crossings sit halfway between centers, at x, y in {2, 6}; each
        // corner cell cuts a 0.5 x 0.5 triangle: area 16 - 4 * 0.125.
        let c = extract(8, 8, 8.0, 8.0, &block(8, 2, 6), 0.5).unwrap();
        assert_eq!(c.loops.len(), 1);
        let area = c.areas()[0];
        assert!((area - 15.5).abs() < 1e-12, "{area}");
        for &(x, y) in &c.loops[0] {
            assert!((2.0..=6.0).contains(&x) && (2.0..=6.0).contains(&y));
            assert!(x == 2.0 || x == 6.0 || y == 2.0 || y == 6.0);
        }
        assert_eq!(c.loops[0].len(), 16);
    }

    #[test]
    fn hole_runs_clockwise() {
        let mut f = block(8, 1, 7);
        for j in 3..5 {
            for i in 3..5 {
                f[j * 8 + i] = 0.0;
            }
        }
        let c = extract(8, 8, 8.0, 8.0, &f, 0.5).unwrap();
        let mut areas = c.areas();
        areas.sort_by(f64::total_cmp);
        assert_eq!(areas.len(), 2);
        assert!(areas[0] < 0.0 && areas[1] > 0.0);
    }

    #[test]
    fn saddle_follows_the_corner_mean() {
        // Diagonal pair of solid elements. The shared cell has mean 0.5.
        let f = [1.0, 0.0, 0.0, 1.0];
        let joined = extract(2, 2, 2.0, 2.0, &f, 0.5).unwrap();
        assert_eq!(joined.loops.len(), 1);
        let split = extract(2, 2, 2.0, 2.0, &f, 0.6).unwrap();
        assert_eq!(split.loops.len(), 2);
        assert!(split.areas().iter().all(|&a| a > 0.0));
        // Same input, same output.
        assert_eq!(joined, extract(2, 2, 2.0, 2.0, &f, 0.5).unwrap());
    }

    #[test]
    fn svg_uses_millimeters() {
        let c = extract(8, 8, 0.08, 0.08, &block(8, 2, 6), 0.5).unwrap();
        let svg = contour_svg(&c, 0.08, 0.08);
        assert!(svg.contains("width=\"80mm\""));
        assert!(svg.contains("viewBox=\"0 0 80 80\""));
        let csv = contour_csv(&c);
        assert_eq!(csv.lines().count(), 1 + 16);
    }
}
