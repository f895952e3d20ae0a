//! Ellipse fitting through the minimum-area bounding rectangle.

use std::f64::consts::PI;

use super::{ClusterError, ErrorEllipse, ErrorPixel};
use crate::types::Vec2;

/// Boundary slack for lattice point-in-ellipse tests.
const INSIDE_EPS: f64 = 1e-9;

fn cross(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull in counter-clockwise order without collinear vertices
/// (monotone chain).
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vec2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Oriented rectangle: `center + s * axis + t * normal` with
/// `|s| <= half_extents.x`, `|t| <= half_extents.y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub axis: Vec2,
    pub half_extents: Vec2,
}

impl OrientedRect {
    pub fn area(&self) -> f64 {
        4.0 * self.half_extents.x * self.half_extents.y
    }

    pub fn normal(&self) -> Vec2 {
        Vec2::new(-self.axis.y, self.axis.x)
    }
}

/// Smallest-area enclosing rectangle of a convex polygon. One side of the
/// optimum is collinear with a hull edge, so each edge direction is tried
/// as a caliper orientation.
pub fn min_area_rect(hull: &[Vec2]) -> Option<OrientedRect> {
    if hull.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, OrientedRect)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let axis = edge / len;
        let normal = Vec2::new(-axis.y, axis.x);
        let (mut s0, mut s1, mut t0, mut t1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in hull {
            let s = p.dot(&axis);
            let t = p.dot(&normal);
            s0 = s0.min(s);
            s1 = s1.max(s);
            t0 = t0.min(t);
            t1 = t1.max(t);
        }
        let area = (s1 - s0) * (t1 - t0);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let rect = OrientedRect {
                center: axis * (0.5 * (s0 + s1)) + normal * (0.5 * (t0 + t1)),
                axis,
                half_extents: Vec2::new(0.5 * (s1 - s0), 0.5 * (t1 - t0)),
            };
            best = Some((area, rect));
        }
    }
    best.map(|(_, r)| r)
}

fn inside(d: &Vec2, major_dir: &Vec2, a: f64, b: f64) -> bool {
    let u = d.dot(major_dir) / a;
    let v = (-d.x * major_dir.y + d.y * major_dir.x) / b;
    u * u + v * v <= 1.0 + INSIDE_EPS
}

/// Number of integer pixel centers inside the ellipse.
pub fn rasterized_area(center: &Vec2, semi_axes: &Vec2, angle: f64) -> usize {
    let dir = Vec2::new(angle.cos(), angle.sin());
    let (a, b) = (semi_axes.x, semi_axes.y);
    let hx = ((a * dir.x).powi(2) + (b * dir.y).powi(2)).sqrt();
    let hy = ((a * dir.y).powi(2) + (b * dir.x).powi(2)).sqrt();
    let mut count = 0;
    for y in (center.y - hy).floor() as i64..=(center.y + hy).ceil() as i64 {
        for x in (center.x - hx).floor() as i64..=(center.x + hx).ceil() as i64 {
            if inside(&(Vec2::new(x as f64, y as f64) - center), &dir, a, b) {
                count += 1;
            }
        }
    }
    count
}

/// Fits the ellipse inscribed in the minimum-area rectangle around the
/// pixel centers and returns it with its fill ratio: members inside the
/// ellipse over pixel centers inside the ellipse.
pub fn fit_ellipse(members: &[ErrorPixel]) -> Result<(ErrorEllipse, f64), ClusterError> {
    if members.is_empty() {
        return Err(ClusterError::TooSmall { size: 0, need: 3 });
    }
    let points: Vec<Vec2> = members.iter().map(|p| Vec2::new(p.x as f64, p.y as f64)).collect();
    let hull = convex_hull(&points);
    let rect = min_area_rect(&hull).ok_or(ClusterError::Degenerate)?;
    if rect.half_extents.min() <= 1e-9 {
        return Err(ClusterError::Degenerate);
    }

    let (major_dir, semi_axes) = if rect.half_extents.x >= rect.half_extents.y {
        (rect.axis, rect.half_extents)
    } else {
        (rect.normal(), Vec2::new(rect.half_extents.y, rect.half_extents.x))
    };
    let mut angle = major_dir.y.atan2(major_dir.x).rem_euclid(PI);
    if angle >= PI {
        angle = 0.0;
    }
    let dir = Vec2::new(angle.cos(), angle.sin());

    let inside_count = points
        .iter()
        .filter(|p| inside(&(*p - rect.center), &dir, semi_axes.x, semi_axes.y))
        .count();
    let area = rasterized_area(&rect.center, &semi_axes, angle);
    let fill = if area == 0 { 0.0 } else { inside_count as f64 / area as f64 };

    let nearest = points
        .iter()
        .enumerate()
        .fold((0, f64::MAX), |best, (i, p)| {
            let d = (p - rect.center).norm_squared();
            if d < best.1 { (i, d) } else { best }
        })
        .0;

    let ellipse = ErrorEllipse {
        center: rect.center,
        semi_axes,
        angle,
        representative_color: members[nearest].gt_color,
        members: members.iter().map(|p| [p.x, p.y]).collect(),
    };
    Ok((ellipse, fill))
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn px(x: i64, y: i64) -> ErrorPixel {
        ErrorPixel { x: x as usize, y: y as usize, rgb_error: 1.0, gt_color: [0.2, 0.4, 0.6] }
    }

    /// Pixels whose centers fall inside the ellipse; independent of the fit.
    fn rasterize_ellipse(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Vec<ErrorPixel> {
        let (c, s) = (angle.cos(), angle.sin());
        let mut out = Vec::new();
        for y in 0..200i64 {
            for x in 0..200i64 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    out.push(px(x, y));
                }
            }
        }
        out
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let pts: Vec<Vec2> = (0..3).flat_map(|y| (0..3).map(move |x| Vec2::new(x as f64, y as f64))).collect();
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        let area: f64 = (0..hull.len()).map(|i| cross(&Vec2::zeros(), &hull[i], &hull[(i + 1) % hull.len()])).sum();
        assert_relative_eq!(area / 2.0, 4.0);
    }

    #[test]
    fn min_rect_of_rotated_rectangle() {
        let (c, s) = (0.6f64, 0.8f64);
        let corners = [(-3.0, -1.0), (3.0, -1.0), (3.0, 1.0), (-3.0, 1.0)];
        let pts: Vec<Vec2> = corners.iter().map(|&(u, v)| Vec2::new(5.0 + u * c - v * s, 7.0 + u * s + v * c)).collect();
        let rect = min_area_rect(&convex_hull(&pts)).unwrap();
        assert_relative_eq!(rect.area(), 12.0, epsilon = 1e-9);
        assert_relative_eq!(rect.center, Vec2::new(5.0, 7.0), epsilon = 1e-9);
    }

    #[test]
    fn recovers_axis_aligned_ellipse() {
        let members = rasterize_ellipse(50.0, 50.0, 10.0, 5.0, 0.0);
        let (e, fill) = fit_ellipse(&members).unwrap();
        assert!((e.center - Vec2::new(50.0, 50.0)).norm() <= 0.5);
        assert!((e.semi_axes.x / 10.0 - 1.0).abs() <= 0.1, "{:?}", e.semi_axes);
        assert!((e.semi_axes.y / 5.0 - 1.0).abs() <= 0.1, "{:?}", e.semi_axes);
        assert!(fill >= 0.9, "fill {fill}");
        assert!(e.semi_axes.x >= e.semi_axes.y);
        assert!((0.0..PI).contains(&e.angle));
        assert_eq!(e.members.len(), members.len());
    }

    #[test]
    fn filled_square_fills_its_inscribed_circle() {
        let members: Vec<ErrorPixel> = (0..10).flat_map(|y| (0..10).map(move |x| px(x, y))).collect();
        let (e, fill) = fit_ellipse(&members).unwrap();
        assert_relative_eq!(e.center, Vec2::new(4.5, 4.5), epsilon = 1e-9);
        assert_relative_eq!(e.semi_axes, Vec2::new(4.5, 4.5), epsilon = 1e-9);
        // oracle: count half-integer offsets (u, v) in [0.5, 4.5]² with
        // u² + v² <= 4.5², times four quadrants; every one is a member
        let mut lattice = 0;
        for i in 0..5 {
            for j in 0..5 {
                let (u, v) = (0.5 + i as f64, 0.5 + j as f64);
                if u * u + v * v <= 20.25 {
                    lattice += 4;
                }
            }
        }
        assert_eq!(lattice, 60);
        assert_relative_eq!(fill, 60.0 / 60.0);
        // the corners left outside are the square's excess over the circle
        let outside = members.len() - lattice;
        assert_eq!(outside, 40);
    }

    #[test]
    fn l_shape_fills_poorly() {
        let mut members = Vec::new();
        for y in 0..20 {
            for x in 0..20 {
                if x < 5 || y >= 15 {
                    members.push(px(x, y));
                }
            }
        }
        let (_, fill) = fit_ellipse(&members).unwrap();
        assert!(fill < 0.8, "fill {fill}");
    }

    #[test]
    fn collinear_pixels_are_degenerate() {
        let members = vec![px(1, 1), px(2, 2), px(3, 3)];
        assert_eq!(fit_ellipse(&members).unwrap_err(), ClusterError::Degenerate);
        assert_eq!(fit_ellipse(&[px(4, 4), px(4, 4)]).unwrap_err(), ClusterError::Degenerate);
    }

    #[test]
    fn representative_color_is_nearest_member() {
        let mut members = rasterize_ellipse(30.0, 30.0, 6.0, 4.0, 0.3);
        for m in members.iter_mut() {
            if m.x == 30 && m.y == 30 {
                m.gt_color = [1.0, 0.0, 0.0];
            }
        }
        let (e, _) = fit_ellipse(&members).unwrap();
        assert!((e.center - Vec2::new(30.0, 30.0)).norm() < 0.5);
        assert_eq!(e.representative_color, [1.0, 0.0, 0.0]);
    }
}
