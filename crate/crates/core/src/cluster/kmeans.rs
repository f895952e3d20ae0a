//! Two-way spatial split.

use super::ClusterError;

pub const MAX_ITERATIONS: usize = 100;

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Splits `points` into two non-empty index sets with Lloyd's algorithm
/// (k = 2). Centers start at the farthest pair of points; iteration stops
/// at an assignment fixpoint or after [`MAX_ITERATIONS`] rounds.
pub fn kmeans_split(points: &[[f64; 2]]) -> Result<(Vec<usize>, Vec<usize>), ClusterError> {
    if points.len() < 2 {
        return Err(ClusterError::TooSmall { size: points.len(), need: 2 });
    }
    let mut far = (0, 1, -1.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist2(&points[i], &points[j]);
            if d > far.2 {
                far = (i, j, d);
            }
        }
    }
    let mut centers = [points[far.0], points[far.1]];
    let mut assignment: Vec<bool> = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let next: Vec<bool> = points.iter().map(|p| dist2(p, &centers[1]) < dist2(p, &centers[0])).collect();
        let ones = next.iter().filter(|&&b| b).count();
        if ones == 0 || ones == points.len() {
            break;
        }
        if next == assignment {
            break;
        }
        assignment = next;
        for (k, center) in centers.iter_mut().enumerate() {
            let mut sum = [0.0; 2];
            let mut count = 0.0;
            for (p, &a) in points.iter().zip(&assignment) {
                if a == (k == 1) {
                    sum[0] += p[0];
                    sum[1] += p[1];
                    count += 1.0;
                }
            }
            *center = [sum[0] / count, sum[1] / count];
        }
    }
    if assignment.is_empty() {
        // every point sits on the bisector; fall back to the seed split
        assignment = (0..points.len()).map(|i| i == far.1).collect();
    }
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (i, &a) in assignment.iter().enumerate() {
        if a { second.push(i) } else { first.push(i) }
    }
    Ok((first, second))
}
