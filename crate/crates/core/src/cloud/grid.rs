// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use nalgebra::Vector3;

/// Uniform-grid spatial hash over a borrowed point slice. Query results are
/// ordered deterministically (by index, or by distance then index).
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> SpatialGrid<'a> {
    /// Panics unless `cell` is positive and finite.
    pub fn new(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(
            cell > 0.0 && cell.is_finite(),
            "grid cell size must be positive"
        );
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        SpatialGrid {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn points(&self) -> &'a [Vector3<f64>] {
        self.points
    }

    fn block(&self, q: &Vector3<f64>, r: f64, mut visit: impl FnMut(u32)) {
        let span = (r / self.cell).ceil() as i64;
        let c = key(q, self.cell);
        for x in (c[0] - span).max(self.lo[0])..=(c[0] + span).min(self.hi[0]) {
            for y in (c[1] - span).max(self.lo[1])..=(c[1] + span).min(self.hi[1]) {
                for z in (c[2] - span).max(self.lo[2])..=(c[2] + span).min(self.hi[2]) {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        ids.iter().for_each(|&i| visit(i));
                    }
                }
            }
        }
    }

    /// All points within distance `r` (inclusive) of `q`, as `(index,
    /// distance)` sorted by index.
    pub fn radius(&self, q: &Vector3<f64>, r: f64) -> Vec<(usize, f64)> {
        let r2 = r * r;
        let mut out = Vec::new();
        self.block(q, r, |i| {
            let d2 = (self.points[i as usize] - q).norm_squared();
            if d2 <= r2 {
                out.push((i as usize, d2.sqrt()));
            }
        });
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    /// Nearest point within distance `r` (inclusive); ties go to the lower
    /// index. Returns `(index, squared distance)`.
    pub fn nearest_within(&self, q: &Vector3<f64>, r: f64) -> Option<(usize, f64)> {
        let r2 = r * r;
        let mut best: Option<(usize, f64)> = None;
        self.block(q, r, |i| {
            let i = i as usize;
            let d2 = (self.points[i] - q).norm_squared();
            if d2 <= r2 && best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                best = Some((i, d2));
            }
        });
        best
    }

    /// The `k` nearest points as `(index, distance)`, sorted by distance then
    /// index.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let c = key(q, self.cell);
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for s in 0..=max_ring {
            // Once a shell spans more cells than are occupied, scanning every
            // point is cheaper.
            let shell = (2 * s + 1).pow(3) as usize;
            if shell > 8 * self.cells.len() {
                cand = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((p - q).norm_squared(), i))
                    .collect();
                break;
            }
            for x in c[0] - s..=c[0] + s {
                for y in c[1] - s..=c[1] + s {
                    for z in c[2] - s..=c[2] + s {
                        let on_shell =
                            (x - c[0]).abs() == s || (y - c[1]).abs() == s || (z - c[2]).abs() == s;
                        if !on_shell {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[x, y, z]) {
                            for &i in ids {
                                cand.push((
                                    (self.points[i as usize] - q).norm_squared(),
                                    i as usize,
                                ));
                            }
                        }
                    }
                }
            }
            if cand.len() >= k {
                cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.truncate(k);
                // Anything unvisited is at least `s` cells away.
                let reach = s as f64 * self.cell;
                if cand[k - 1].0 <= reach * reach {
                    break;
                }
            }
        }
        cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        cand.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }
}

fn key(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}
