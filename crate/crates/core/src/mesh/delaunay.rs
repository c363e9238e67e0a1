//! Bowyer–Watson Delaunay triangulation of a point cloud.
//!
//! Quadratic in the number of points, which is fine for the few thousand
//! vertices used here. Points are assumed to be in general enough position
//! that the triangulation of the convex hull is well defined; ties in the
//! in-circle predicate are resolved as "outside".

#[derive(Clone, Copy)]
struct Tri {
    v: [usize; 3],
    // circumcircle centre and squared radius
    cx: f64,
    cy: f64,
    r2: f64,
    alive: bool,
}

fn make_tri(p: &[[f64; 2]], v: [usize; 3]) -> Tri {
    let [a, b, c] = v;
    let (ax, ay) = (p[a][0], p[a][1]);
    let (bx, by) = (p[b][0], p[b][1]);
    let (cx, cy) = (p[c][0], p[c][1]);
    let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
    let uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
    let r2 = (ax - ux).powi(2) + (ay - uy).powi(2);
    Tri {
        v,
        cx: ux,
        cy: uy,
        r2,
        alive: true,
    }
}

pub(crate) fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Triangulates `points`, returning counterclockwise vertex triples.
pub fn triangulate(points: &[[f64; 2]]) -> Vec<[usize; 3]> {
    let n = points.len();
    if n < 3 {
        return Vec::new();
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let span = (xmax - xmin).max(ymax - ymin);
    let (mx, my) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.push([mx - 20.0 * span, my - 10.0 * span]);
    p.push([mx + 20.0 * span, my - 10.0 * span]);
    p.push([mx, my + 20.0 * span]);

    let mut tris = vec![make_tri(&p, [n, n + 1, n + 2])];
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let mut bad: Vec<usize> = Vec::new();

    for i in 0..n {
        let (x, y) = (p[i][0], p[i][1]);
        bad.clear();
        for (t, tri) in tris.iter().enumerate() {
            if !tri.alive {
                continue;
            }
            let d2 = (x - tri.cx).powi(2) + (y - tri.cy).powi(2);
            if d2 < tri.r2 * (1.0 - 1e-12) {
                bad.push(t);
            }
        }
        // boundary of the cavity: edges belonging to exactly one bad triangle
        edges.clear();
        for &t in &bad {
            let v = tris[t].v;
            for e in [[v[0], v[1]], [v[1], v[2]], [v[2], v[0]]] {
                if let Some(pos) = edges.iter().position(|f| f[0] == e[1] && f[1] == e[0]) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
            tris[t].alive = false;
        }
        for e in &edges {
            let mut v = [e[0], e[1], i];
            if orient(p[v[0]], p[v[1]], p[v[2]]) < 0.0 {
                v.swap(0, 1);
            }
            tris.push(make_tri(&p, v));
        }
        if tris.len() > 4 * n + 64 {
            tris.retain(|t| t.alive);
        }
    }
    tris.into_iter()
        .filter(|t| t.alive && t.v.iter().all(|&v| v < n))
        .map(|t| t.v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_with_centre() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let t = triangulate(&pts);
        assert_eq!(t.len(), 4);
        let area: f64 = t
            .iter()
            .map(|v| 0.5 * orient(pts[v[0]], pts[v[1]], pts[v[2]]))
            .sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_circumcircles() {
        let mut pts = Vec::new();
        let mut s = 12345u64;
        for _ in 0..200 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = (s >> 11) as f64 / (1u64 << 53) as f64;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let y = (s >> 11) as f64 / (1u64 << 53) as f64;
            pts.push([x, y]);
        }
        let t = triangulate(&pts);
        for v in &t {
            let tri = make_tri(&pts, *v);
            assert!(orient(pts[v[0]], pts[v[1]], pts[v[2]]) > 0.0);
            for (i, q) in pts.iter().enumerate() {
                if v.contains(&i) {
                    continue;
                }
                let d2 = (q[0] - tri.cx).powi(2) + (q[1] - tri.cy).powi(2);
                assert!(d2 >= tri.r2 * (1.0 - 1e-9));
            }
        }
    }
}
