//! Scan conversion of 2D triangles over a grid of cell centers.

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Edge function evaluated in a canonical vertex order, so the two triangles
/// sharing an edge see exactly negated values and the top-left rule is exact.
#[inline]
fn shared_edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    if (a.0, a.1) <= (b.0, b.1) {
        edge(a, b, p)
    } else {
        -edge(b, a, p)
    }
}

#[inline]
fn is_top_left(a: (f64, f64), b: (f64, f64)) -> bool {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Calls `f(x, y, bary)` for every cell whose center `(x + 0.5, y + 0.5)` lies
/// inside the triangle. Shared edges follow the top-left rule so adjacent
/// triangles never both claim a cell. `bary` is relative to the input vertex order.
pub fn scan_triangle(v: [(f64, f64); 3], width: usize, height: usize, mut f: impl FnMut(usize, usize, [f64; 3])) {
    let area = edge(v[0], v[1], v[2]);
    if !(area.abs() > 0.0) || !area.is_finite() {
        return;
    }
    // work in positive orientation, remember how to map back
    let (p, swapped) = if area > 0.0 {
        (v, false)
    } else {
        ([v[0], v[2], v[1]], true)
    };
    let area = area.abs();
    let min_x = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
    let max_x = p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let max_y = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    if max_x < 0.0 || max_y < 0.0 || min_x > width as f64 || min_y > height as f64 {
        return;
    }
    let x0 = (min_x - 0.5).floor().max(0.0) as usize;
    let x1 = ((max_x - 0.5).ceil().max(0.0) as usize).min(width.saturating_sub(1));
    let y0 = (min_y - 0.5).floor().max(0.0) as usize;
    let y1 = ((max_y - 0.5).ceil().max(0.0) as usize).min(height.saturating_sub(1));
    let tl = [
        is_top_left(p[1], p[2]),
        is_top_left(p[2], p[0]),
        is_top_left(p[0], p[1]),
    ];
    for y in y0..=y1 {
        let cy = y as f64 + 0.5;
        for x in x0..=x1 {
            let c = (x as f64 + 0.5, cy);
            let w = [
                shared_edge(p[1], p[2], c),
                shared_edge(p[2], p[0], c),
                shared_edge(p[0], p[1], c),
            ];
            let inside = w
                .iter()
                .zip(&tl)
                .all(|(&wi, &top_left)| wi > 0.0 || (wi == 0.0 && top_left));
            if inside {
                let l = [w[0] / area, w[1] / area, w[2] / area];
                let bary = if swapped { [l[0], l[2], l[1]] } else { l };
                f(x, y, bary);
            }
        }
    }
}

/// Barycentric coordinates of `p` in triangle `v`, or `None` if the triangle is
/// degenerate. Coordinates may be negative when `p` is outside.
pub fn barycentric(v: [(f64, f64); 3], p: (f64, f64)) -> Option<[f64; 3]> {
    let area = edge(v[0], v[1], v[2]);
    if !(area.abs() > 0.0) {
        return None;
    }
    Some([
        edge(v[1], v[2], p) / area,
        edge(v[2], v[0], p) / area,
        edge(v[0], v[1], p) / area,
    ])
}
