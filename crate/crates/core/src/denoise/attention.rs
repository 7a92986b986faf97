//! Scaled dot-product attention where each view attends over the keys and
//! values of its related views.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use super::graph::ViewGraph;
use crate::error::{Error, Result};

/// `softmax(Q·Kᵀ/√d)·V`, row-wise, with max subtraction for stability.
pub fn scaled_dot_product(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>) -> Array2<f64> {
    let d = q.ncols() as f64;
    let mut logits = q.dot(&k.t()) / d.sqrt();
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    logits.dot(&v)
}

/// For each view `n`, attends its queries over the concatenated keys and
/// values of `graph.related(n)`, in graph order.
pub fn related_view_attention(
    queries: &[Array2<f64>],
    keys: &[Array2<f64>],
    values: &[Array2<f64>],
    graph: &ViewGraph,
) -> Result<Vec<Array2<f64>>> {
    let n = queries.len();
    if keys.len() != n || values.len() != n || graph.num_views() != n {
        return Err(Error::Shape(format!(
            "{} query, {} key, {} value sets for a {}-view graph",
            n,
            keys.len(),
            values.len(),
            graph.num_views()
        )));
    }
    let Some(first) = queries.first() else {
        return Ok(Vec::new());
    };
    let (tokens, d) = first.dim();
    let dv = values[0].ncols();
    for v in 0..n {
        if queries[v].dim() != (tokens, d) || keys[v].dim() != (tokens, d) {
            return Err(Error::Shape(format!(
                "view {v}: queries {:?} / keys {:?}, expected ({tokens}, {d})",
                queries[v].dim(),
                keys[v].dim()
            )));
        }
        if values[v].dim() != (tokens, dv) {
            return Err(Error::Shape(format!(
                "view {v}: values {:?}, expected ({tokens}, {dv})",
                values[v].dim()
            )));
        }
    }
    (0..n)
        .map(|v| {
            let rel = graph.related(v);
            let k_views: Vec<_> = rel.iter().map(|&r| keys[r].view()).collect();
            let v_views: Vec<_> = rel.iter().map(|&r| values[r].view()).collect();
            let k = concatenate(Axis(0), &k_views).map_err(|e| Error::Shape(e.to_string()))?;
            let vv = concatenate(Axis(0), &v_views).map_err(|e| Error::Shape(e.to_string()))?;
            Ok(scaled_dot_product(queries[v].view(), k.view(), vv.view()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn equal_keys_average_values() {
        let q = array![[0.3, -1.0], [2.0, 0.5]];
        let k = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let v = array![[1.0], [2.0], [6.0]];
        let out = scaled_dot_product(q.view(), k.view(), v.view());
        for r in out.rows() {
            assert!((r[0] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((2, 4));
        let g = ViewGraph::complete(2);
        assert!(related_view_attention(
            &[a.clone(), b.clone()],
            &[a.clone(), a.clone()],
            &[a.clone(), a.clone()],
            &g
        )
        .is_err());
        assert!(related_view_attention(
            std::slice::from_ref(&a),
            std::slice::from_ref(&a),
            std::slice::from_ref(&a),
            &g
        )
        .is_err());
    }
}
