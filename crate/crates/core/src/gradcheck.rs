//! Central finite-difference check of [`Graph::backward`].

use alloc::vec::Vec;

use crate::array::Array;
use crate::error::Result;
use crate::ndgrad::{Graph, NodeId};

/// Denominator floor for the relative error, so exact zeros compare by
/// absolute difference.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Max relative error per leaf, in `point` order.
    pub per_leaf: Vec<f64>,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares analytic gradients against `(f(x+h) - f(x-h)) / 2h` for every
/// coordinate of every leaf.
///
/// `build` receives a fresh graph plus one leaf per entry of `point` and
/// returns the scalar loss node. It must be a pure function of the leaf
/// values. Points within `h` of a kink (clamp bound, ReLU hinge, smooth-L1
/// transition) are not differentiable there and can report large errors.
pub fn finite_difference_check<F>(build: F, point: &[Array], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    assert!(h > 0.0, "step must be positive");
    let eval = |values: &[Array]| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut graph = Graph::new();
        let leaves: Vec<NodeId> = values.iter().map(|v| graph.leaf(v.clone())).collect();
        let loss = build(&mut graph, &leaves)?;
        Ok((graph, leaves, loss))
    };

    let (graph, leaves, loss) = eval(point)?;
    let grads = graph.backward(loss)?;

    let mut values: Vec<Array> = point.to_vec();
    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, per_leaf: Vec::new(), coordinates: 0 };
    for (li, &leaf) in leaves.iter().enumerate() {
        let analytic = grads.of(leaf).data().to_vec();
        let mut leaf_max = 0.0f64;
        for (ci, &a) in analytic.iter().enumerate() {
            let original = values[li].data()[ci];
            values[li].data_mut()[ci] = original + h;
            let (g_plus, _, l_plus) = eval(&values)?;
            values[li].data_mut()[ci] = original - h;
            let (g_minus, _, l_minus) = eval(&values)?;
            values[li].data_mut()[ci] = original;
            let numeric = (g_plus.scalar(l_plus) - g_minus.scalar(l_minus)) / (2.0 * h);
            let rel = relative_error(a, numeric);
            leaf_max = leaf_max.max(rel);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.coordinates += 1;
        }
        report.max_rel_err = report.max_rel_err.max(leaf_max);
        report.per_leaf.push(leaf_max);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let report = finite_difference_check(
            |g, l| {
                let sq = g.square(l[0]);
                Ok(g.sum(sq))
            },
            &[Array::from_vec(alloc::vec![3.0])],
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-6, "{report:?}");
    }

    #[test]
    fn clamp_at_boundary_is_excluded_point() {
        // x sits on the clamp bound: backward reports 0, FD sees a half slope.
        let report = finite_difference_check(
            |g, l| {
                let c = g.clamp(l[0], 0.0, 1.0);
                Ok(g.sum(c))
            },
            &[Array::from_vec(alloc::vec![1.0])],
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_err > 1e-3);
    }
}
