use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::render::Traced;
use crate::scalar::Scalar;
use crate::scene::{SceneModel, SceneVars};

/// Mean over rays of the Euclidean RGB error: `rgb: [r, 3]`, `target: [r, 3]`.
pub fn rec_loss<T: Scalar>(g: &mut Graph<'_, T>, rgb: Var, target: Var) -> Result<Var> {
    let diff = g.sub(rgb, target)?;
    let norms = g.row_norm(diff)?;
    g.mean(norms)
}

/// `(1/r) Σᵢ wᵢ ‖pᵢ − inverse(uv(pᵢ))‖` over the coloured samples of a traced
/// batch. The weights enter as constants. `None` when no sample was coloured.
pub fn cycle_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &SceneModel<T>,
    vars: &SceneVars,
    traced: &Traced,
) -> Result<Option<Var>> {
    let (Some(s), Some(w)) = (traced.colored.s, traced.weights) else { return Ok(None) };
    let idx = &traced.colored.samples;
    let wv = g.value(w).data();
    let weights: Vec<T> = idx.iter().map(|&i| wv[i]).collect();
    let points: Vec<Vec3> = idx.iter().map(|&i| traced.batch.positions[i]).collect();
    weighted_cycle(g, model, vars, s, &points, weights, traced.batch.rays())
}

/// `‖pᵢ − inverse(sᵢ)‖` for `s: [k, 3]`.
fn cycle_distances<T: Scalar>(g: &mut Graph<'_, T>, model: &SceneModel<T>, vars: &SceneVars, s: Var, points: &[Vec3]) -> Result<Var> {
    let mapped = model.inverse_at(g, vars, s)?;
    let p = g.constant(Tensor::new(vec![points.len(), 3], points.iter().flatten().map(|&v| T::of(v)).collect())?);
    let diff = g.sub(p, mapped)?;
    g.row_norm(diff)
}

/// Weighted round-trip error for explicit sphere points `s: [k, 3]`, world
/// points and weights, normalized by `rays`.
pub fn weighted_cycle<T: Scalar>(
    g: &mut Graph<'_, T>,
    model: &SceneModel<T>,
    vars: &SceneVars,
    s: Var,
    points: &[Vec3],
    weights: Vec<T>,
    rays: usize,
) -> Result<Option<Var>> {
    if points.is_empty() {
        return Ok(None);
    }
    if weights.len() != points.len() || g.shape(s) != [points.len(), 3] {
        return Err(Error::shape("cycle_loss", format!("{} points, {} weights, s {:?}", points.len(), weights.len(), g.shape(s))));
    }
    let dist = cycle_distances(g, model, vars, s, points)?;
    let w = g.constant(Tensor::new(vec![points.len()], weights)?);
    let weighted = g.mul(dist, w)?;
    let total = g.sum(weighted)?;
    Ok(Some(g.scale(total, T::one() / T::of(rays.max(1) as f64))?))
}
