use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean absolute error between two same-shaped tensors.
pub fn sr_loss<T: Scalar>(g: &mut Graph<T>, sr: Var, hq: Var) -> Result<Var> {
    if g.shape(sr) != g.shape(hq) {
        return Err(Error::dim(format!(
            "SR output {:?} and target {:?} differ",
            g.shape(sr),
            g.shape(hq)
        )));
    }
    let d = g.sub(sr, hq)?;
    let d = g.abs(d)?;
    g.mean(d)
}

/// Unweighted sum of the degradation and reconstruction terms.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, degradation: Option<Var>, sr: Var) -> Result<Var> {
    match degradation {
        Some(d) => g.add(d, sr),
        None => Ok(sr),
    }
}
