use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Largest relative disagreement between the tape gradient of `f` at `x` and
/// a central finite difference with step `h`, over every coordinate.
///
/// Relative error per coordinate is `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: Float) -> Result<Float>
where
    F: Fn(&Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_at(f, x, h, &coords)
}

/// Like [`finite_diff_check`], restricted to the listed flat coordinates.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor, h: Float, coords: &[usize]) -> Result<Float>
where
    F: Fn(&Var) -> Result<Var>,
{
    Ok(finite_diff_errors(f, x, h, coords)?.coordinate)
}

/// Two summaries of the disagreement between tape and finite-difference
/// gradients over a set of coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdErrors {
    /// Worst `|a - n| / max(1e-8, |n|)` over the coordinates.
    pub coordinate: Float,
    /// `max |a - n| / max |n|`, insensitive to round-off on coordinates whose
    /// derivative is tiny next to the rest of the gradient.
    pub normwise: Float,
}

pub fn finite_diff_errors<F>(f: F, x: &Tensor, h: Float, coords: &[usize]) -> Result<FdErrors>
where
    F: Fn(&Var) -> Result<Var>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = f(&leaf)?;
    let analytic = tape.backward(&root)?.get(&leaf);

    let eval = |probe: Tensor| -> Result<Float> {
        let tape = Tape::new();
        Ok(f(&tape.constant(probe))?.item())
    };

    let (mut worst, mut diff, mut scale): (Float, Float, Float) = (0.0, 0.0, 0.0);
    for &i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let gap = (analytic.data()[i] - numeric).abs();
        worst = worst.max(gap / numeric.abs().max(1e-8));
        diff = diff.max(gap);
        scale = scale.max(numeric.abs());
    }
    Ok(FdErrors {
        coordinate: worst,
        normwise: diff / scale.max(1e-8),
    })
}
