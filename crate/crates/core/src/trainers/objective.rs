use crate::error::{Error, Result};
use crate::fisher::FisherDiagonal;
use crate::paramspace::{loss_and_grad, Batch, ClassId, GradientVector, ParamVector};

/// Fisher-weighted pull towards an anchor:
/// `strength / 2 * sum_j F_j (theta_j - anchor_j)^2`.
#[derive(Clone, Copy, Debug)]
pub struct AnchorPenalty<'a> {
    pub strength: f64,
    pub fisher: &'a FisherDiagonal,
    pub anchor: &'a ParamVector,
}

impl AnchorPenalty<'_> {
    fn check(&self, params: &ParamVector) -> Result<()> {
        params.ensure_same_layout(self.anchor.layout())?;
        if self.fisher.layout() != params.layout() {
            return Err(Error::Layout(
                "penalty fisher layout differs from the parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn value(&self, params: &ParamVector) -> Result<f64> {
        self.check(params)?;
        let mut s = 0.0;
        for ((&x, &a), &f) in params
            .values()
            .iter()
            .zip(self.anchor.values())
            .zip(self.fisher.values())
        {
            let d = x - a;
            s += f * d * d;
        }
        Ok(0.5 * self.strength * s)
    }

    /// Adds `strength * F * (theta - anchor)` to `grad`.
    pub fn add_gradient(&self, params: &ParamVector, grad: &mut GradientVector) -> Result<()> {
        self.check(params)?;
        if grad.layout() != params.layout() {
            return Err(Error::Layout(
                "gradient layout differs from the parameters".into(),
            ));
        }
        for (((g, &x), &a), &f) in grad
            .values_mut()
            .iter_mut()
            .zip(params.values())
            .zip(self.anchor.values())
            .zip(self.fisher.values())
        {
            *g += self.strength * (f * (x - a));
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("penalized gradient"));
        }
        Ok(())
    }
}

/// Masked cross-entropy plus the optional anchor penalty, with its gradient.
pub fn objective_and_grad(
    params: &ParamVector,
    batch: Batch<'_>,
    mask: Option<&[ClassId]>,
    penalty: Option<&AnchorPenalty<'_>>,
) -> Result<(f64, GradientVector)> {
    let (mut loss, mut grad) = loss_and_grad(params, batch, mask)?;
    if let Some(p) = penalty {
        loss += p.value(params)?;
        p.add_gradient(params, &mut grad)?;
    }
    Ok((loss, grad))
}
