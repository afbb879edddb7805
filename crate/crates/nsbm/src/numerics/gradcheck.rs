use crate::numerics::{Gradients, ParamStore};
use crate::Result;

/// Worst relative error observed for one parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Compares analytic gradients against central finite differences.
///
/// `loss_fn` must evaluate the loss and its gradients for the given parameter
/// values, deterministically (fix any internal randomness by seed). The error
/// per entry is relative to `max(|analytic|, |numeric|)`; when that magnitude
/// is degenerate (below 1e-8) the absolute difference is used instead.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &mut ParamStore,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = loss_fn(params)?;
    let names = params.names();
    let mut entries = Vec::with_capacity(names.len());
    for name in &names {
        let count = params.get(name)?.numel();
        let mut max_err: f64 = 0.0;
        for i in 0..count {
            let orig = params.get(name)?.values()[i];
            params.get_mut(name)?.values_mut()[i] = orig + step;
            let (up, _) = loss_fn(params)?;
            params.get_mut(name)?.values_mut()[i] = orig - step;
            let (down, _) = loss_fn(params)?;
            params.get_mut(name)?.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let ana = analytic
                .get(name)
                .map(|g| g[i])
                .unwrap_or(0.0);
            let denom = numeric.abs().max(ana.abs());
            let err = if denom < 1e-8 {
                (numeric - ana).abs()
            } else {
                (numeric - ana).abs() / denom
            };
            max_err = max_err.max(err);
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: max_err,
        });
    }
    let pass = entries.iter().all(|e| e.max_rel_err <= tolerance);
    Ok(GradCheckReport {
        entries,
        tolerance,
        pass,
    })
}
