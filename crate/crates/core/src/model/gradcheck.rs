use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};
use crate::rng;

/// Floor on the relative-error denominator, so probes whose true gradient is
/// zero are judged by absolute error. Central differences at h = 1e-4 carry
/// roundoff near 1e-12 for O(1) losses, which this keeps below 1e-6.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: Vec<Probe>,
}

/// Compares analytic gradients with central differences
/// `(L(w + h) - L(w - h)) / 2h` at `probe_count` random scalars.
///
/// `loss_fn` must be deterministic; it returns the loss and the gradients
/// aligned with `params.tensors()`. `params` is restored before returning.
pub fn gradient_check<P, F>(
    params: &mut P,
    mut loss_fn: F,
    probe_count: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: FnMut(&P) -> Result<(f64, Gradients)>,
{
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let candidates: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] > 0).collect();
    let mut r = rng::stream(seed, rng::mix(&[0x96AD]));
    let picks: Vec<(usize, usize)> = (0..probe_count)
        .map(|_| {
            let t = candidates[(rng::uniform(&mut r) * candidates.len() as f64) as usize % candidates.len()];
            let i = (rng::uniform(&mut r) * sizes[t] as f64) as usize % sizes[t];
            (t, i)
        })
        .collect();
    gradient_check_at(params, &mut loss_fn, &picks, step)
}

/// Same as [`gradient_check`] at explicit `(tensor index, element index)` probes.
pub fn gradient_check_at<P, F>(
    params: &mut P,
    mut loss_fn: F,
    probes: &[(usize, usize)],
    step: f64,
) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: FnMut(&P) -> Result<(f64, Gradients)>,
{
    let (loss, grads) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let mut out = Vec::with_capacity(probes.len());
    let mut max_rel: f64 = 0.0;
    for &(t, i) in probes {
        let original = params.tensors()[t].data[i];
        params.tensors_mut()[t].data[i] = original + step;
        let plus = loss_fn(params)?.0;
        params.tensors_mut()[t].data[i] = original - step;
        let minus = loss_fn(params)?.0;
        params.tensors_mut()[t].data[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric("non-finite loss during finite differences".into()));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.tensors[t][i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
        out.push(Probe { tensor: params.tensors()[t].name.clone(), index: i, analytic, numeric, rel_error: rel });
    }
    Ok(GradCheckReport { max_rel_error: max_rel, probes: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamTensor, Parameters};

    struct Vector(ParamTensor);

    impl ParamSet for Vector {
        fn tensors(&self) -> Vec<&ParamTensor> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let mut w = Vector(ParamTensor { name: "w".into(), shape: vec![5], data: vec![0.3, -1.2, 2.0, 0.0, 7.5] });
        let loss = |p: &Vector| {
            let d = &p.0.data;
            Ok((0.5 * d.iter().map(|v| v * v).sum::<f64>(), Gradients { tensors: vec![d.clone()] }))
        };
        let report = gradient_check(&mut w, loss, 10, 1e-4, 1).unwrap();
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
        assert_eq!(w.0.data, vec![0.3, -1.2, 2.0, 0.0, 7.5]);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut w = Vector(ParamTensor { name: "w".into(), shape: vec![1], data: vec![2.0] });
        let loss = |p: &Vector| Ok((p.0.data[0].powi(3), Gradients { tensors: vec![vec![1.0]] }));
        let report = gradient_check(&mut w, loss, 1, 1e-4, 0).unwrap();
        assert!(report.max_rel_error > 0.5);
    }

    #[test]
    fn non_finite_loss_is_error() {
        let mut p = Parameters::zeros(&crate::model::ModelConfig::default()).unwrap();
        let loss = |p: &Parameters| Ok((f64::NAN, p.zero_gradients()));
        assert!(matches!(gradient_check(&mut p, loss, 1, 1e-4, 0), Err(Error::Numeric(_))));
    }
}
