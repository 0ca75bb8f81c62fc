use std::collections::BTreeMap;

use super::{Gradients, NdError, Tape, Tensor};

/// Named collection of learnable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NdError> {
        self.tensors.get(name).ok_or_else(|| NdError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Copy with every tensor registered as a leaf on `tape`.
    pub fn watch(&self, tape: &Tape) -> ParamSet {
        let tensors = self.tensors.iter().map(|(k, v)| (k.clone(), tape.watch(v))).collect();
        ParamSet { tensors }
    }

    /// Gradient of each watched tensor, keyed by the same names.
    pub fn gradients(&self, grads: &Gradients) -> Result<ParamSet, NdError> {
        let mut out = ParamSet::new();
        for (name, leaf) in &self.tensors {
            out.insert(name.clone(), grads.wrt(leaf)?);
        }
        Ok(out)
    }

    pub fn detach(&self) -> ParamSet {
        let tensors = self.tensors.iter().map(|(k, v)| (k.clone(), v.detach())).collect();
        ParamSet { tensors }
    }

    pub fn zeros_like(&self) -> ParamSet {
        let tensors = self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
        ParamSet { tensors }
    }

    /// `self + scale * other`, elementwise over matching entries.
    pub fn axpy(&self, scale: f64, other: &ParamSet) -> Result<ParamSet, NdError> {
        let mut out = ParamSet::new();
        for (name, p) in &self.tensors {
            let g = other.get(name)?;
            if g.shape() != p.shape() {
                return Err(NdError::Shape {
                    kind: "axpy",
                    detail: format!("{name}: {:?} vs {:?}", p.shape(), g.shape()),
                });
            }
            let data = p.data().iter().zip(g.data()).map(|(a, b)| a + scale * b).collect();
            out.insert(name.clone(), Tensor::new(p.shape().to_vec(), data)?);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// One plain gradient-descent update, `p - lr * g` for every parameter.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, lr: f64) -> Result<ParamSet, NdError> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(NdError::Invalid(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    params.axpy(-lr, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the largest error occurred.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` builds a scalar on the tape it is handed. For the analytic pass every
/// parameter is watched; the perturbed evaluations use untracked copies.
pub fn finite_diff_check<F, E>(f: F, params: &ParamSet, eps: f64) -> Result<FiniteDiffReport, E>
where
    F: Fn(&Tape, &ParamSet) -> Result<Tensor, E>,
    E: From<NdError>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(NdError::Invalid(format!("finite-difference step must be > 0, got {eps}")).into());
    }
    let tape = Tape::new();
    let watched = params.watch(&tape);
    let loss = f(&tape, &watched)?;
    let analytic = watched.gradients(&tape.backward(&loss)?)?;

    let eval = |p: &ParamSet| -> Result<f64, E> {
        let scratch = Tape::new();
        let v = f(&scratch, p)?.item()?;
        if !v.is_finite() {
            return Err(NdError::Numerics(format!("objective is {v} at a perturbed point")).into());
        }
        Ok(v)
    };

    let base = params.detach();
    let mut report = FiniteDiffReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for (name, tensor) in params.iter() {
        let grad = analytic.get(name)?;
        for idx in 0..tensor.len() {
            let shifted = |delta: f64| -> Result<ParamSet, NdError> {
                let mut data = tensor.data().to_vec();
                data[idx] += delta;
                let mut p = base.clone();
                p.insert(name, Tensor::new(tensor.shape().to_vec(), data)?);
                Ok(p)
            };
            let up = eval(&shifted(eps)?)?;
            let down = eval(&shifted(-eps)?)?;
            let central = (up - down) / (2.0 * eps);
            let a = grad.data()[idx];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(1e-8);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.to_string(), idx));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
