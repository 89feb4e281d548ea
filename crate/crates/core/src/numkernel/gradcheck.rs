//! Central finite-difference oracle for reverse-mode gradients.

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use super::tensor::Precision;
use crate::error::{Error, Result};

/// Default central-difference step for binary64 checks.
pub const DEFAULT_EPS: f64 = 1e-4;
/// Pass threshold on the relative error.
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let v = f(&mut g)?;
    let out = g.value(v);
    if out.len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    Ok(out.data()[0])
}

fn analytic_grads<F>(store: &ParamStore, f: &F) -> Result<Vec<(ParamId, crate::Tensor)>>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let v = f(&mut g)?;
    Ok(g.backward(v)?.param_grads())
}

fn require_binary64(store: &ParamStore) -> Result<()> {
    if store.precision() != Precision::Binary64 {
        return Err(Error::Contract(format!(
            "gradient checks need binary64 parameters, store is {}",
            store.precision()
        )));
    }
    Ok(())
}

fn check_determinism<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let a = eval(store, f)?;
    let b = eval(store, f)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {a} then {b}"
        )));
    }
    Ok(a)
}

fn numeric_vs_analytic<F>(
    scratch: &mut ParamStore,
    id: ParamId,
    analytic: &[f64],
    eps: f64,
    f: &F,
) -> Result<GradCheckEntry>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let name = scratch.get(id).name.clone();
    let mut entry = GradCheckEntry {
        name,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for k in 0..analytic.len() {
        let orig = scratch.get(id).value.data()[k];
        scratch.get_mut(id).value.data_mut()[k] = orig + eps;
        let plus = eval(scratch, f)?;
        scratch.get_mut(id).value.data_mut()[k] = orig - eps;
        let minus = eval(scratch, f)?;
        scratch.get_mut(id).value.data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[k] - numeric).abs() / numeric.abs().max(1.0);
        if !rel.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient comparison for {}[{k}]",
                entry.name
            )));
        }
        if rel > entry.max_rel_err || k == 0 {
            entry.max_rel_err = rel.max(entry.max_rel_err);
            entry.worst_index = k;
            entry.analytic = analytic[k];
            entry.numeric = numeric;
        }
    }
    Ok(entry)
}

/// Compares the reverse-mode gradient of `f` with respect to `param` against
/// central differences and returns the maximum of
/// `|analytic − numeric| / max(1, |numeric|)` over the parameter's entries.
pub fn finite_diff_check<F>(store: &ParamStore, param: ParamId, eps: f64, f: F) -> Result<GradCheckEntry>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    require_binary64(store)?;
    check_determinism(store, &f)?;
    let grads = analytic_grads(store, &f)?;
    let analytic = grads
        .iter()
        .find(|(id, _)| *id == param)
        .map(|(_, g)| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; store.value(param).len()]);
    let mut scratch = store.clone();
    numeric_vs_analytic(&mut scratch, param, &analytic, eps, &f)
}

/// Options for [`check_all_params`].
#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub eps: f64,
    /// Test hook: adds 1.0 to the first analytic entry of the named parameter.
    pub corrupt: Option<String>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, corrupt: None }
    }
}

/// Runs the oracle over every parameter in the store, in registration order.
pub fn check_all_params<F>(store: &ParamStore, opts: &CheckOptions, f: F) -> Result<Vec<GradCheckEntry>>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    require_binary64(store)?;
    check_determinism(store, &f)?;
    let grads = analytic_grads(store, &f)?;
    let mut scratch = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for id in store.ids() {
        let mut analytic = grads
            .iter()
            .find(|(gid, _)| *gid == id)
            .map(|(_, g)| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; store.value(id).len()]);
        if opts.corrupt.as_deref() == Some(store.get(id).name.as_str()) {
            analytic[0] += 1.0;
        }
        out.push(numeric_vs_analytic(&mut scratch, id, &analytic, opts.eps, &f)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;
    use std::cell::Cell;

    #[test]
    fn quadratic_gradient_matches() {
        let mut store = ParamStore::new(Precision::Binary64);
        let p = store.add("p", Tensor::vector(&[3.0])).unwrap();
        let e = finite_diff_check(&store, p, DEFAULT_EPS, |g| {
            let v = g.param(p);
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert_eq!(e.analytic, 6.0);
        assert!((e.numeric - 6.0).abs() < 1e-6);
        assert!(e.max_rel_err < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new(Precision::Binary64);
        let p = store.add("p", Tensor::vector(&[1.0, 2.0])).unwrap();
        let e = finite_diff_check(&store, p, DEFAULT_EPS, |g| Ok(g.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(e.analytic, 0.0);
        assert_eq!(e.numeric, 0.0);
        assert_eq!(e.max_rel_err, 0.0);
    }

    #[test]
    fn detects_non_determinism() {
        let mut store = ParamStore::new(Precision::Binary64);
        let p = store.add("p", Tensor::vector(&[1.0])).unwrap();
        let calls = Cell::new(0.0);
        let r = finite_diff_check(&store, p, DEFAULT_EPS, |g| {
            calls.set(calls.get() + 1.0);
            let v = g.param(p);
            Ok(g.scale(v, calls.get()))
        });
        assert!(matches!(r, Err(Error::Oracle(_))));
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new(Precision::Binary64);
        store.add("a", Tensor::vector(&[0.5, -1.0])).unwrap();
        let f = |g: &mut Graph| {
            let a = g.param(ParamId(0));
            let t = g.activation(a, crate::Activation::Tanh);
            Ok(g.sum(t))
        };
        let ok = check_all_params(&store, &CheckOptions::default(), f).unwrap();
        assert!(ok[0].passes(DEFAULT_TOL));
        let opts = CheckOptions { corrupt: Some("a".into()), ..Default::default() };
        let bad = check_all_params(&store, &opts, f).unwrap();
        assert!(!bad[0].passes(DEFAULT_TOL));
    }

    #[test]
    fn rejects_binary32_store() {
        let mut store = ParamStore::new(Precision::Binary32);
        let p = store.add("p", Tensor::vector(&[1.0])).unwrap();
        assert!(finite_diff_check(&store, p, DEFAULT_EPS, |g| Ok(g.param(p))).is_err());
    }
}
