//! Central finite-difference gradient checks.

use crate::error::Result;
use crate::params::{Gradients, ParamStore};

/// Largest relative disagreement between the analytic gradient returned by
/// `f` and central differences with step `epsilon`:
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `f` maps a point to `(value, gradient)`.
pub fn grad_check<F>(mut f: F, point: &[f64], epsilon: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(
        analytic.len(),
        point.len(),
        "gradient length must match point"
    );
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let (up, _) = f(&x);
        x[i] = orig - epsilon;
        let (down, _) = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Runs [`grad_check`] over every trainable parameter of `store`, treating
/// each parameter tensor as the point while the others stay fixed.
/// `loss` records a forward pass and returns the scalar value with the
/// parameter gradients. Returns the worst error per parameter name.
pub fn check_params<F>(store: &ParamStore<f64>, epsilon: f64, loss: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(&ParamStore<f64>) -> Result<(f64, Gradients<f64>)>,
{
    let names: Vec<String> = store
        .names()
        .filter(|n| store.is_trainable(n))
        .map(String::from)
        .collect();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let point = store.get(&name).expect("listed name").to_f64_vec();
        let mut failure = None;
        let err = grad_check(
            |x| {
                let mut s = store.clone();
                s.set(&name, x.to_vec()).expect("same length");
                match loss(&s) {
                    Ok((v, g)) => {
                        let grad = g
                            .get(&name)
                            .map(|t| t.to_f64_vec())
                            .unwrap_or_else(|| vec![0.0; x.len()]);
                        (v, grad)
                    }
                    Err(e) => {
                        failure.get_or_insert(e.to_string());
                        (f64::NAN, vec![f64::NAN; x.len()])
                    }
                }
            },
            &point,
            epsilon,
        );
        if let Some(msg) = failure.take() {
            return Err(crate::error::Error::Numeric(format!(
                "loss failed during grad check of {name}: {msg}"
            )));
        }
        out.push((name, err));
    }
    Ok(out)
}
