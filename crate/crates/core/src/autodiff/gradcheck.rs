//! Finite-difference checks of reverse-mode gradients.
//!
//! Errors are reported per tensor as `max |analytic - numeric|` divided by
//! the larger of the two tensors' max-abs values, so entries with tiny
//! gradients are judged against the scale of their tensor.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Default initial step of the extrapolation.
pub const FD_STEP: f64 = 1e-3;

/// Gradient agreement for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub entries: usize,
    pub max_abs_grad: f64,
    pub rel_error: f64,
    /// Entries whose stencil could not avoid a kink.
    pub straddled: usize,
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn eval<F>(store: &ParamStore<f64>, f: &mut F) -> Result<(f64, Vec<bool>)>
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let root = f(&mut g)?;
    Ok((g.value(root).item(), g.kink_pattern()))
}

/// Halvings of the initial step tried before a kink is accepted.
const MAX_HALVINGS: usize = 30;
/// Rows of the extrapolation tableau.
const TABLEAU: usize = 8;
const SHRINK: f64 = 1.4;

/// Ridders' extrapolation of central differences of `at` around 0 from
/// initial step `h`. Returns the estimate and whether every evaluation
/// stayed on the base point's smooth piece.
fn ridders(h: f64, mut at: impl FnMut(f64) -> Result<(f64, bool)>) -> Result<(f64, bool)> {
    let mut smooth = true;
    let mut central = |h: f64| -> Result<f64> {
        let (p, sp) = at(h)?;
        let (m, sm) = at(-h)?;
        smooth &= sp && sm;
        Ok((p - m) / (2.0 * h))
    };
    let con2 = SHRINK * SHRINK;
    let mut hh = h;
    let mut prev = vec![central(hh)?];
    let mut best = prev[0];
    let mut err = f64::INFINITY;
    for _ in 1..TABLEAU {
        hh /= SHRINK;
        let mut row = vec![central(hh)?];
        let mut fac = con2;
        for k in 1..=prev.len() {
            let v = (row[k - 1] * fac - prev[k - 1]) / (fac - 1.0);
            fac *= con2;
            let e = (v - row[k - 1]).abs().max((v - prev[k - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        let last = row.len() - 1;
        if (row[last] - prev[last - 1]).abs() >= 2.0 * err {
            break;
        }
        prev = row;
    }
    Ok((best, smooth))
}

/// Compares backward gradients of every parameter in `store` against
/// Ridders-extrapolated central differences of the scalar built by `f`,
/// starting from step `step`.
///
/// A stencil that changes the sign of any PReLU input straddles a kink;
/// its initial step is halved until all points share the base point's
/// smooth piece.
pub fn check_params<F>(store: &mut ParamStore<f64>, step: f64, mut f: F) -> Result<Vec<GradCheck>>
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<Var>,
{
    let mut buffer = store.grad_buffer();
    let base = {
        let mut g = Graph::new(store);
        let root = f(&mut g)?;
        let pattern = g.kink_pattern();
        g.backward(root)?.accumulate(&mut buffer);
        pattern
    };
    let mut report = Vec::with_capacity(store.len());
    for idx in 0..store.len() {
        let id = ParamId(idx);
        let analytic = buffer.get(id).to_f64();
        let mut numeric = vec![0.0; analytic.len()];
        let mut straddled = 0;
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).value().data()[j];
            let mut h = step;
            for attempt in 0..=MAX_HALVINGS {
                let (d, smooth) = ridders(h, |dx| {
                    store.get_mut(id).value_mut().data_mut()[j] = orig + dx;
                    let (v, pattern) = eval(store, &mut f)?;
                    Ok((v, pattern == base))
                })?;
                *slot = d;
                if smooth {
                    break;
                }
                if attempt == MAX_HALVINGS {
                    straddled += 1;
                }
                h *= 0.5;
            }
            store.get_mut(id).value_mut().data_mut()[j] = orig;
        }
        report.push(GradCheck {
            name: store.get(id).name().to_owned(),
            entries: analytic.len(),
            max_abs_grad: analytic.iter().map(|v| v.abs()).fold(0.0, f64::max),
            rel_error: relative_error(&analytic, &numeric),
            straddled,
        });
    }
    Ok(report)
}

/// Same check for the inputs of a parameter-free expression. Returns one
/// relative error per input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let value = |vals: &[Tensor<f64>]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::detached();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok((g.value(root).item(), g.kink_pattern()))
    };
    let (analytic, base) = {
        let mut g = Graph::detached();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        let grads = g.backward(root)?;
        let a: Vec<Option<Tensor<f64>>> = vars.iter().map(|&v| grads.wrt(v).cloned()).collect();
        (a, g.kink_pattern())
    };
    let mut errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let a = analytic[i]
            .as_ref()
            .map_or_else(|| vec![0.0; input.len()], |t| t.to_f64());
        let mut numeric = vec![0.0; input.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[j];
            let mut h = step;
            for _ in 0..=MAX_HALVINGS {
                let (d, smooth) = ridders(h, |dx| {
                    work[i].data_mut()[j] = orig + dx;
                    let (v, pattern) = value(&work)?;
                    Ok((v, pattern == base))
                })?;
                *slot = d;
                if smooth {
                    break;
                }
                h *= 0.5;
            }
            work[i].data_mut()[j] = orig;
        }
        errors.push(relative_error(&a, &numeric));
    }
    Ok(errors)
}
