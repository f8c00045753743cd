//! Central finite-difference gradient checking.
//!
//! Only the forward values of a graph are used here, so the numeric gradient
//! does not share any code with the reverse pass it is compared against.

use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::rng;

/// Denominator floor for the relative error, so components whose true
/// gradient is zero are judged by absolute error instead.
pub const REL_FLOOR: f64 = 1e-3;

/// Builds the graph with `inputs` as trainable leaves and returns the scalar output.
pub trait Objective: Fn(&mut Graph, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph, &[Var]) -> Result<Var>> Objective for F {}

fn evaluate(inputs: &[Tensor], f: &impl Objective) -> Result<(Graph<'static>, Vec<Var>, Var)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

/// Numeric gradient of `f` with respect to every input by central differences.
pub fn numeric_gradients(inputs: &[Tensor], f: &impl Objective, h: f64) -> Result<Vec<Vec<f64>>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[i].numel()];
        for (j, slot) in grad.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let (g, _, o) = evaluate(&work, f)?;
            let plus = g.value(o).item();
            work[i].data_mut()[j] = orig - h;
            let (g, _, o) = evaluate(&work, f)?;
            let minus = g.value(o).item();
            work[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Reverse-mode gradient of `f` with respect to every input.
pub fn analytic_gradients(inputs: &[Tensor], f: &impl Objective) -> Result<Vec<Vec<f64>>> {
    let (g, vars, out) = evaluate(inputs, f)?;
    let grads = g.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .expect("trainable leaf has a gradient")
                .data()
                .to_vec()
        })
        .collect())
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between reverse-mode and finite-difference gradients.
pub fn max_relative_error(inputs: &[Tensor], f: impl Objective, h: f64) -> Result<f64> {
    let a = analytic_gradients(inputs, &f)?;
    let n = numeric_gradients(inputs, &f, h)?;
    Ok(a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max))
}

/// Like [`max_relative_error`] but compares at most `per_input` randomly
/// chosen coordinates of each input, for objectives too large to difference
/// exhaustively.
pub fn sampled_max_relative_error(
    inputs: &[Tensor],
    f: impl Objective,
    h: f64,
    per_input: usize,
    seed: u64,
) -> Result<f64> {
    let analytic = analytic_gradients(inputs, &f)?;
    let mut g = rng::stream(seed, "gradcheck", 0);
    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = if n <= per_input {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut g, n, per_input).into_vec()
        };
        for j in coords {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let (gp, _, o) = evaluate(&work, &f)?;
            let plus = gp.value(o).item();
            work[i].data_mut()[j] = orig - h;
            let (gm, _, o) = evaluate(&work, &f)?;
            let minus = gm.value(o).item();
            work[i].data_mut()[j] = orig;
            worst = worst.max(relative_error(analytic[i][j], (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}
