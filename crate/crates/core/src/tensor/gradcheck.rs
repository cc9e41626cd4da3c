//! Central finite-difference gradient checking.

use super::{ParamRegistry, Result, Tape, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `eps` for every element of every input. `f` must build a scalar.
///
/// `floor` keeps the relative error meaningful when both gradients vanish.
pub fn check_gradients<F>(inputs: &[Tensor], eps: f64, floor: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for j in 0..inputs[k].len() {
            let orig = probe[k].values[j];
            probe[k].values[j] = orig + eps;
            let up = eval(&probe)?;
            probe[k].values[j] = orig - eps;
            let down = eval(&probe)?;
            probe[k].values[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[j].abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic[j] - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}

/// Like [`check_gradients`], but differentiates with respect to registry
/// parameters. At most `per_param` evenly spaced elements of each trainable
/// parameter are probed.
pub fn check_param_gradients<F>(registry: &ParamRegistry, eps: f64, floor: f64, per_param: usize, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |reg: &ParamRegistry| -> Result<f64> {
        let mut tape = Tape::with_params(reg);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };
    let grads = {
        let mut tape = Tape::with_params(registry);
        let out = f(&mut tape)?;
        tape.backward(out)?.param_grads(registry)
    };
    let mut probe = registry.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in registry.ids().filter(|&id| registry.is_trainable(id)) {
        let n = registry.tensor(id).len();
        let stride = n.div_ceil(per_param.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let analytic = grads.get(id).map_or(0.0, |g| g[j]);
            let orig = probe.tensor(id).values[j];
            probe.tensor_mut(id).values[j] = orig + eps;
            let up = eval(&probe)?;
            probe.tensor_mut(id).values[j] = orig - eps;
            let down = eval(&probe)?;
            probe.tensor_mut(id).values[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
    })
}
