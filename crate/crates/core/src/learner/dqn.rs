use super::{ActionMask, QNetwork};
use crate::error::{Error, Result};

/// Joint replay entry shared by the ADL and ET networks of one microgrid.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s_adl: Vec<f64>,
    pub s_et: Vec<f64>,
    /// ADL subset as a bitmask, which is also its output index.
    pub adl_action: usize,
    /// Joint (quantity, price) output index of the ET network.
    pub et_action: usize,
    pub reward: f64,
    pub next_s_adl: Vec<f64>,
    pub next_s_et: Vec<f64>,
    pub next_adl_mask: ActionMask,
    pub next_et_mask: ActionMask,
}

/// TD targets for both networks: `r + gamma * max_a Q(s', a)` with the max
/// taken over the actions admissible in the next state.
pub fn compute_targets(
    batch: &[&Transition],
    gamma: f64,
    adl_net: &QNetwork,
    et_net: &QNetwork,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut phi = Vec::with_capacity(batch.len());
    let mut psi = Vec::with_capacity(batch.len());
    for t in batch {
        let next_adl = if gamma == 0.0 {
            0.0
        } else {
            let q = adl_net.forward(&t.next_s_adl)?;
            t.next_adl_mask.max_value(&q).ok_or(Error::EmptyMask)?
        };
        let next_et = if gamma == 0.0 {
            0.0
        } else {
            let q = et_net.forward(&t.next_s_et)?;
            t.next_et_mask.max_value(&q).ok_or(Error::EmptyMask)?
        };
        phi.push(t.reward + gamma * next_adl);
        psi.push(t.reward + gamma * next_et);
    }
    Ok((phi, psi))
}

/// One gradient-descent step on the mean squared TD error. Returns the
/// batch loss measured before the update.
pub fn train_step(
    net: &mut QNetwork,
    states: &[&[f64]],
    actions: &[usize],
    targets: &[f64],
    lr: f64,
) -> Result<f64> {
    let (loss, grad) = net.loss_and_gradient(states, actions, targets)?;
    if !loss.is_finite() {
        let worst = targets.iter().copied().fold(0.0f64, |m, t| m.max(t.abs()));
        return Err(Error::Divergence(format!(
            "non-finite loss {loss} over batch of {} (largest |target| {worst:e})",
            states.len()
        )));
    }
    net.apply_gradients(&grad, lr);
    if !net.is_finite() {
        return Err(Error::Divergence(format!(
            "parameters became non-finite after step with loss {loss:e}, lr {lr}"
        )));
    }
    Ok(loss)
}
