use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{MlpParams, NnError, Result};

/// Slow-moving copy of an online network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetLink {
    pub target: MlpParams,
    pub tau: f64,
}

impl TargetLink {
    pub fn new(online: &MlpParams, tau: f64) -> Self {
        assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
        Self {
            target: online.clone(),
            tau,
        }
    }

    /// `target <- (1 - tau) * target + tau * online`
    pub fn soft_update(&mut self, online: &MlpParams) -> Result<()> {
        blend(&mut self.target, online, self.tau)
    }

    pub fn hard_update(&mut self, online: &MlpParams) -> Result<()> {
        blend(&mut self.target, online, 1.0)
    }

    /// The soft-update rule on a bare parameter pair.
    pub fn blend_into(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
        blend(target, online, tau)
    }
}

fn blend(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !target.set().same_shape(online.set()) {
        return Err(NnError::InvalidSpec(
            "target and online shapes differ".into(),
        ));
    }
    let dst = target.set_mut();
    let src = online.set();
    if tau == 1.0 {
        dst.clone_from(src);
        return Ok(());
    }
    for (t, o) in dst.weights.iter_mut().zip(&src.weights) {
        Zip::from(t).and(o).for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
    }
    for (t, o) in dst.biases.iter_mut().zip(&src.biases) {
        Zip::from(t).and(o).for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec, ParamSet};

    fn filled(value: f64) -> MlpParams {
        let spec = MlpSpec::new(vec![2, 3], vec![Activation::Identity]).unwrap();
        let mut set = ParamSet::zeros(&spec);
        set.iter_mut().for_each(|x| *x = value);
        MlpParams::from_set(set)
    }

    #[test]
    fn tau_one_is_a_hard_copy() {
        let online = filled(0.37);
        let mut link = TargetLink::new(&filled(-4.0), 1.0);
        link.soft_update(&online).unwrap();
        assert_eq!(link.target, online);
    }

    #[test]
    fn small_tau_moves_a_little() {
        let mut link = TargetLink::new(&filled(0.0), 0.001);
        link.soft_update(&filled(1.0)).unwrap();
        assert!(link.target.set().iter().all(|&x| (x - 0.001).abs() < 1e-18));
    }

    #[test]
    fn repeated_updates_converge_geometrically() {
        let tau = 0.05;
        let start = 2.0;
        let goal = -1.0;
        let mut link = TargetLink::new(&filled(start), tau);
        let online = filled(goal);
        for k in 1..=200 {
            link.soft_update(&online).unwrap();
            let expected = (1.0 - tau).powi(k) * (start - goal);
            for &x in link.target.set().iter() {
                assert!(((x - goal) - expected).abs() < 1e-12, "k={k}");
            }
        }
    }
}
