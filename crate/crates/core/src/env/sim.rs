use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, FlowProcess, Result, Topology};

/// Length of every observation history window.
pub const HISTORY: usize = 10;

const SIMPLEX_TOL: f64 = 1e-6;

/// What one agent sees: its own commodity's demands and the links on its own
/// candidate paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Oldest first.
    pub demand_history: Vec<f64>,
    /// One window per observed link, oldest first.
    pub util_history: Vec<Vec<f64>>,
    pub util_average: Vec<f64>,
    pub last_action: Vec<f64>,
}

impl Observation {
    pub fn width(&self) -> usize {
        self.demand_history.len()
            + self.util_history.iter().map(Vec::len).sum::<usize>()
            + self.util_average.len()
            + self.last_action.len()
    }

    /// Flat network input; demands are divided by `demand_scale`.
    pub fn features(&self, demand_scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        out.extend(self.demand_history.iter().map(|d| d / demand_scale));
        for window in &self.util_history {
            out.extend_from_slice(window);
        }
        out.extend_from_slice(&self.util_average);
        out.extend_from_slice(&self.last_action);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub mlu: f64,
    pub link_utilization: Vec<f64>,
    pub demands: Vec<f64>,
    /// Flow placed on each candidate path, per agent.
    pub path_flows: Vec<Vec<f64>>,
    pub observations: Vec<Observation>,
}

/// Per-link utilization and per-path flows for one step.
pub fn link_utilization(
    topology: &Topology,
    demands: &[f64],
    actions: &[Vec<f64>],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut flow = vec![0.0; topology.links.len()];
    let mut path_flows = Vec::with_capacity(actions.len());
    for (c, commodity) in topology.commodities.iter().enumerate() {
        let per_path: Vec<f64> = actions[c].iter().map(|r| demands[c] * r).collect();
        for (path, &f) in commodity.paths.iter().zip(&per_path) {
            for &l in &path.links {
                flow[l] += f;
            }
        }
        path_flows.push(per_path);
    }
    let util = flow
        .iter()
        .zip(&topology.links)
        .map(|(f, l)| f / l.capacity)
        .collect();
    (util, path_flows)
}

/// Single-owner simulator state.
#[derive(Debug, Clone)]
pub struct RoutingEnv {
    topology: Arc<Topology>,
    flow: FlowProcess,
    demand_scale: f64,
    rng: ChaCha8Rng,
    t: usize,
    demand_history: Vec<VecDeque<f64>>,
    util_history: Vec<VecDeque<f64>>,
    last_action: Vec<Vec<f64>>,
}

impl RoutingEnv {
    pub fn new(topology: Arc<Topology>, flow: FlowProcess) -> Result<Self> {
        flow.check(topology.num_agents())?;
        let demand_scale = topology.mean_capacity();
        let mut env = Self {
            demand_history: Vec::new(),
            util_history: Vec::new(),
            last_action: Vec::new(),
            topology,
            flow,
            demand_scale,
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn flow(&self) -> &FlowProcess {
        &self.flow
    }

    pub fn num_agents(&self) -> usize {
        self.topology.num_agents()
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn demand_scale(&self) -> f64 {
        self.demand_scale
    }

    /// `10 + 10 L + L + P` for `L` observed links and `P` paths.
    pub fn feature_width(&self, agent: usize) -> usize {
        self.topology.feature_width(agent)
    }

    /// Zeroes histories, rewinds the demand process and reseeds its noise.
    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let n = self.topology.num_agents();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.demand_history = vec![VecDeque::from(vec![0.0; HISTORY]); n];
        self.util_history = vec![VecDeque::from(vec![0.0; HISTORY]); self.topology.links.len()];
        self.last_action = (0..n)
            .map(|a| {
                let p = self.topology.num_paths(a);
                vec![1.0 / p as f64; p]
            })
            .collect();
        self.observe_all()
    }

    pub fn observe(&self, agent: usize) -> Observation {
        let links = self.topology.observed_links(agent);
        let util_history: Vec<Vec<f64>> = links
            .iter()
            .map(|&l| self.util_history[l].iter().copied().collect())
            .collect();
        let util_average = util_history
            .iter()
            .map(|w| w.iter().sum::<f64>() / HISTORY as f64)
            .collect();
        Observation {
            demand_history: self.demand_history[agent].iter().copied().collect(),
            util_history,
            util_average,
            last_action: self.last_action[agent].clone(),
        }
    }

    pub fn observe_all(&self) -> Vec<Observation> {
        (0..self.num_agents()).map(|a| self.observe(a)).collect()
    }

    pub fn features(&self, agent: usize) -> Vec<f64> {
        self.observe(agent).features(self.demand_scale)
    }

    pub fn features_all(&self) -> Vec<Vec<f64>> {
        (0..self.num_agents()).map(|a| self.features(a)).collect()
    }

    fn check_actions(&self, joint: &[Vec<f64>]) -> Result<()> {
        let n = self.num_agents();
        if joint.len() != n {
            return Err(EnvError::AgentCount {
                expected: n,
                got: joint.len(),
            });
        }
        for (agent, action) in joint.iter().enumerate() {
            let p = self.topology.num_paths(agent);
            let fail = |message: String| EnvError::InvalidAction { agent, message };
            if action.len() != p {
                return Err(fail(format!("{} ratios for {p} paths", action.len())));
            }
            if let Some(x) = action
                .iter()
                .find(|x| !(x.is_finite() && **x >= 0.0 && **x <= 1.0))
            {
                return Err(fail(format!("ratio {x} outside [0, 1]")));
            }
            let sum: f64 = action.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(fail(format!("ratios sum to {sum}")));
            }
        }
        Ok(())
    }

    /// Routes the current demands with `joint` split ratios and advances one step.
    pub fn step(&mut self, joint: &[Vec<f64>]) -> Result<StepResult> {
        self.check_actions(joint)?;
        let n = self.num_agents();
        let demands: Vec<f64> = (0..n)
            .map(|c| self.flow.demand_at(self.t, c, &mut self.rng))
            .collect();
        let (util, path_flows) = link_utilization(&self.topology, &demands, joint);
        let mlu = util.iter().copied().fold(0.0, f64::max);
        for (hist, &d) in self.demand_history.iter_mut().zip(&demands) {
            hist.pop_front();
            hist.push_back(d);
        }
        for (hist, &u) in self.util_history.iter_mut().zip(&util) {
            hist.pop_front();
            hist.push_back(u);
        }
        self.last_action = joint.to_vec();
        self.t += 1;
        Ok(StepResult {
            reward: 1.0 - mlu,
            mlu,
            link_utilization: util,
            demands,
            path_flows,
            observations: self.observe_all(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Sinusoid;

    fn constant_env(topology: Topology, demands: &[f64]) -> RoutingEnv {
        let flow = FlowProcess::Synthetic {
            waves: demands.iter().map(|&d| Sinusoid::constant(d)).collect(),
            noise: 0.0,
        };
        RoutingEnv::new(Arc::new(topology), flow).unwrap()
    }

    fn small() -> Topology {
        Topology::builtin("small").unwrap()
    }

    #[test]
    fn direct_path_utilization() {
        // agent 1 is B->D with paths [BEFD, BD]
        let mut env = constant_env(small(), &[0.0, 8.0]);
        let r = env.step(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let bd = env.topology().find_link("B", "D").unwrap();
        assert!((r.link_utilization[bd] - 0.8).abs() < 1e-12);
        assert!((r.mlu - 0.8).abs() < 1e-12);
        assert!((r.reward - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_gives_unit_reward() {
        let mut env = constant_env(small(), &[0.0, 0.0]);
        let r = env.step(&[vec![0.3, 0.7], vec![1.0, 0.0]]).unwrap();
        assert_eq!(r.mlu, 0.0);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn shared_link_overload() {
        // both detours cross E->F: 6 + 6 on capacity 10
        let mut env = constant_env(small(), &[6.0, 6.0]);
        let r = env.step(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let ef = env.topology().find_link("E", "F").unwrap();
        assert!((r.link_utilization[ef] - 1.2).abs() < 1e-12);
        assert!((r.reward + 0.2).abs() < 1e-12);
    }

    #[test]
    fn reset_observation_is_blank() {
        let env = constant_env(small(), &[3.0, 4.0]);
        let obs = env.observe(0);
        assert!(obs.demand_history.iter().all(|&d| d == 0.0));
        assert!(obs.util_history.iter().flatten().all(|&u| u == 0.0));
        assert_eq!(obs.last_action, vec![0.5, 0.5]);
        assert_eq!(obs.width(), env.feature_width(0));
    }

    #[test]
    fn histories_shift_by_one() {
        let mut env = constant_env(small(), &[3.0, 4.0]);
        let a = vec![vec![0.25, 0.75], vec![0.9, 0.1]];
        env.step(&a).unwrap();
        let obs = env.observe(1);
        let mut expected = vec![0.0; HISTORY];
        expected[HISTORY - 1] = 4.0;
        assert_eq!(obs.demand_history, expected);
        assert_eq!(obs.last_action, a[1]);
    }

    #[test]
    fn observation_width_formula() {
        for name in ["small", "moderate", "large"] {
            let topo = Topology::builtin(name).unwrap();
            let demands = vec![1.0; topo.num_agents()];
            let env = constant_env(topo, &demands);
            for agent in 0..env.num_agents() {
                let l = env.topology().observed_links(agent).len();
                let p = env.topology().num_paths(agent);
                assert_eq!(env.features(agent).len(), 10 + 10 * l + l + p);
            }
        }
    }

    #[test]
    fn off_simplex_actions_are_rejected() {
        let mut env = constant_env(small(), &[1.0, 1.0]);
        assert!(matches!(
            env.step(&[vec![0.6, 0.6], vec![0.5, 0.5]]),
            Err(EnvError::InvalidAction { agent: 0, .. })
        ));
        assert!(matches!(
            env.step(&[vec![1.2, -0.2], vec![0.5, 0.5]]),
            Err(EnvError::InvalidAction { agent: 0, .. })
        ));
        assert!(matches!(
            env.step(&[vec![1.0], vec![0.5, 0.5]]),
            Err(EnvError::InvalidAction { agent: 0, .. })
        ));
        assert!(env.step(&[vec![0.5, 0.5]]).is_err());
        assert_eq!(env.time(), 0);
    }

    #[test]
    fn reseeding_replays_noise() {
        let flow = FlowProcess::Synthetic {
            waves: vec![Sinusoid::constant(5.0); 2],
            noise: 1.0,
        };
        let mut env = RoutingEnv::new(Arc::new(small()), flow).unwrap();
        let a = vec![vec![0.5, 0.5]; 2];
        let run = |env: &mut RoutingEnv, seed| {
            env.reset(seed);
            (0..20).map(|_| env.step(&a).unwrap().demands).collect::<Vec<_>>()
        };
        let first = run(&mut env, 1);
        assert_eq!(run(&mut env, 1), first);
        assert_ne!(run(&mut env, 2), first);
    }
}
