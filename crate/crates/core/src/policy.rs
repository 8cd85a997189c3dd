//! Behavior-cloning policy: a small tanh MLP whose output is squashed into
//! the action bounds, trained with Adam on mean squared error.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expert::Controller;
use crate::scenario::{ObservationMap, Scenario};
use crate::seed;
use crate::world::World;

const POLICY_MAGIC: &[u8; 4] = b"MLPP";

/// Splits `magic | u32 LE header length | header | body`.
pub(crate) fn split_payload<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::Parse("missing or wrong file magic".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Parse("truncated header".into()));
    }
    Ok((&bytes[8..8 + len], &bytes[8 + len..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of demonstrations held out for validation loss.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden widths, epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("learning rate must be positive and validation fraction in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch; empty when nothing was held out.
    pub validation_loss: Vec<f64>,
    pub train_samples: usize,
    pub validation_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    layer_sizes: Vec<usize>,
    action_bound: Vec<f64>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    observation: ObservationMap,
    observation_schema: String,
    training_seed: u64,
}

/// Fully connected tanh network with output `ū ⊙ tanh(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layer_sizes: Vec<usize>,
    /// All weights and biases, layer by layer: `W_l` row-major (out × in) then `b_l`.
    params: Vec<f64>,
    pub action_bound: Vec<f64>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub observation: ObservationMap,
    pub training_seed: u64,
}

impl MlpPolicy {
    /// Glorot-uniform weights, zero biases, identity normalizer.
    pub fn new(observation: ObservationMap, hidden: &[usize], action_bound: Vec<f64>, seed: u64) -> Self {
        let mut layer_sizes = vec![observation.dim()];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(action_bound.len());
        let mut rng = seed::stream_rng(seed::derive(seed, "policy-init"), 0);
        let mut params = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        let n_in = layer_sizes[0];
        Self {
            layer_sizes,
            params,
            action_bound,
            input_shift: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
            observation,
            training_seed: seed,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let o = offset;
            offset += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Forward pass keeping every layer's activations; the last entry is `tanh(z_L)`.
    fn activations(&self, obs: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![obs
            .iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect::<Vec<_>>()];
        for (off, n_in, n_out) in self.layers() {
            let prev = acts.last().unwrap();
            let (w, b) = self.params[off..off + n_in * n_out + n_out].split_at(n_in * n_out);
            let out = (0..n_out)
                .map(|r| {
                    let row = &w[r * n_in..(r + 1) * n_in];
                    (b[r] + row.iter().zip(prev).map(|(a, x)| a * x).sum::<f64>()).tanh()
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, obs: &[f64]) -> Vec<f64> {
        let acts = self.activations(obs);
        acts.last().unwrap().iter().zip(&self.action_bound).map(|(a, b)| a * b).collect()
    }

    /// Mean squared error over the batch and its gradient with respect to [`params`](Self::params).
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let layers: Vec<_> = self.layers().collect();
        let nu = self.action_bound.len();
        let norm = (inputs.len() * nu) as f64;
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let acts = self.activations(x);
            let top = acts.last().unwrap();
            let mut delta: Vec<f64> = (0..nu)
                .map(|i| {
                    let err = self.action_bound[i] * top[i] - y[i];
                    loss += err * err;
                    2.0 * err / norm * self.action_bound[i] * (1.0 - top[i] * top[i])
                })
                .collect();
            for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
                let prev = &acts[l];
                for r in 0..n_out {
                    let g = &mut grad[off + r * n_in..off + (r + 1) * n_in];
                    for (gi, p) in g.iter_mut().zip(prev) {
                        *gi += delta[r] * p;
                    }
                    grad[off + n_in * n_out + r] += delta[r];
                }
                if l > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    delta = (0..n_in)
                        .map(|c| {
                            let s: f64 = (0..n_out).map(|r| w[r * n_in + c] * delta[r]).sum();
                            s * (1.0 - prev[c] * prev[c])
                        })
                        .collect();
                }
            }
        }
        (loss / norm, grad)
    }

    pub fn loss(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> f64 {
        let nu = self.action_bound.len();
        let mut total = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            total += self.forward(x).iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        total / (inputs.len() * nu).max(1) as f64
    }

    fn fit_normalizer(&mut self, inputs: &[Vec<f64>]) {
        let n = inputs.len().max(1) as f64;
        let d = self.input_dim();
        for j in 0..d {
            let mean = inputs.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = inputs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            self.input_shift[j] = mean;
            self.input_scale[j] = if var.sqrt() > 1e-8 { 1.0 / var.sqrt() } else { 1.0 };
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            layer_sizes: self.layer_sizes.clone(),
            action_bound: self.action_bound.clone(),
            input_shift: self.input_shift.clone(),
            input_scale: self.input_scale.clone(),
            observation_schema: self.observation.schema_id(),
            observation: self.observation.clone(),
            training_seed: self.training_seed,
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(POLICY_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let (header, body) = split_payload(&bytes, POLICY_MAGIC)?;
        let h: Header = serde_json::from_slice(header).map_err(|e| Error::Parse(e.to_string()))?;
        let expected: usize = h.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if body.len() != expected * 8 {
            return Err(Error::Parse(format!("expected {expected} parameters, found {} bytes", body.len())));
        }
        if h.layer_sizes.len() < 2
            || h.layer_sizes[0] != h.observation.dim()
            || h.input_shift.len() != h.layer_sizes[0]
            || h.input_scale.len() != h.layer_sizes[0]
            || h.action_bound.len() != *h.layer_sizes.last().unwrap()
        {
            return Err(Error::Parse("inconsistent policy header".into()));
        }
        Ok(Self {
            layer_sizes: h.layer_sizes,
            params: body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            action_bound: h.action_bound,
            input_shift: h.input_shift,
            input_scale: h.input_scale,
            observation: h.observation,
            training_seed: h.training_seed,
        })
    }

    /// Loads and rejects policies trained on a different observation layout.
    pub fn read_expecting<R: Read>(r: R, observation: &ObservationMap) -> Result<Self> {
        let p = Self::read_from(r)?;
        if p.observation.schema_id() != observation.schema_id() || p.input_dim() != observation.dim() {
            return Err(Error::Config(format!(
                "policy expects observation {:?}, scenario provides {:?}",
                p.observation.schema_id(),
                observation.schema_id()
            )));
        }
        Ok(p)
    }
}

impl Controller for MlpPolicy {
    fn act(&self, world: &World, x: &[f64]) -> Vec<f64> {
        self.forward(&self.observation.observe(world, x))
    }
}

/// Adam state for a flat parameter vector.
struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains on explicit `(observation, action)` pairs; `groups[i]` assigns each
/// pair to a demonstration so that validation holds out whole demonstrations.
pub fn train_on_pairs(
    observation: ObservationMap,
    action_bound: Vec<f64>,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    groups: &[usize],
    config: &TrainConfig,
) -> Result<(MlpPolicy, TrainReport)> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::Precondition("cannot train on an empty dataset".into()));
    }
    let mut policy = MlpPolicy::new(observation, &config.hidden, action_bound, config.seed);
    let mut rng = seed::stream_rng(seed::derive(config.seed, "train"), 0);

    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut rng);
    let n_val = if ids.len() > 1 { ((ids.len() as f64) * config.validation_fraction).floor() as usize } else { 0 };
    let held: std::collections::HashSet<usize> = ids[..n_val].iter().copied().collect();
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = (0..inputs.len()).partition(|&i| !held.contains(&groups[i]));

    let train_inputs: Vec<Vec<f64>> = train_idx.iter().map(|&i| inputs[i].clone()).collect();
    policy.fit_normalizer(&train_inputs);

    let mut adam = Adam::new(policy.params.len(), config.learning_rate);
    let mut order = train_idx.clone();
    let val_xs: Vec<&[f64]> = val_idx.iter().map(|&i| inputs[i].as_slice()).collect();
    let val_ys: Vec<&[f64]> = val_idx.iter().map(|&i| targets[i].as_slice()).collect();
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut validation_loss = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<&[f64]> = batch.iter().map(|&i| targets[i].as_slice()).collect();
            let (loss, grad) = policy.loss_and_gradient(&xs, &ys);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut policy.params, &grad);
            total += loss * batch.len() as f64;
        }
        train_loss.push(total / order.len() as f64);
        if !val_idx.is_empty() {
            validation_loss.push(policy.loss(&val_xs, &val_ys));
        }
    }
    let report = TrainReport {
        epochs: config.epochs,
        train_loss,
        validation_loss,
        train_samples: train_idx.len(),
        validation_samples: val_idx.len(),
    };
    Ok((policy, report))
}

/// Behavior cloning on the clean expert labels of a dataset.
pub fn train(dataset: &Dataset, scenario: &Scenario, config: &TrainConfig) -> Result<(MlpPolicy, TrainReport)> {
    use crate::dynamics::Dynamics;
    let mut inputs = Vec::with_capacity(dataset.num_records());
    let mut targets = Vec::with_capacity(dataset.num_records());
    let mut groups = Vec::with_capacity(dataset.num_records());
    for demo in &dataset.demos {
        let world = scenario.worlds.world_for(demo.world_index)?;
        for r in &demo.records {
            inputs.push(scenario.observation.observe(&world, &r.state));
            targets.push(r.expert_action.to_vec());
            groups.push(demo.id);
        }
    }
    train_on_pairs(
        scenario.observation.clone(),
        scenario.model.control_bound().to_vec(),
        &inputs,
        &targets,
        &groups,
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_policy(seed: u64) -> MlpPolicy {
        MlpPolicy::new(ObservationMap::DubinsState, &[8, 5], vec![1.0, 0.5], seed)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut p = toy_policy(1);
        p.input_shift = vec![0.1; 6];
        p.input_scale = vec![0.7; 6];
        let xs: Vec<Vec<f64>> = (0..4).map(|i| (0..6).map(|j| ((i * 7 + j) as f64 * 0.37).sin()).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..4).map(|i| vec![0.3 * i as f64 - 0.5, 0.1]).collect();
        let xr: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let yr: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let (_, grad) = p.loss_and_gradient(&xr, &yr);
        let h = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let orig = p.params[i];
            p.params[i] = orig + h;
            let up = p.loss(&xr, &yr);
            p.params[i] = orig - h;
            let down = p.loss(&xr, &yr);
            p.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            assert!(rel < 1e-5, "param {i}: analytic {g} vs numeric {fd}");
        }
    }

    #[test]
    fn zero_weights_give_zero_action() {
        let mut p = toy_policy(2);
        p.params.iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(p.forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn output_squash_matches_bound() {
        let mut p = MlpPolicy::new(ObservationMap::DubinsState, &[], vec![2.0], 0);
        p.params.iter_mut().for_each(|w| *w = 0.0);
        p.params[0] = 1.0;
        let a = p.forward(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((a[0] - 2.0 * 0.5f64.tanh()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn outputs_respect_bounds(seed in 0u64..1000, x in prop::collection::vec(-1e3f64..1e3, 6)) {
            let p = toy_policy(seed);
            let a = p.forward(&x);
            prop_assert!(a[0].abs() <= 1.0 && a[1].abs() <= 0.5);
        }
    }

    #[test]
    fn memorizes_small_dataset() {
        let xs: Vec<Vec<f64>> = (0..32).map(|i| (0..6).map(|j| ((i * 3 + j) as f64).cos()).collect()).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.8 * (x[0] * x[1]).tanh(), 0.3 * x[2]]).collect();
        let groups: Vec<usize> = (0..32).collect();
        let cfg = TrainConfig {
            hidden: vec![32, 32],
            epochs: 1500,
            batch_size: 8,
            validation_fraction: 0.0,
            ..Default::default()
        };
        let (_, report) = train_on_pairs(ObservationMap::DubinsState, vec![1.0, 0.5], &xs, &ys, &groups, &cfg).unwrap();
        let last = *report.train_loss.last().unwrap();
        assert!(last < 1e-3, "loss {last}");
        assert!(report.validation_loss.is_empty());
    }

    #[test]
    fn diverging_training_is_reported() {
        let xs = vec![vec![f64::NAN; 6]; 4];
        let ys = vec![vec![0.0, 0.0]; 4];
        let r = train_on_pairs(
            ObservationMap::DubinsState,
            vec![1.0, 0.5],
            &xs,
            &ys,
            &[0, 1, 2, 3],
            &TrainConfig::default(),
        );
        assert!(matches!(r, Err(Error::TrainingDiverged { epoch: 0 })));
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let mut p = toy_policy(9);
        p.input_shift[2] = 0.25;
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let back = MlpPolicy::read_expecting(buf.as_slice(), &ObservationMap::DubinsState).unwrap();
        assert_eq!(back, p);
        let x = [0.1, -0.2, 0.3, 0.4, 0.5, -0.6];
        assert_eq!(back.forward(&x), p.forward(&x));
        assert!(matches!(MlpPolicy::read_from(&buf[..buf.len() - 1]), Err(Error::Parse(_))));
        let quad = ObservationMap::QuadRanges { scan: crate::world::ScanConfig::tof8() };
        assert!(matches!(MlpPolicy::read_expecting(buf.as_slice(), &quad), Err(Error::Config(_))));
    }
}
