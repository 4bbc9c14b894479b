//! From-scratch dense Q-network: configurable layer widths, ReLU hidden
//! activations, linear outputs, Adam optimizer, and a versioned binary
//! checkpoint format. Training minimizes mean squared error on the output
//! selected by each sample's action; the other outputs receive no gradient.
//!
//! The batch forward/backward pass is blocked over samples so weight rows
//! stay cache-resident; on the training workloads here that is the
//! difference between being compute-bound and memory-bound.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::AgentAction;

const CHECKPOINT_MAGIC: [u8; 4] = *b"QNET";
const CHECKPOINT_VERSION: u32 = 1;
/// Samples per cache block in the batched forward/backward loops.
const BLOCK: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite gradient; no parameter update applied")]
    NonFiniteGradient,
    #[error("architecture mismatch: expected {expected:?}, got {got:?}")]
    ArchitectureMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint format version mismatch: expected {expected}, got {got}")]
    FormatVersionMismatch { expected: u32, got: u32 },
    #[error("not a checkpoint file: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Optimizer and batching hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 200,
        }
    }
}

/// One supervised example: an input vector, the action whose output is
/// regressed, and the regression target.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    /// Row-major weight matrices, one per layer: w[l][o * in + i].
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    adam: AdamState,
    seed: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators so the reduction vectorizes.
    let mut acc = [0.0_f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (pa, pb) in (&mut ca).zip(&mut cb) {
        acc[0] += pa[0] * pb[0];
        acc[1] += pa[1] * pb[1];
        acc[2] += pa[2] * pb[2];
        acc[3] += pa[3] * pb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    s
}

fn axpy(k: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += k * v;
    }
}

impl QNetwork {
    /// He-style uniform initialization (limit sqrt(6 / fan_in)), zero biases,
    /// reproducible from the seed.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d >= 1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        let n = param_count_for(dims);
        QNetwork {
            dims: dims.to_vec(),
            weights,
            biases,
            adam: AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
            seed,
        }
    }

    /// All-zero parameters; mostly useful as a known-blank baseline in tests.
    pub fn zeroed(dims: &[usize]) -> Self {
        let mut net = Self::new(dims, 0);
        for w in &mut net.weights {
            w.fill(0.0);
        }
        net
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam.t
    }

    pub fn param_count(&self) -> usize {
        param_count_for(&self.dims)
    }

    /// Fail unless the network maps `input_dim` inputs to `output_dim`
    /// outputs; guards consumers against foreign checkpoints.
    pub fn ensure_io_dims(&self, input_dim: usize, output_dim: usize) -> Result<(), NnError> {
        if self.dims[0] != input_dim || *self.dims.last().unwrap() != output_dim {
            return Err(NnError::ArchitectureMismatch {
                expected: vec![input_dim, output_dim],
                got: vec![self.dims[0], *self.dims.last().unwrap()],
            });
        }
        Ok(())
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ArchitectureMismatch {
                expected: self.dims.clone(),
                got: vec![flat.len()],
            });
        }
        let mut at = 0;
        for l in 0..self.weights.len() {
            let wn = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[at..at + wn]);
            at += wn;
            let bn = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dims[0], "input width mismatch");
        let last = self.weights.len() - 1;
        let mut cur = x.to_vec();
        for l in 0..=last {
            let out_dim = self.dims[l + 1];
            let in_dim = self.dims[l];
            let mut next = vec![0.0; out_dim];
            for o in 0..out_dim {
                let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                let z = dot(row, &cur) + self.biases[l][o];
                next[o] = if l < last { z.max(0.0) } else { z };
            }
            cur = next;
        }
        cur
    }

    pub fn max_q(&self, x: &[f64]) -> f64 {
        self.forward(x)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action for a 5-output head; ties go to the lowest index.
    pub fn greedy_action(&self, x: &[f64]) -> AgentAction {
        argmax_action(&self.forward(x))
    }

    /// Mean squared error of the selected outputs, no gradients.
    pub fn batch_loss(&self, samples: &[TrainSample]) -> f64 {
        assert!(!samples.is_empty());
        let mut sum = 0.0;
        for s in samples {
            let q = self.forward(&s.input)[s.action];
            let e = q - s.target;
            sum += e * e;
        }
        sum / samples.len() as f64
    }

    /// Loss plus the analytic gradient (flattened like [`Self::parameters`]).
    pub fn batch_gradient(&self, samples: &[TrainSample]) -> (f64, Vec<f64>) {
        assert!(!samples.is_empty());
        let b = samples.len();
        let layers = self.weights.len();
        let last = layers - 1;

        // Flat activation/pre-activation planes, one per layer boundary.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut x0 = vec![0.0; b * self.dims[0]];
        for (s, sample) in samples.iter().enumerate() {
            assert_eq!(sample.input.len(), self.dims[0], "input width mismatch");
            x0[s * self.dims[0]..(s + 1) * self.dims[0]].copy_from_slice(&sample.input);
        }
        acts.push(x0);
        for l in 0..layers {
            let in_dim = self.dims[l];
            let out_dim = self.dims[l + 1];
            let x = &acts[l];
            let mut z = vec![0.0; b * out_dim];
            let w = &self.weights[l];
            let bias = &self.biases[l];
            for s0 in (0..b).step_by(BLOCK) {
                let s1 = (s0 + BLOCK).min(b);
                for o in 0..out_dim {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    for s in s0..s1 {
                        let v = dot(row, &x[s * in_dim..(s + 1) * in_dim]) + bias[o];
                        z[s * out_dim + o] = if l < last { v.max(0.0) } else { v };
                    }
                }
            }
            acts.push(z);
        }

        // Selected-output error; loss and the seed of backpropagation.
        let out_dim = self.dims[layers];
        let mut loss = 0.0;
        let outs = &acts[layers];
        let mut delta_sel = vec![0.0; b];
        for (s, sample) in samples.iter().enumerate() {
            assert!(sample.action < out_dim, "action index out of range");
            let e = outs[s * out_dim + sample.action] - sample.target;
            loss += e * e;
            delta_sel[s] = 2.0 * e / b as f64;
        }
        loss /= b as f64;

        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|bv| vec![0.0; bv.len()]).collect();

        // Last layer: the delta plane has a single nonzero entry per sample,
        // so treat it specially instead of materializing it.
        let in_dim = self.dims[last];
        let mut dprev = vec![0.0; b * in_dim];
        {
            let x = &acts[last];
            let w = &self.weights[last];
            for (s, sample) in samples.iter().enumerate() {
                let d = delta_sel[s];
                if d == 0.0 {
                    continue;
                }
                let o = sample.action;
                gb[last][o] += d;
                axpy(
                    d,
                    &x[s * in_dim..(s + 1) * in_dim],
                    &mut gw[last][o * in_dim..(o + 1) * in_dim],
                );
                axpy(
                    d,
                    &w[o * in_dim..(o + 1) * in_dim],
                    &mut dprev[s * in_dim..(s + 1) * in_dim],
                );
            }
        }

        // Hidden layers, walking backwards. dprev on entry holds dL/d(act of
        // layer l+1); mask it through ReLU, then push through the weights.
        for l in (0..last).rev() {
            let out_dim = self.dims[l + 1];
            let in_dim = self.dims[l];
            let z = &acts[l + 1];
            let mut dz = dprev;
            for (dv, &zv) in dz.iter_mut().zip(z.iter()) {
                if zv <= 0.0 {
                    *dv = 0.0;
                }
            }
            let x = &acts[l];
            let w = &self.weights[l];
            let gwl = &mut gw[l];
            let gbl = &mut gb[l];
            let mut dx = vec![0.0; b * in_dim];
            for s0 in (0..b).step_by(BLOCK) {
                let s1 = (s0 + BLOCK).min(b);
                for o in 0..out_dim {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let grow = &mut gwl[o * in_dim..(o + 1) * in_dim];
                    let mut gb_acc = 0.0;
                    for s in s0..s1 {
                        let d = dz[s * out_dim + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb_acc += d;
                        axpy(d, &x[s * in_dim..(s + 1) * in_dim], grow);
                        axpy(d, row, &mut dx[s * in_dim..(s + 1) * in_dim]);
                    }
                    gbl[o] += gb_acc;
                }
            }
            dprev = dx;
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for l in 0..layers {
            flat.extend_from_slice(&gw[l]);
            flat.extend_from_slice(&gb[l]);
        }
        (loss, flat)
    }

    /// One Adam step on the selected-output MSE. Returns the loss measured
    /// before the update. A non-finite gradient leaves the network untouched.
    pub fn train_batch(&mut self, samples: &[TrainSample], h: &TrainHyper) -> Result<f64, NnError> {
        let (loss, grad) = self.batch_gradient(samples);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let mut at = 0;
        for l in 0..self.weights.len() {
            for slot in [&mut self.weights[l], &mut self.biases[l]] {
                for p in slot.iter_mut() {
                    let g = grad[at];
                    let m = &mut self.adam.m[at];
                    let v = &mut self.adam.v[at];
                    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                    *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= h.learning_rate * mhat / (vhat.sqrt() + h.epsilon);
                    at += 1;
                }
            }
        }
        Ok(loss)
    }

    /// Copy parameters into a same-architecture target network. The target's
    /// optimizer state is left alone.
    pub fn copy_into_target(&self, target: &mut QNetwork) -> Result<(), NnError> {
        if self.dims != target.dims {
            return Err(NnError::ArchitectureMismatch {
                expected: self.dims.clone(),
                got: target.dims.clone(),
            });
        }
        for l in 0..self.weights.len() {
            target.weights[l].copy_from_slice(&self.weights[l]);
            target.biases[l].copy_from_slice(&self.biases[l]);
        }
        Ok(())
    }

    /// Binary checkpoint: magic, format version, layer dims, init seed, Adam
    /// step count, then parameters and both Adam moment vectors as
    /// little-endian f64. Round-trips bit-identically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.adam.t.to_le_bytes())?;
        for vals in [&self.parameters(), &self.adam.m, &self.adam.v] {
            for v in vals.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<QNetwork, NnError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(NnError::BadCheckpoint(format!(
                "bad magic {magic:?} in {}",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::FormatVersionMismatch {
                expected: CHECKPOINT_VERSION,
                got: version,
            });
        }
        let nlayers = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&nlayers) {
            return Err(NnError::BadCheckpoint(format!(
                "implausible layer count {nlayers}"
            )));
        }
        let mut dims = Vec::with_capacity(nlayers);
        for _ in 0..nlayers {
            let d = read_u32(&mut r)? as usize;
            if d == 0 {
                return Err(NnError::BadCheckpoint("zero-width layer".into()));
            }
            dims.push(d);
        }
        let seed = read_u64(&mut r)?;
        let t = read_u64(&mut r)?;
        let n = param_count_for(&dims);
        let params = read_f64s(&mut r, n)?;
        let m = read_f64s(&mut r, n)?;
        let v = read_f64s(&mut r, n)?;
        let mut net = QNetwork::zeroed(&dims);
        net.seed = seed;
        net.set_parameters(&params)?;
        net.adam = AdamState { m, v, t };
        Ok(net)
    }
}

fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Index of the maximum; ties break to the lowest index.
pub fn argmax_index(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Greedy action from a 5-value head.
pub fn argmax_action(q: &[f64]) -> AgentAction {
    assert_eq!(q.len(), crate::sim::NUM_ACTIONS);
    AgentAction::from_index(argmax_index(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeroed_network_outputs_zero() {
        let net = QNetwork::zeroed(&[21, 256, 256, 5]);
        let x = vec![1.0; 21];
        assert!(net.forward(&x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_init_is_bit_reproducible() {
        let a = QNetwork::new(&[21, 256, 256, 5], 99);
        let b = QNetwork::new(&[21, 256, 256, 5], 99);
        assert_eq!(a.parameters(), b.parameters());
        let c = QNetwork::new(&[21, 256, 256, 5], 100);
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn hand_computed_forward() {
        let mut net = QNetwork::zeroed(&[2, 2, 1]);
        // w1 rows: [1, 2], [-1, 0.5]; b1: [0.5, -1]; w2: [2, -3]; b2: [0.25].
        net.set_parameters(&[1.0, 2.0, -1.0, 0.5, 0.5, -1.0, 2.0, -3.0, 0.25])
            .unwrap();
        let out = net.forward(&[1.0, -1.0]);
        // z1 = [-0.5, -2.5] -> relu [0, 0] -> out 0.25.
        assert!((out[0] - 0.25).abs() < 1e-15);
        let out = net.forward(&[2.0, 0.5]);
        // z1 = [3.5, -2.75] -> relu [3.5, 0] -> 2*3.5 + 0.25.
        assert!((out[0] - 7.25).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax_index(&[1.0, 3.0, 3.0, 2.0, 3.0]), 1);
        assert_eq!(
            argmax_action(&[0.0, 0.0, 0.0, 0.0, 0.0]),
            AgentAction::Accelerate
        );
    }

    #[test]
    fn parameters_round_trip() {
        let mut net = QNetwork::new(&[4, 7, 3], 5);
        let p = net.parameters();
        assert_eq!(p.len(), net.param_count());
        net.set_parameters(&p).unwrap();
        assert_eq!(net.parameters(), p);
        assert!(matches!(
            net.set_parameters(&[0.0; 3]),
            Err(NnError::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = QNetwork::new(&[3, 5, 4, 2], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<TrainSample> = (0..6)
            .map(|_| TrainSample {
                input: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: rng.gen_range(0..2),
                target: rng.gen_range(-1.0..1.0),
            })
            .collect();
        let (_, grad) = net.batch_gradient(&samples);
        let base = net.parameters();
        let h = 1e-5;
        let mut max_rel = 0.0_f64;
        for j in 0..base.len() {
            let mut probe = net.clone();
            let mut p = base.clone();
            p[j] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.batch_loss(&samples);
            p[j] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = probe.batch_loss(&samples);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(grad[j].abs()).max(1e-8);
            max_rel = max_rel.max((fd - grad[j]).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn matching_targets_leave_parameters_untouched() {
        let mut net = QNetwork::new(&[3, 4, 2], 2);
        let inputs = [vec![0.1, -0.2, 0.3], vec![1.0, 0.5, -0.5]];
        let samples: Vec<TrainSample> = inputs
            .iter()
            .map(|x| TrainSample {
                input: x.clone(),
                action: 1,
                target: net.forward(x)[1],
            })
            .collect();
        let before = net.parameters();
        let loss = net.train_batch(&samples, &TrainHyper::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.parameters(), before);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut net = QNetwork::new(&[3, 4, 2], 2);
        let samples = vec![TrainSample {
            input: vec![0.3, 0.1, -0.9],
            action: 0,
            target: 5.0,
        }];
        let before = net.parameters();
        let h = TrainHyper {
            learning_rate: 0.0,
            ..TrainHyper::default()
        };
        let loss = net.train_batch(&samples, &h).unwrap();
        assert!(loss > 0.0);
        assert_eq!(net.parameters(), before);
    }

    #[test]
    fn single_sample_fit_converges() {
        let mut net = QNetwork::new(&[21, 256, 256, 5], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sample = TrainSample {
            input: (0..21).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: 2,
            target: 1.0,
        };
        let h = TrainHyper::default();
        let mut losses = Vec::new();
        for _ in 0..2000 {
            losses.push(net.train_batch(&[sample.clone()], &h).unwrap());
        }
        assert!(losses[1999] < 1e-6, "final loss {}", losses[1999]);
        assert!(losses[1000] < losses[100]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut net = QNetwork::new(&[3, 4, 2], 2);
        let before = net.parameters();
        let t_before = net.adam_step_count();
        let samples = vec![TrainSample {
            input: vec![f64::INFINITY, 0.0, 0.0],
            action: 0,
            target: 0.0,
        }];
        assert!(matches!(
            net.train_batch(&samples, &TrainHyper::default()),
            Err(NnError::NonFiniteGradient)
        ));
        assert_eq!(net.parameters(), before);
        assert_eq!(net.adam_step_count(), t_before);
    }

    #[test]
    fn target_copy_shares_outputs_but_not_future_updates() {
        let mut src = QNetwork::new(&[4, 8, 3], 1);
        let mut dst = QNetwork::new(&[4, 8, 3], 2);
        src.copy_into_target(&mut dst).unwrap();
        let x = vec![0.2, -0.4, 0.8, 0.0];
        assert_eq!(src.forward(&x), dst.forward(&x));
        let frozen = dst.parameters();
        let samples = vec![TrainSample {
            input: x.clone(),
            action: 0,
            target: 3.0,
        }];
        src.train_batch(&samples, &TrainHyper::default()).unwrap();
        assert_eq!(dst.parameters(), frozen);
        assert_ne!(src.parameters(), frozen);

        let mut other = QNetwork::new(&[4, 9, 3], 0);
        assert!(matches!(
            src.copy_into_target(&mut other),
            Err(NnError::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net = QNetwork::new(&[21, 256, 256, 5], 77);
        // Take a couple of optimizer steps so Adam state is nontrivial.
        let samples = vec![TrainSample {
            input: vec![0.5; 21],
            action: 3,
            target: 2.0,
        }];
        for _ in 0..3 {
            net.train_batch(&samples, &TrainHyper::default()).unwrap();
        }
        net.save_checkpoint(&path).unwrap();
        let loaded = QNetwork::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.parameters(), net.parameters());
        assert_eq!(loaded.adam, net.adam);
        assert_eq!(loaded.seed(), net.seed());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..21).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert_eq!(net.forward(&x), loaded.forward(&x));
        }
    }

    #[test]
    fn truncated_checkpoint_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = QNetwork::new(&[3, 4, 2], 0);
        net.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            QNetwork::load_checkpoint(&path),
            Err(NnError::Io(_))
        ));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = QNetwork::new(&[3, 4, 2], 0);
        net.save_checkpoint(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            QNetwork::load_checkpoint(&path),
            Err(NnError::FormatVersionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn garbage_file_is_not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            QNetwork::load_checkpoint(&path),
            Err(NnError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn io_dims_guard() {
        let net = QNetwork::new(&[3, 4, 2], 0);
        assert!(net.ensure_io_dims(3, 2).is_ok());
        assert!(matches!(
            net.ensure_io_dims(21, 5),
            Err(NnError::ArchitectureMismatch { .. })
        ));
    }

    #[test]
    fn batched_gradient_agrees_with_singles() {
        // The blocked batch path must compute the same math as per-sample
        // gradients averaged by hand.
        let net = QNetwork::new(&[5, 16, 3], 21);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<TrainSample> = (0..33)
            .map(|_| TrainSample {
                input: (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                action: rng.gen_range(0..3),
                target: rng.gen_range(-2.0..2.0),
            })
            .collect();
        let (loss, grad) = net.batch_gradient(&samples);
        let mut acc = vec![0.0; grad.len()];
        let mut loss_acc = 0.0;
        for s in &samples {
            let (l, g) = net.batch_gradient(std::slice::from_ref(s));
            loss_acc += l;
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        let bn = samples.len() as f64;
        assert!((loss - loss_acc / bn).abs() < 1e-12);
        for (a, g) in acc.iter().zip(&grad) {
            assert!((a / bn - g).abs() < 1e-12);
        }
    }
}
