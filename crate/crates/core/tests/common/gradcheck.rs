//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance suite. Each check returns the worst case over its seeds.

use std::ops::Range;

use mixroute::grpo::{grpo_loss, grpo_loss_and_grad, AnchorSnapshot, Decision, GrpoConfig, LossNormalization, TrajectoryGroup};
use mixroute::nn::{self, Matrix, ParamTensor, LAYER_NORM_EPS};
use mixroute::router::{RouterConfig, RouterParams, StepSequence};
use rand::Rng;

use super::{inner, numeric_gradient, random_matrix, relative_error, rng};

pub const OP_H: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const GRPO_H: f64 = 1e-4;
pub const GRPO_TOL: f64 = 1e-3;

/// Largest `error / tolerance` seen, with where it happened.
#[derive(Debug, Clone, Default)]
pub struct Worst {
    pub ratio: f64,
    pub error: f64,
    pub at: String,
    pub failures: usize,
}

impl Worst {
    fn record(&mut self, label: &str, seed: u64, analytic: &[f64], numeric: &[f64], tol: f64) {
        let error = relative_error(analytic, numeric);
        if error >= tol {
            self.failures += 1;
        }
        if error / tol >= self.ratio {
            self.ratio = error / tol;
            self.error = error;
            self.at = format!("{label} seed {seed}");
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn with_values(m: &Matrix, values: &[f64]) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), values.to_vec()).unwrap()
}

fn dims(rng: &mut impl Rng) -> (usize, usize) {
    (rng.random_range(1..=8), rng.random_range(1..=8))
}

pub fn linear(seeds: Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let (rows, d_in) = dims(&mut r);
        let d_out = r.random_range(1..=8);
        let x = random_matrix(&mut r, rows, d_in);
        let mut w = ParamTensor::new(random_matrix(&mut r, d_in, d_out));
        let mut b = ParamTensor::new(random_matrix(&mut r, 1, d_out));
        let g = random_matrix(&mut r, rows, d_out);
        let dx = nn::linear_backward(&x, &mut w, &mut b, &g).unwrap();

        let f_x = |v: &[f64]| inner(&nn::linear_forward(&with_values(&x, v), &w, &b).unwrap(), &g);
        worst.record("linear dx", seed, dx.as_slice(), &numeric_gradient(x.as_slice(), OP_H, f_x), OP_TOL);
        let f_w = |v: &[f64]| {
            let wv = ParamTensor::new(with_values(&w.value, v));
            inner(&nn::linear_forward(&x, &wv, &b).unwrap(), &g)
        };
        worst.record("linear dW", seed, w.grad.as_slice(), &numeric_gradient(w.value.as_slice(), OP_H, f_w), OP_TOL);
        let f_b = |v: &[f64]| {
            let bv = ParamTensor::new(with_values(&b.value, v));
            inner(&nn::linear_forward(&x, &w, &bv).unwrap(), &g)
        };
        worst.record("linear db", seed, b.grad.as_slice(), &numeric_gradient(b.value.as_slice(), OP_H, f_b), OP_TOL);
    }
    worst
}

pub fn relu(seeds: Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let (rows, cols) = dims(&mut r);
        let mut x = random_matrix(&mut r, rows, cols);
        // Keep clear of the kink so the difference quotient is well defined.
        for v in x.as_mut_slice() {
            if v.abs() < 1e-3 {
                *v = 0.5;
            }
        }
        let g = random_matrix(&mut r, rows, cols);
        let dx = nn::relu_backward(&x, &g);
        let f = |v: &[f64]| inner(&nn::relu(&with_values(&x, v)), &g);
        worst.record("relu", seed, dx.as_slice(), &numeric_gradient(x.as_slice(), OP_H, f), OP_TOL);
    }
    worst
}

pub fn softmax(seeds: Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let (rows, cols) = dims(&mut r);
        let x = random_matrix(&mut r, rows, cols).scale(3.0);
        let g = random_matrix(&mut r, rows, cols);
        let dx = nn::softmax_rows_backward(&nn::softmax_rows(&x), &g);
        let f = |v: &[f64]| inner(&nn::softmax_rows(&with_values(&x, v)), &g);
        worst.record("softmax", seed, dx.as_slice(), &numeric_gradient(x.as_slice(), OP_H, f), OP_TOL);
    }
    worst
}

pub fn layer_norm(seeds: Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let rows = r.random_range(1..=8);
        let cols = r.random_range(2..=8);
        let x = random_matrix(&mut r, rows, cols);
        let mut gain = ParamTensor::new(random_matrix(&mut r, 1, cols));
        let mut shift = ParamTensor::new(random_matrix(&mut r, 1, cols));
        let g = random_matrix(&mut r, rows, cols);
        let (_, cache) = nn::layer_norm(&x, &gain, &shift, LAYER_NORM_EPS).unwrap();
        let dx = nn::layer_norm_backward(&cache, &mut gain, &mut shift, &g).unwrap();

        let out = |x: &Matrix, gain: &ParamTensor, shift: &ParamTensor| {
            inner(&nn::layer_norm(x, gain, shift, LAYER_NORM_EPS).unwrap().0, &g)
        };
        let f_x = |v: &[f64]| out(&with_values(&x, v), &gain, &shift);
        worst.record("layer_norm dx", seed, dx.as_slice(), &numeric_gradient(x.as_slice(), OP_H, f_x), OP_TOL);
        let f_g = |v: &[f64]| out(&x, &ParamTensor::new(with_values(&gain.value, v)), &shift);
        worst.record("layer_norm dgain", seed, gain.grad.as_slice(), &numeric_gradient(gain.value.as_slice(), OP_H, f_g), OP_TOL);
        let f_s = |v: &[f64]| out(&x, &gain, &ParamTensor::new(with_values(&shift.value, v)));
        worst.record("layer_norm dshift", seed, shift.grad.as_slice(), &numeric_gradient(shift.value.as_slice(), OP_H, f_s), OP_TOL);
    }
    worst
}

pub fn masked_attention(seeds: Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let t = r.random_range(1..=8);
        let dh = r.random_range(1..=8);
        let dv = r.random_range(1..=8);
        let q = random_matrix(&mut r, t, dh);
        let k = random_matrix(&mut r, t, dh);
        let v = random_matrix(&mut r, t, dv);
        let valid = r.random_range(1..=t);
        let mask: Vec<bool> = (0..t).map(|i| i < valid).collect();
        let g = random_matrix(&mut r, t, dv);
        let (_, cache) = nn::masked_attention(&q, &k, &v, &mask).unwrap();
        let (dq, dk, dvv) = nn::masked_attention_backward(&cache, &q, &k, &v, &g).unwrap();

        let out = |q: &Matrix, k: &Matrix, v: &Matrix| inner(&nn::masked_attention(q, k, v, &mask).unwrap().0, &g);
        let f_q = |x: &[f64]| out(&with_values(&q, x), &k, &v);
        worst.record("attention dQ", seed, dq.as_slice(), &numeric_gradient(q.as_slice(), OP_H, f_q), OP_TOL);
        let f_k = |x: &[f64]| out(&q, &with_values(&k, x), &v);
        worst.record("attention dK", seed, dk.as_slice(), &numeric_gradient(k.as_slice(), OP_H, f_k), OP_TOL);
        let f_v = |x: &[f64]| out(&q, &k, &with_values(&v, x));
        worst.record("attention dV", seed, dvv.as_slice(), &numeric_gradient(v.as_slice(), OP_H, f_v), OP_TOL);
    }
    worst
}

pub fn weighted_cross_entropy_wrt_logits(seeds: Range<u64>) -> Worst {
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let rows = r.random_range(1..=8);
        let classes = r.random_range(2..=8);
        let logits = random_matrix(&mut r, rows, classes).scale(2.0);
        let labels: Vec<usize> = (0..rows).map(|_| r.random_range(0..classes)).collect();
        let weights: Vec<f64> = (0..classes).map(|_| r.random_range(0.1..5.0)).collect();
        let probs = nn::softmax_rows(&logits);
        let grad = nn::weighted_cross_entropy_backward(&probs, &labels, &weights).unwrap();
        let f = |v: &[f64]| {
            nn::weighted_cross_entropy(&nn::softmax_rows(&with_values(&logits, v)), &labels, &weights).unwrap()
        };
        worst.record("weighted CE", seed, grad.as_slice(), &numeric_gradient(logits.as_slice(), OP_H, f), OP_TOL);
    }
    worst
}

fn mini_config() -> RouterConfig {
    RouterConfig {
        embed_dim: 4,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 8,
        max_len: 4,
        ..RouterConfig::default()
    }
}

fn random_sequence(r: &mut impl Rng, max_len: usize, d: usize) -> StepSequence {
    let valid = r.random_range(1..=max_len);
    let steps: Vec<Vec<f64>> = (0..valid)
        .map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    StepSequence::from_steps(&steps).unwrap().padded_to(max_len)
}

/// Fixtures whose ReLU inputs sit this close to zero are redrawn: central
/// differences straddling the kink do not estimate the one-sided gradient.
const KINK_MARGIN: f64 = 1e-3;

fn clear_of_kinks(params: &RouterParams, seqs: &[&StepSequence]) -> bool {
    seqs.iter()
        .all(|s| params.forward(s).unwrap().relu_margin() > KINK_MARGIN)
}

fn perturbed(params: &RouterParams, r: &mut impl Rng, scale: f64) -> RouterParams {
    let mut out = params.clone();
    let values: Vec<f64> = params
        .flat_values()
        .iter()
        .map(|v| v + scale * r.random_range(-1.0..1.0))
        .collect();
    out.set_flat_values(&values).unwrap();
    out
}

pub fn full_router_forward(seeds: Range<u64>) -> Worst {
    let cfg = mini_config();
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(seed);
        let base = RouterParams::new(cfg, seed).unwrap();
        // Non-trivial layer-norm affine parameters.
        let mut params = perturbed(&base, &mut r, 0.1);
        let seq = loop {
            let s = random_sequence(&mut r, cfg.max_len, cfg.embed_dim);
            if clear_of_kinks(&params, &[&s]) {
                break s;
            }
        };
        let g: Vec<f64> = (0..cfg.num_precisions).map(|_| r.random_range(-1.0..1.0)).collect();
        params.zero_grad();
        let pass = params.forward(&seq).unwrap();
        params.backward(&pass, &g).unwrap();
        let analytic = params.flat_grads();

        let mut probe = params.clone();
        let f = |v: &[f64]| {
            probe.set_flat_values(v).unwrap();
            let logits = probe.forward(&seq).unwrap().logits().to_vec();
            logits.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        worst.record("router", seed, &analytic, &numeric_gradient(&params.flat_values(), OP_H, f), OP_TOL);
    }
    worst
}

pub fn router_through_weighted_cross_entropy(seeds: Range<u64>) -> Worst {
    let cfg = mini_config();
    let weights = [0.6, 3.0];
    let mut worst = Worst::default();
    for seed in seeds {
        let mut r = rng(1000 + seed);
        let mut params = RouterParams::new(cfg, seed).unwrap();
        let seq = loop {
            let s = random_sequence(&mut r, cfg.max_len, cfg.embed_dim);
            if clear_of_kinks(&params, &[&s]) {
                break s;
            }
        };
        let y = [r.random_range(0..2usize)];
        params.zero_grad();
        let pass = params.forward(&seq).unwrap();
        let probs = Matrix::row_vector(pass.probs());
        let grad = nn::weighted_cross_entropy_backward(&probs, &y, &weights).unwrap();
        params.backward(&pass, grad.row(0)).unwrap();
        let analytic = params.flat_grads();

        let mut probe = params.clone();
        let f = |v: &[f64]| {
            probe.set_flat_values(v).unwrap();
            let p = Matrix::row_vector(&probe.probabilities(&seq).unwrap());
            nn::weighted_cross_entropy(&p, &y, &weights).unwrap()
        };
        worst.record("router CE", seed, &analytic, &numeric_gradient(&params.flat_values(), OP_H, f), OP_TOL);
    }
    worst
}

fn grpo_fixture(r: &mut impl Rng, params: &RouterParams) -> Vec<TrajectoryGroup> {
    loop {
        let groups = draw_groups(r, params.config());
        let seqs: Vec<&StepSequence> = groups
            .iter()
            .flat_map(|g| g.decisions.iter().flatten().map(|d| &d.sequence))
            .collect();
        if clear_of_kinks(params, &seqs) {
            return groups;
        }
    }
}

fn draw_groups(r: &mut impl Rng, cfg: &RouterConfig) -> Vec<TrajectoryGroup> {
    (0..2)
        .map(|_| {
            let decisions: Vec<Vec<Decision>> = (0..2)
                .map(|_| {
                    (0..r.random_range(1..=3))
                        .map(|_| Decision {
                            sequence: random_sequence(r, cfg.max_len, cfg.embed_dim),
                            chosen: r.random_range(0..cfg.num_precisions),
                        })
                        .collect()
                })
                .collect();
            let a = r.random_range(0.2..1.5);
            TrajectoryGroup::from_decisions(decisions, vec![a, -a])
        })
        .collect()
}

fn grpo_check(seeds: Range<u64>, normalization: LossNormalization, label: &str) -> Worst {
    let cfg = mini_config();
    let mut worst = Worst::default();
    let grpo = GrpoConfig {
        beta: 0.5,
        normalization,
        ..GrpoConfig::default()
    };
    for seed in seeds {
        let mut r = rng(5000 + seed);
        let init = RouterParams::new(cfg, seed).unwrap();
        let anchor = AnchorSnapshot::new(&init);
        // Away from the anchor, where the KL term has a non-zero gradient.
        let mut params = perturbed(&init, &mut r, 0.2);
        let groups = grpo_fixture(&mut r, &params);
        grpo_loss_and_grad(&mut params, &anchor, &groups, &grpo).unwrap();
        let analytic = params.flat_grads();

        let mut probe = params.clone();
        let f = |v: &[f64]| {
            probe.set_flat_values(v).unwrap();
            grpo_loss(&probe, &anchor, &groups, &grpo).unwrap().total
        };
        worst.record(label, seed, &analytic, &numeric_gradient(&params.flat_values(), GRPO_H, f), GRPO_TOL);
    }
    worst
}

pub fn grpo_loss_trajectory_normalized(seeds: Range<u64>) -> Worst {
    grpo_check(seeds, LossNormalization::Trajectory, "grpo")
}

pub fn grpo_loss_per_step_normalized(seeds: Range<u64>) -> Worst {
    grpo_check(seeds, LossNormalization::PerStep, "grpo per-step")
}

pub fn kl_penalty(seeds: Range<u64>) -> Worst {
    let cfg = mini_config();
    let mut worst = Worst::default();
    let grpo = GrpoConfig {
        beta: 1.0,
        ..GrpoConfig::default()
    };
    for seed in seeds {
        let mut r = rng(9000 + seed);
        let init = RouterParams::new(cfg, seed).unwrap();
        let anchor = AnchorSnapshot::new(&init);
        let mut params = perturbed(&init, &mut r, 0.3);
        let groups: Vec<TrajectoryGroup> = grpo_fixture(&mut r, &params)
            .into_iter()
            .map(|g| {
                let n = g.decisions.len();
                TrajectoryGroup::from_decisions(g.decisions, vec![0.0; n])
            })
            .collect();
        grpo_loss_and_grad(&mut params, &anchor, &groups, &grpo).unwrap();
        let analytic = params.flat_grads();
        let mut probe = params.clone();
        let f = |v: &[f64]| {
            probe.set_flat_values(v).unwrap();
            grpo_loss(&probe, &anchor, &groups, &grpo).unwrap().kl
        };
        worst.record("kl penalty", seed, &analytic, &numeric_gradient(&params.flat_values(), OP_H, f), OP_TOL);
    }
    worst
}
