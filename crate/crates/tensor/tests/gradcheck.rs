//! Central finite-difference verification of every differentiable block:
//! analytic gradients from the tape against (f(x+h) - f(x-h)) / 2h with
//! h = 1e-5, required to agree within a relative error of 1e-4.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scrisk_tensor::{
    attention_block, cross_attention_concat, mlp_block, AttentionParams, Graph, MlpParams,
    ParamStore, Tensor,
};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Checks every element of every named parameter against central
/// differences of the scalar loss produced by `build`.
fn gradcheck(store: &ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> usize, label: &str) {
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss).expect("backward");
    let analytic: std::collections::BTreeMap<String, Tensor> = g
        .bound_params()
        .iter()
        .map(|(name, node)| (name.clone(), grads.get(*node).cloned().unwrap_or_else(|| {
            Tensor::zeros(&store.get(name).shape)
        })))
        .collect();
    for name in store.names() {
        let n = store.get(name).len();
        for i in 0..n {
            let eval = |delta: f64| {
                let mut perturbed = store.clone();
                perturbed.get_mut(name).data[i] += delta;
                let mut g = Graph::new();
                let loss = build(&mut g, &perturbed);
                g.scalar_value(loss)
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let a = analytic[name].data[i];
            assert!(
                rel_err(a, numeric) < TOL,
                "{label}: {name}[{i}] analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// Random weighting tensor turning any output into a scalar loss.
fn weighted_sum(g: &mut Graph, out: usize, rng_seed: u64) -> usize {
    let shape = g.value(out).shape.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = Tensor {
        shape: shape.clone(),
        data: (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let w = g.constant(w);
    let prod = g.mul(out, w);
    g.sum_all(prod)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor {
        shape: vec![n, d],
        data: (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
    }
}

#[test]
fn gradcheck_mlp_block() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let d_in = rng.random_range(2..5);
        let d_h = rng.random_range(2..6);
        let d_out = rng.random_range(1..4);
        let n = rng.random_range(1..4);
        let mut store = ParamStore::new();
        MlpParams::init(&mut store, &mut rng, "m", d_in, d_h, d_out);
        store.add("x", random_matrix(&mut rng, n, d_in));
        gradcheck(
            &store,
            |g, s| {
                let p = MlpParams::bind(s, g, "m");
                let x = s.bind(g, "x");
                let y = mlp_block(g, x, &p).unwrap();
                weighted_sum(g, y, 1000 + trial)
            },
            &format!("mlp[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_attention_block() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + trial);
        let heads = [1, 2][rng.random_range(0..2)];
        let d = heads * 2 * rng.random_range(1..3);
        let nq = rng.random_range(1..4);
        let nk = rng.random_range(2..5);
        let with_pos = trial % 2 == 0;
        let with_mask = trial % 3 == 0;
        let mut store = ParamStore::new();
        AttentionParams::init(&mut store, &mut rng, "a", d, d, d);
        store.add("q", random_matrix(&mut rng, nq, d));
        store.add("k", random_matrix(&mut rng, nk, d));
        let valid: Vec<bool> = (0..nk).map(|i| i == 0 || rng.random::<f64>() > 0.3).collect();
        gradcheck(
            &store,
            |g, s| {
                let p = AttentionParams::bind(s, g, "a");
                let q = s.bind(g, "q");
                let k = s.bind(g, "k");
                let (pos_q, pos_k) = if with_pos {
                    let pq = g.constant(scrisk_tensor::token_position_encoding(nq, d));
                    let pk = g.constant(scrisk_tensor::token_position_encoding(nk, d));
                    (Some(pq), Some(pk))
                } else {
                    (None, None)
                };
                let mask = if with_mask { Some(valid.as_slice()) } else { None };
                let y = attention_block(g, q, k, k, pos_q, pos_k, mask, heads, &p, None).unwrap();
                weighted_sum(g, y, 2000 + trial)
            },
            &format!("attention[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_cross_attention_concat() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let heads = 2;
        let d = heads * rng.random_range(2..4);
        let nq = rng.random_range(1..4);
        let nk = rng.random_range(2..5);
        let mut store = ParamStore::new();
        AttentionParams::init(&mut store, &mut rng, "a", 2 * d, 2 * d, d);
        store.add("q", random_matrix(&mut rng, nq, d));
        store.add("k", random_matrix(&mut rng, nk, d));
        store.add("qp", random_matrix(&mut rng, nq, d));
        gradcheck(
            &store,
            |g, s| {
                let p = AttentionParams::bind(s, g, "a");
                let q = s.bind(g, "q");
                let k = s.bind(g, "k");
                let qp = s.bind(g, "qp");
                let kp = g.constant(scrisk_tensor::token_position_encoding(nk, d));
                let y = cross_attention_concat(g, q, qp, k, kp, None, heads, &p, None).unwrap();
                weighted_sum(g, y, 3000 + trial)
            },
            &format!("cross_attention[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_layer_norm() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
        let d = rng.random_range(2..6);
        let n = rng.random_range(1..5);
        let mut store = ParamStore::new();
        store.add("x", random_matrix(&mut rng, n, d));
        store.add("g", random_matrix(&mut rng, 1, d));
        store.add("b", random_matrix(&mut rng, 1, d));
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "x");
                let gain = s.bind(g, "g");
                let bias = s.bind(g, "b");
                let y = g.layer_norm(x, gain, bias).unwrap();
                weighted_sum(g, y, 4000 + trial)
            },
            &format!("layer_norm[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_softmax() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let d = rng.random_range(2..6);
        let n = rng.random_range(1..4);
        let mut store = ParamStore::new();
        store.add("x", random_matrix(&mut rng, n, d));
        let valid: Vec<bool> = (0..d).map(|i| i == 0 || rng.random::<f64>() > 0.25).collect();
        let masked = trial % 2 == 0;
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "x");
                let y = g.softmax_rows(x, if masked { Some(&valid) } else { None }).unwrap();
                weighted_sum(g, y, 5000 + trial)
            },
            &format!("softmax[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_sinusoidal_position_addition() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + trial);
        let d = 2 * rng.random_range(1..4);
        let n = rng.random_range(1..5);
        let mut store = ParamStore::new();
        store.add("x", random_matrix(&mut rng, n, d));
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "x");
                let pe = g.constant(scrisk_tensor::token_position_encoding(n, d));
                let y = g.add(x, pe);
                let y = g.tanh(y);
                weighted_sum(g, y, 6000 + trial)
            },
            &format!("pe_add[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_gaussian_nll() {
    // Bivariate Gaussian negative log-likelihood assembled from primitives,
    // exactly as the regression head uses it.
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + trial);
        let n = rng.random_range(1..4);
        let mut store = ParamStore::new();
        store.add("raw", random_matrix(&mut rng, n, 5));
        let gt = random_matrix(&mut rng, n, 2);
        gradcheck(
            &store,
            |g, s| {
                let raw = s.bind(g, "raw");
                let target = g.constant(gt.clone());
                let nll = scrisk_tensor::graph_gaussian_nll(g, raw, target, 0.1).unwrap();
                g.mean_all(nll)
            },
            &format!("gaussian_nll[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_cross_entropy() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + trial);
        let n = rng.random_range(2..8);
        let target = rng.random_range(0..n);
        let mut store = ParamStore::new();
        store.add("logits", random_matrix(&mut rng, 1, n));
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "logits");
                g.cross_entropy(x, target).unwrap()
            },
            &format!("cross_entropy[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_smooth_l1_and_abs() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial);
        let n = rng.random_range(1..4);
        let d = rng.random_range(1..5);
        let mut store = ParamStore::new();
        store.add("x", random_matrix(&mut rng, n, d));
        let t = random_matrix(&mut rng, n, d);
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "x");
                let target = g.constant(t.clone());
                let sl = g.smooth_l1(x, target);
                let l1 = {
                    let d = g.sub(x, target);
                    g.abs(d)
                };
                let both = g.add(sl, l1);
                weighted_sum(g, both, 9000 + trial)
            },
            &format!("smooth_l1[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_ext_avg_operators() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let n = rng.random_range(1..4);
        let d = rng.random_range(1..4);
        let times = rng.random_range(2..4);
        let mut store = ParamStore::new();
        store.add("x", random_matrix(&mut rng, n, d));
        store.add("y", random_matrix(&mut rng, times, d));
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "x");
                let y = s.bind(g, "y");
                let ext_x = g.repeat_rows(x, times);
                let ext_y = g.tile_rows(y, n);
                let fused = g.mul(ext_x, ext_y);
                let back_a = g.mean_rows_chunked(fused, times).unwrap();
                let back_b = g.mean_rows_strided(fused, times).unwrap();
                let sa = weighted_sum(g, back_a, 10_000 + trial);
                let sb = weighted_sum(g, back_b, 20_000 + trial);
                g.add(sa, sb)
            },
            &format!("ext_avg[{trial}]"),
        );
    }
}

#[test]
fn gradcheck_max_pool_rows() {
    for trial in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + trial);
        let n = rng.random_range(2..6);
        let d = rng.random_range(1..5);
        let mut store = ParamStore::new();
        store.add("x", random_matrix(&mut rng, n, d));
        gradcheck(
            &store,
            |g, s| {
                let x = s.bind(g, "x");
                let y = g.max_rows(x);
                weighted_sum(g, y, 11_000 + trial)
            },
            &format!("max_rows[{trial}]"),
        );
    }
}
