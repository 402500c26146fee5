use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scrisk_tensor::{attention_block, AttentionParams, Graph, MlpParams, ParamStore, Tensor, mlp_block, cross_attention_concat, token_position_encoding};

// Standalone reproduction: zeros-constant query content with a
// parameter-derived positional term, decoder layer-0 style.
fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let d = 8usize;
    let mut store = ParamStore::new();
    AttentionParams::init(&mut store, &mut rng, "self_t", d, d, d);
    AttentionParams::init(&mut store, &mut rng, "cross", 2 * d, 2 * d, d);
    MlpParams::init(&mut store, &mut rng, "emb", d, d, d);
    MlpParams::init(&mut store, &mut rng, "head", d, d, 5);
    store.add("e_keys", Tensor::xavier(&mut rng, 3, d));
    // Randomize every bias so no layer norm sits at the zero-variance point.
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        if name.contains(".b_") || name.ends_with(".b1") || name.ends_with(".b2") {
            let t = store.get_mut(&name);
            for v in t.data.iter_mut() { *v = rng.random_range(-0.3..0.3); }
        }
    }

    for stage in 0..4 {
        let build = |store: &ParamStore| -> (Graph, usize) {
            let mut g = Graph::new();
            let emb = MlpParams::bind(store, &mut g, "emb");
            let pe = g.constant(token_position_encoding(2, d));
            let t_t = mlp_block(&mut g, pe, &emb).unwrap();
            let q0 = g.constant(Tensor::zeros(&[2, d]));
            let p_self = AttentionParams::bind(store, &mut g, "self_t");
            let s_t = attention_block(&mut g, q0, q0, q0, Some(t_t), Some(t_t), None, 2, &p_self, None).unwrap();
            let out = match stage {
                0 => s_t,
                1 => {
                    let keys = store.bind(&mut g, "e_keys");
                    let kp = g.constant(token_position_encoding(3, d));
                    let p_cross = AttentionParams::bind(store, &mut g, "cross");
                    cross_attention_concat(&mut g, s_t, t_t, keys, kp, None, 2, &p_cross, None).unwrap()
                }
                2 => {
                    let h = MlpParams::bind(store, &mut g, "head");
                    mlp_block(&mut g, s_t, &h).unwrap()
                }
                _ => {
                    let keys = store.bind(&mut g, "e_keys");
                    let kp = g.constant(token_position_encoding(3, d));
                    let p_cross = AttentionParams::bind(store, &mut g, "cross");
                    let c = cross_attention_concat(&mut g, s_t, t_t, keys, kp, None, 2, &p_cross, None).unwrap();
                    let h = MlpParams::bind(store, &mut g, "head");
                    mlp_block(&mut g, c, &h).unwrap()
                }
            };
            // deterministic weighting
            let shape = g.value(out).shape.clone();
            let w = Tensor { shape: shape.clone(), data: (0..shape.iter().product()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect() };
            let wc = g.constant(w);
            let prod = g.mul(out, wc);
            let loss = g.sum_all(prod);
            (g, loss)
        };
        let (g, loss) = build(&store);
        let grads = g.backward(loss).unwrap();
        let analytic: std::collections::BTreeMap<String, Tensor> = g.bound_params().iter()
            .map(|(n, id)| (n.clone(), grads.get(*id).cloned().unwrap_or_else(|| Tensor::zeros(&store.get(n).shape))))
            .collect();
        let h = 1e-5;
        let mut worst = (0.0f64, String::new());
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            let len = store.get(&name).len();
            for i in 0..len {
                let mut s2 = store.clone();
                s2.get_mut(&name).data[i] += h;
                let (g2, l2) = build(&s2);
                let up = g2.scalar_value(l2);
                let mut s3 = store.clone();
                s3.get_mut(&name).data[i] -= h;
                let (g3, l3) = build(&s3);
                let down = g3.scalar_value(l3);
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.get(&name).map_or(0.0, |t| t.data[i]);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                if rel > worst.0 { worst = (rel, format!("{name}[{i}] a={a} n={numeric}")); }
            }
        }
        println!("stage {stage}: worst rel {:.3e}  {}", worst.0, worst.1);
    }
}
