//! Coupled hard-assignment training losses. The endpoint intention nearest
//! the ground-truth endpoint and the risk intention nearest the ground-truth
//! maximum risk jointly pick one mode of the prediction matrix; that mode
//! receives the Gaussian regression, velocity, and risk-sequence losses,
//! while the mode logits receive cross-entropy toward it at every layer.

use scrisk_tensor::{graph_gaussian_nll, NodeId};

use crate::config::ModelConfig;
use crate::features::SceneSample;
use crate::intentions::IntentionSet;
use crate::model::{Forward, ModelError};

/// Default weight of the L1 velocity term inside the regression loss.
pub const VELOCITY_LOSS_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Regression + classification, summed over decoder layers.
    pub l_traj: f64,
    pub l_dense: f64,
    /// Risk sequence L1 + classification, summed over decoder layers.
    pub l_risk: f64,
    pub total: f64,
    pub i_star: usize,
    pub j_star: usize,
}

/// Nearest endpoint intention by Euclidean endpoint distance and nearest
/// risk intention by absolute distance to the ground-truth maximum risk.
/// Ties break toward the lower index.
pub fn assign_modes(
    intentions: &IntentionSet,
    gt_endpoint: [f64; 2],
    gt_max_risk: f64,
) -> (usize, usize) {
    let mut i_star = 0;
    let mut best = f64::INFINITY;
    for (i, p) in intentions.endpoints.iter().enumerate() {
        let d = (p[0] - gt_endpoint[0]).hypot(p[1] - gt_endpoint[1]);
        if d < best {
            best = d;
            i_star = i;
        }
    }
    let mut j_star = 0;
    let mut best = f64::INFINITY;
    for (j, nu) in intentions.risks.iter().enumerate() {
        let d = (nu - gt_max_risk).abs();
        if d < best {
            best = d;
            j_star = j;
        }
    }
    (i_star, j_star)
}

/// Builds the total loss node over all decoder layers and reports the
/// breakdown. The same flat mode index m* = i* * N_risk + j* couples the
/// trajectory and risk selections.
pub fn build_losses(
    fw: &mut Forward,
    sample: &SceneSample,
    intentions: &IntentionSet,
    config: &ModelConfig,
    velocity_weight: f64,
) -> Result<(NodeId, LossBreakdown), ModelError> {
    let (i_star, j_star) = assign_modes(intentions, sample.gt_endpoint, sample.gt_max_risk);
    let m_star = i_star * config.n_risk() + j_star;
    let t_f = config.t_f;
    let g = &mut fw.graph;

    let gt_traj = g.constant(sample.gt_future.clone());
    let gt_vel = g.constant(sample.gt_future_vel.clone());
    let gt_risk = g.constant(sample.gt_risk_seq.clone());

    let mut traj_terms: Vec<NodeId> = Vec::new();
    let mut risk_terms: Vec<NodeId> = Vec::new();
    for layer in &fw.layers {
        let row = g.slice_rows(layer.traj_raw, m_star, m_star + 1)?;
        let per_frame = g.reshape(row, vec![t_f, 7])?;
        let gauss_raw = g.slice_cols(per_frame, 0, 5)?;
        let vel = g.slice_cols(per_frame, 5, 7)?;
        let nll = graph_gaussian_nll(g, gauss_raw, gt_traj, config.sigma_min)?;
        let nll_mean = g.mean_all(nll);
        let vel_err = {
            let d = g.sub(vel, gt_vel);
            let a = g.abs(d);
            g.mean_all(a)
        };
        let vel_term = g.scale(vel_err, velocity_weight);
        let l_reg = g.add(nll_mean, vel_term);
        let logits_row = {
            let m = config.n_modes();
            g.reshape(layer.logits, vec![1, m])?
        };
        let l_cls = g.cross_entropy(logits_row, m_star)?;
        let l_traj = g.add(l_reg, l_cls);
        traj_terms.push(l_traj);

        let risk_row = g.slice_rows(layer.risk_raw, m_star, m_star + 1)?;
        let risk_pred = g.reshape(risk_row, vec![t_f, 3])?;
        let risk_l1 = {
            let d = g.sub(risk_pred, gt_risk);
            let a = g.abs(d);
            g.mean_all(a)
        };
        let l_risk = g.add(risk_l1, l_cls);
        risk_terms.push(l_risk);
    }

    let mut l_traj = traj_terms[0];
    for &t in &traj_terms[1..] {
        l_traj = g.add(l_traj, t);
    }
    let mut l_risk = risk_terms[0];
    for &t in &risk_terms[1..] {
        l_risk = g.add(l_risk, t);
    }
    let dense_term = g.scale(fw.dense_loss, config.lambda_dense);
    let risk_term = g.scale(l_risk, config.lambda_risk);
    let mut total = g.add(l_traj, dense_term);
    total = g.add(total, risk_term);

    let breakdown = LossBreakdown {
        l_traj: g.scalar_value(l_traj),
        l_dense: g.scalar_value(fw.dense_loss),
        l_risk: g.scalar_value(l_risk),
        total: g.scalar_value(total),
        i_star,
        j_star,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use scrisk_tensor::{Graph, Tensor};

    fn toy_intents() -> IntentionSet {
        IntentionSet {
            endpoints: vec![[0.0, 0.0], [10.0, 0.0], [20.0, 5.0], [30.0, -5.0]],
            risks: vec![300.0, 600.0, 999.0],
        }
    }

    #[test]
    fn exact_match_assignment() {
        let intents = toy_intents();
        let (i, j) = assign_modes(&intents, [30.0, -5.0], 999.0);
        assert_eq!((i, j), (3, 2));
    }

    #[test]
    fn assignment_matches_exhaustive_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n_end = rng.random_range(2..12);
            let n_risk = rng.random_range(2..6);
            let endpoints: Vec<[f64; 2]> = (0..n_end)
                .map(|_| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)])
                .collect();
            let mut risks: Vec<f64> = (0..n_risk - 1)
                .map(|_| rng.random_range(0.0..998.0))
                .collect();
            risks.push(999.0);
            risks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            risks.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            if risks.len() < n_risk {
                continue;
            }
            let intents = IntentionSet { endpoints: endpoints.clone(), risks: risks.clone() };
            let endpoint = [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)];
            let max_risk = rng.random_range(0.0..999.0);
            let (i, j) = assign_modes(&intents, endpoint, max_risk);
            // Exhaustive search over all (i, j) pairs.
            let mut best = (0, 0);
            let mut best_cost = f64::INFINITY;
            for ii in 0..endpoints.len() {
                for jj in 0..risks.len() {
                    let d_end = (endpoints[ii][0] - endpoint[0]).hypot(endpoints[ii][1] - endpoint[1]);
                    let d_risk = (risks[jj] - max_risk).abs();
                    // The two argmins are independent; the exhaustive pair
                    // cost is their sum, minimized exactly by the pair of
                    // independent argmins.
                    let cost = d_end + d_risk;
                    if cost < best_cost - 1e-12 {
                        best_cost = cost;
                        best = (ii, jj);
                    }
                }
            }
            assert_eq!((i, j), best);
        }
    }

    #[test]
    fn logit_shift_invariance_of_assignment_and_ce_gradient_shape() {
        // Hard assignment never looks at logits; cross-entropy is invariant
        // to an additive constant on every logit.
        let mut g = Graph::new();
        let logits = g.var(Tensor::row(&[0.3, -1.0, 2.0, 0.1]));
        let ce1 = g.cross_entropy(logits, 2).unwrap();
        let shifted = g.add_scalar(logits, 7.5);
        let ce2 = g.cross_entropy(shifted, 2).unwrap();
        assert!((g.scalar_value(ce1) - g.scalar_value(ce2)).abs() < 1e-9);
    }
}
