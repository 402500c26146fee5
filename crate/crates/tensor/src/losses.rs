//! Loss heads shared by the prediction model: the bivariate Gaussian
//! negative log-likelihood over raw head outputs, with a sigma floor and a
//! bounded correlation.

use crate::graph::{Graph, NodeId, TensorError};

const LN_2PI: f64 = 1.837877066409345;
/// Correlation bound keeping |rho| strictly below 1.
pub const RHO_SCALE: f64 = 0.99;

/// Converts one raw sigma channel into sigma_min + softplus(raw).
pub fn sigma_from_raw(g: &mut Graph, raw: NodeId, sigma_min: f64) -> NodeId {
    let sp = g.softplus(raw);
    g.add_scalar(sp, sigma_min)
}

/// Converts the raw correlation channel into RHO_SCALE * tanh(raw).
pub fn rho_from_raw(g: &mut Graph, raw: NodeId) -> NodeId {
    let t = g.tanh(raw);
    g.scale(t, RHO_SCALE)
}

/// Per-row bivariate Gaussian negative log-likelihood.
///
/// `raw` is [N, 5] with columns (mu_x, mu_y, sigma_x_raw, sigma_y_raw,
/// rho_raw); `target` is [N, 2]. Returns an [N, 1] column of NLL values.
pub fn graph_gaussian_nll(
    g: &mut Graph,
    raw: NodeId,
    target: NodeId,
    sigma_min: f64,
) -> Result<NodeId, TensorError> {
    if g.value(raw).cols() != 5 || g.value(target).cols() != 2 {
        return Err(TensorError::Shape(format!(
            "gaussian nll expects raw [N,5], target [N,2]; got {:?} and {:?}",
            g.value(raw).shape,
            g.value(target).shape
        )));
    }
    let mu_x = g.slice_cols(raw, 0, 1)?;
    let mu_y = g.slice_cols(raw, 1, 2)?;
    let sx_raw = g.slice_cols(raw, 2, 3)?;
    let sy_raw = g.slice_cols(raw, 3, 4)?;
    let rho_raw = g.slice_cols(raw, 4, 5)?;
    let tx = g.slice_cols(target, 0, 1)?;
    let ty = g.slice_cols(target, 1, 2)?;

    let sigma_x = sigma_from_raw(g, sx_raw, sigma_min);
    let sigma_y = sigma_from_raw(g, sy_raw, sigma_min);
    let rho = rho_from_raw(g, rho_raw);

    let dx = g.sub(mu_x, tx);
    let dy = g.sub(mu_y, ty);
    let dx_n = g.div(dx, sigma_x);
    let dy_n = g.div(dy, sigma_y);
    let dx2 = g.square(dx_n);
    let dy2 = g.square(dy_n);
    let cross = g.mul(dx_n, dy_n);
    let rho_cross = g.mul(rho, cross);
    let rho_cross2 = g.scale(rho_cross, 2.0);
    let z = {
        let s = g.add(dx2, dy2);
        g.sub(s, rho_cross2)
    };
    let rho2 = g.square(rho);
    let one_minus = {
        let n = g.neg(rho2);
        g.add_scalar(n, 1.0)
    };
    let ln_sx = g.ln(sigma_x);
    let ln_sy = g.ln(sigma_y);
    let ln_om = g.ln(one_minus);
    let half_ln_om = g.scale(ln_om, 0.5);
    let denom = g.scale(one_minus, 2.0);
    let quad = g.div(z, denom);
    let mut nll = g.add_scalar(ln_sx, LN_2PI);
    nll = g.add(nll, ln_sy);
    nll = g.add(nll, half_ln_om);
    nll = g.add(nll, quad);
    Ok(nll)
}
