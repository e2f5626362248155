//! Stacked bidirectional LSTM over a batch of equal-length sequences.
//!
//! Sequences are laid out time-major: row `t * batch + b` holds timestep
//! `t` of sequence `b`. Gates are packed `[i | f | g | o]`.

use crate::error::Result;
use crate::numerics::{BoundParams, Graph, Init, Var};

/// Weights are uniform on `±INIT_GAIN/√fan_in`.
const INIT_GAIN: f32 = 2.0;
/// Forget-gate bias at initialization; the other gates start at zero.
const FORGET_BIAS: f32 = 1.0;

fn weight_init(fan_in: usize) -> Init {
    Init::Uniform(INIT_GAIN / (fan_in as f32).sqrt())
}

pub(super) fn param_specs(prefix: &str, layers: usize, input: usize, hidden: usize) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = Vec::new();
    for l in 0..layers {
        let in_dim = if l == 0 { input } else { 2 * hidden };
        for dir in ["fwd", "bwd"] {
            let p = format!("{prefix}.l{l}.{dir}");
            specs.push((format!("{p}.w_ih"), vec![in_dim, 4 * hidden], weight_init(in_dim)));
            specs.push((format!("{p}.w_hh"), vec![hidden, 4 * hidden], weight_init(hidden)));
            specs.push((
                format!("{p}.bias"),
                vec![1, 4 * hidden],
                Init::Blocks([0.0, FORGET_BIAS, 0.0, 0.0]),
            ));
        }
    }
    specs
}

/// One direction of one layer. Returns the hidden state at every timestep
/// (`batch × hidden` each, indexed by time).
fn direction(
    g: &mut Graph<'_>,
    bound: &BoundParams,
    prefix: &str,
    x: Var,
    steps: usize,
    batch: usize,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let w_ih = bound.var(&format!("{prefix}.w_ih"))?;
    let w_hh = bound.var(&format!("{prefix}.w_hh"))?;
    let bias = bound.var(&format!("{prefix}.bias"))?;
    let proj = g.matmul(x, w_ih)?;
    let proj = g.add_row(proj, bias)?;
    let mut out: Vec<Option<Var>> = vec![None; steps];
    let mut state: Option<(Var, Var)> = None;
    for step in 0..steps {
        let t = if reverse { steps - 1 - step } else { step };
        let mut gates = g.slice(proj, 0, t * batch, (t + 1) * batch)?;
        if let Some((h, _)) = state {
            let rec = g.matmul(h, w_hh)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice(gates, 1, 0, hidden)?;
        let i = g.sigmoid(i);
        let cand = g.slice(gates, 1, 2 * hidden, 3 * hidden)?;
        let cand = g.tanh(cand);
        let o = g.slice(gates, 1, 3 * hidden, 4 * hidden)?;
        let o = g.sigmoid(o);
        let mut c = g.mul(i, cand)?;
        if let Some((_, c_prev)) = state {
            let f = g.slice(gates, 1, hidden, 2 * hidden)?;
            let f = g.sigmoid(f);
            let keep = g.mul(f, c_prev)?;
            c = g.add(c, keep)?;
        }
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        out[t] = Some(h);
        state = Some((h, c));
    }
    Ok(out.into_iter().map(|h| h.expect("every timestep visited")).collect())
}

/// Run the stack on `x` (`(steps·batch) × input`, time-major). Returns the
/// top layer's concatenated directional states in the same layout,
/// `(steps·batch) × 2·hidden`.
pub(super) fn bilstm(
    g: &mut Graph<'_>,
    bound: &BoundParams,
    prefix: &str,
    layers: usize,
    mut x: Var,
    steps: usize,
    batch: usize,
    hidden: usize,
) -> Result<Var> {
    for l in 0..layers {
        let fwd = direction(g, bound, &format!("{prefix}.l{l}.fwd"), x, steps, batch, hidden, false)?;
        let bwd = direction(g, bound, &format!("{prefix}.l{l}.bwd"), x, steps, batch, hidden, true)?;
        let mut rows = Vec::with_capacity(steps);
        for (f, b) in fwd.into_iter().zip(bwd) {
            rows.push(g.concat(&[f, b], 1)?);
        }
        x = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
    }
    Ok(x)
}
