use super::graph::{Graph, Var};
use super::params::{BoundParams, ParamStore};
use crate::error::{Error, Result};

/// Compare analytic gradients against central differences.
///
/// The numeric derivative combines central differences at steps `epsilon`
/// and `2·epsilon` as `(4·D(ε) − D(2ε)) / 3`, the five-point stencil.
/// `f` builds a scalar objective on a fresh graph from the bound
/// parameters. Returns the maximum over every parameter coordinate of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`. Results near
/// non-differentiable points (ties in a max, clamp boundaries) can be large.
pub fn grad_check<F>(f: F, params: &ParamStore, epsilon: f32) -> Result<f32>
where
    F: Fn(&mut Graph<'_>, &BoundParams) -> Result<Var>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let analytic = {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let loss = f(&mut g, &bound)?;
        check_finite(g.value(loss).item())?;
        g.backward(loss)?
    };

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let loss = f(&mut g, &bound)?;
        let v = g.value(loss).item();
        check_finite(v)?;
        Ok(f64::from(v))
    };

    let mut work = params.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let grad = analytic.get(name);
        let n = params.get(name)?.len();
        for i in 0..n {
            let orig = params.get(name)?.data()[i];
            let mut central = |step: f32| -> Result<f64> {
                let (hi, lo) = (orig + step, orig - step);
                set(&mut work, name, i, hi);
                let f_hi = eval(&work)?;
                set(&mut work, name, i, lo);
                let f_lo = eval(&work)?;
                set(&mut work, name, i, orig);
                Ok((f_hi - f_lo) / f64::from(hi - lo))
            };
            let numeric = (4.0 * central(epsilon)? - central(2.0 * epsilon)?) / 3.0;
            let a = grad.map_or(0.0, |g| f64::from(g.data()[i]));
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > worst {
                log::debug!("grad_check {name}[{i}]: analytic {a} numeric {numeric}");
                worst = rel;
            }
        }
    }
    Ok(worst as f32)
}

fn set(p: &mut ParamStore, name: &str, i: usize, v: f32) {
    if let Some(t) = p.get_mut(name) {
        t.data_mut()[i] = v;
    }
}

fn check_finite(v: f32) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("objective evaluated to {v}")))
    }
}
