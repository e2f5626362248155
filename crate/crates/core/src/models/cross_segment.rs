//! Cross-segment transformer: a pre-norm encoder over the word pieces
//! around one candidate break, classified from the leading CLS position.

use crate::corpus::{CLS, SEP};
use crate::error::{Error, Result};
use crate::numerics::{BoundParams, Graph, Init, Var};

use super::{uniform_fan_in, CrossSegmentConfig};

pub(super) fn param_specs(c: &CrossSegmentConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = c.model_dim;
    let emb = uniform_fan_in(d);
    let mut specs = vec![
        ("embedding".to_string(), vec![c.vocab_size, d], emb),
        ("position".to_string(), vec![c.max_seq, d], emb),
    ];
    let norm = |specs: &mut Vec<(String, Vec<usize>, Init)>, p: &str| {
        specs.push((format!("{p}.gain"), vec![1, d], Init::Ones));
        specs.push((format!("{p}.bias"), vec![1, d], Init::Zeros));
    };
    let affine = |specs: &mut Vec<(String, Vec<usize>, Init)>, p: &str, i: usize, o: usize| {
        specs.push((format!("{p}.w"), vec![i, o], uniform_fan_in(i)));
        specs.push((format!("{p}.b"), vec![1, o], Init::Zeros));
    };
    for l in 0..c.layers {
        let p = format!("layer{l}");
        norm(&mut specs, &format!("{p}.ln1"));
        for proj in ["q", "k", "v", "o"] {
            affine(&mut specs, &format!("{p}.attn.{proj}"), d, d);
        }
        norm(&mut specs, &format!("{p}.ln2"));
        affine(&mut specs, &format!("{p}.ff1"), d, c.ff_dim);
        affine(&mut specs, &format!("{p}.ff2"), c.ff_dim, d);
    }
    norm(&mut specs, "final_ln");
    affine(&mut specs, "head", d, 2);
    specs
}

/// `[CLS] left [SEP] right [SEP]` for the break after sentence `gap`: the
/// last `k` ids before the break and the first `k` after it, read across
/// sentence boundaries but never past either end of the document.
pub fn extract_context(doc: &[Vec<u32>], gap: usize, k: usize) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(Error::invalid("extract_context: k must be at least 1"));
    }
    if gap + 1 >= doc.len() {
        return Err(Error::invalid(format!(
            "extract_context: gap {gap} out of range for {} sentences",
            doc.len()
        )));
    }
    let mut left: Vec<u32> = doc[..=gap]
        .iter()
        .rev()
        .flat_map(|s| s.iter().rev())
        .take(k)
        .copied()
        .collect();
    left.reverse();
    let right = doc[gap + 1..].iter().flatten().take(k);
    let mut out = Vec::with_capacity(2 * k + 3);
    out.push(CLS);
    out.extend(left);
    out.push(SEP);
    out.extend(right);
    out.push(SEP);
    Ok(out)
}

fn affine(g: &mut Graph<'_>, bound: &BoundParams, p: &str, x: Var) -> Result<Var> {
    let w = bound.var(&format!("{p}.w"))?;
    let b = bound.var(&format!("{p}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn norm(g: &mut Graph<'_>, bound: &BoundParams, p: &str, x: Var) -> Result<Var> {
    let gain = bound.var(&format!("{p}.gain"))?;
    let bias = bound.var(&format!("{p}.bias"))?;
    g.layer_norm(x, gain, bias)
}

/// Class probabilities (`1 × 2`, column 1 = end of segment) for one input
/// sequence. `pad[i]` marks position `i` as padding, which no position
/// attends to.
pub fn cross_segment_forward(
    g: &mut Graph<'_>,
    bound: &BoundParams,
    c: &CrossSegmentConfig,
    ids: &[u32],
    pad: &[bool],
) -> Result<Var> {
    if ids.is_empty() || ids.len() > c.max_seq {
        return Err(Error::invalid(format!(
            "cross_segment_forward: sequence length {} outside 1..={}",
            ids.len(),
            c.max_seq
        )));
    }
    if pad.len() != ids.len() {
        return Err(Error::invalid(format!(
            "cross_segment_forward: mask length {} != sequence length {}",
            pad.len(),
            ids.len()
        )));
    }
    if pad[0] {
        return Err(Error::invalid("cross_segment_forward: the CLS position is masked"));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} outside vocabulary of {}",
            c.vocab_size
        )));
    }
    let valid: Vec<bool> = pad.iter().map(|&m| !m).collect();
    let positions: Vec<u32> = (0..ids.len() as u32).collect();
    let tok = bound.var("embedding")?;
    let pos = bound.var("position")?;
    let te = g.gather_rows(tok, ids)?;
    let pe = g.gather_rows(pos, &positions)?;
    let mut x = g.add(te, pe)?;
    for l in 0..c.layers {
        let p = format!("layer{l}");
        let h = norm(g, bound, &format!("{p}.ln1"), x)?;
        let q = affine(g, bound, &format!("{p}.attn.q"), h)?;
        let k = affine(g, bound, &format!("{p}.attn.k"), h)?;
        let v = affine(g, bound, &format!("{p}.attn.v"), h)?;
        let a = g.attention(q, k, v, c.heads, &valid)?;
        let mut a = affine(g, bound, &format!("{p}.attn.o"), a)?;
        if l + 1 == c.layers {
            // only the CLS row feeds the head
            x = g.slice(x, 0, 0, 1)?;
            a = g.slice(a, 0, 0, 1)?;
        }
        x = g.add(x, a)?;
        let h = norm(g, bound, &format!("{p}.ln2"), x)?;
        let f = affine(g, bound, &format!("{p}.ff1"), h)?;
        let f = g.gelu(f);
        let f = affine(g, bound, &format!("{p}.ff2"), f)?;
        x = g.add(x, f)?;
    }
    let cls = norm(g, bound, "final_ln", x)?;
    let logits = affine(g, bound, "head", cls)?;
    g.softmax(logits)
}
