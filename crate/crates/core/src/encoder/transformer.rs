use super::{Dropout, EncoderConfig, EncoderKind, ParamInit};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

pub(super) fn block_param_shapes(
    block: usize,
    d: usize,
    ffn: usize,
) -> Vec<(String, (usize, usize), ParamInit)> {
    let p = |s: &str| format!("block{block}.{s}");
    vec![
        (p("ln1.gain"), (1, d), ParamInit::Ones),
        (p("ln1.bias"), (1, d), ParamInit::Zeros),
        (p("attn.q.w"), (d, d), ParamInit::Uniform),
        (p("attn.q.b"), (1, d), ParamInit::Uniform),
        (p("attn.k.w"), (d, d), ParamInit::Uniform),
        (p("attn.k.b"), (1, d), ParamInit::Uniform),
        (p("attn.v.w"), (d, d), ParamInit::Uniform),
        (p("attn.v.b"), (1, d), ParamInit::Uniform),
        (p("attn.o.w"), (d, d), ParamInit::Uniform),
        (p("attn.o.b"), (1, d), ParamInit::Uniform),
        (p("ln2.gain"), (1, d), ParamInit::Ones),
        (p("ln2.bias"), (1, d), ParamInit::Zeros),
        (p("ffn.in.w"), (d, ffn), ParamInit::Uniform),
        (p("ffn.in.b"), (1, ffn), ParamInit::Uniform),
        (p("ffn.out.w"), (ffn, d), ParamInit::Uniform),
        (p("ffn.out.b"), (1, d), ParamInit::Uniform),
    ]
}

fn affine(g: &mut Graph<'_>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    Ok(g.affine(x, w, b)?)
}

fn layer_norm(g: &mut Graph<'_>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let gain = g.param(&format!("{prefix}.gain"))?;
    let bias = g.param(&format!("{prefix}.bias"))?;
    Ok(g.layer_norm(x, gain, bias)?)
}

fn self_attention(g: &mut Graph<'_>, x: NodeId, block: usize, heads: usize) -> Result<NodeId> {
    let d = g.shape(x)?.1;
    let dk = d / heads;
    let q = affine(g, x, &format!("block{block}.attn.q"))?;
    let k = affine(g, x, &format!("block{block}.attn.k"))?;
    let v = affine(g, x, &format!("block{block}.attn.v"))?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax_rows(scores)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let joined = if heads == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    affine(g, joined, &format!("block{block}.attn.o"))
}

/// One pre-norm block: `x + Attn(LN(x))`, then `h + FFN(LN(h))`.
fn block(
    g: &mut Graph<'_>,
    x: NodeId,
    index: usize,
    heads: usize,
    mut dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    let normed = layer_norm(g, x, &format!("block{index}.ln1"))?;
    let mut attn = self_attention(g, normed, index, heads)?;
    if let Some(d) = dropout.as_deref_mut() {
        attn = d.apply(g, attn)?;
    }
    let h = g.add(x, attn)?;

    let normed = layer_norm(g, h, &format!("block{index}.ln2"))?;
    let inner = affine(g, normed, &format!("block{index}.ffn.in"))?;
    let inner = g.gelu(inner)?;
    let mut ffn = affine(g, inner, &format!("block{index}.ffn.out"))?;
    if let Some(d) = dropout {
        ffn = d.apply(g, ffn)?;
    }
    Ok(g.add(h, ffn)?)
}

/// Applies `config.layers` transformer blocks to `h0`. Zero blocks is the identity.
pub fn encode_transformer(
    g: &mut Graph<'_>,
    h0: NodeId,
    config: &EncoderConfig,
    mut dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    if config.kind != EncoderKind::Transformer {
        return Err(Error::Config("encoder kind is not transformer".into()));
    }
    let (_, d) = g.shape(h0)?;
    if d != config.hidden {
        return Err(Error::Shape(format!(
            "h0 has width {d}, encoder expects {}",
            config.hidden
        )));
    }
    let mut h = h0;
    for b in 0..config.layers {
        h = block(g, h, b, config.heads, dropout.as_deref_mut())?;
    }
    Ok(h)
}
