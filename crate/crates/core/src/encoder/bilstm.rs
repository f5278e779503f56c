use super::{Dropout, EncoderConfig, EncoderKind, ParamInit};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

// Gate blocks inside the 4d-wide pre-activation, in this order.
// input, forget, candidate, output

pub(super) fn layer_param_shapes(
    layer: usize,
    d: usize,
) -> Vec<(String, (usize, usize), ParamInit)> {
    let mut out = Vec::new();
    for dir in ["fwd", "bwd"] {
        out.push((
            format!("lstm{layer}.{dir}.wx"),
            (d, 4 * d),
            ParamInit::Uniform,
        ));
        out.push((
            format!("lstm{layer}.{dir}.wh"),
            (d, 4 * d),
            ParamInit::Uniform,
        ));
        out.push((
            format!("lstm{layer}.{dir}.b"),
            (1, 4 * d),
            ParamInit::Uniform,
        ));
    }
    out.push((
        format!("lstm{layer}.proj.w"),
        (2 * d, d),
        ParamInit::Uniform,
    ));
    out.push((format!("lstm{layer}.proj.b"), (1, d), ParamInit::Uniform));
    out
}

/// Runs one direction, returning the hidden-state row node for every position.
fn run_direction(g: &mut Graph<'_>, x: NodeId, prefix: &str, reverse: bool) -> Result<Vec<NodeId>> {
    let (len, d) = g.shape(x)?;
    let wx = g.param(&format!("{prefix}.wx"))?;
    let wh = g.param(&format!("{prefix}.wh"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    let projected = g.matmul(x, wx)?;

    let mut h = g.constant(Tensor::zeros((1, d)));
    let mut c = g.constant(Tensor::zeros((1, d)));
    let mut states = vec![0; len];
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in order {
        let xt = g.slice_rows(projected, t, t + 1)?;
        let recur = g.affine(h, wh, b)?;
        let pre = g.add(xt, recur)?;
        let i = g.slice_cols(pre, 0, d)?;
        let i = g.sigmoid(i)?;
        let f = g.slice_cols(pre, d, 2 * d)?;
        let f = g.sigmoid(f)?;
        let cand = g.slice_cols(pre, 2 * d, 3 * d)?;
        let cand = g.tanh(cand)?;
        let o = g.slice_cols(pre, 3 * d, 4 * d)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let squashed = g.tanh(c)?;
        h = g.mul(o, squashed)?;
        states[t] = h;
    }
    Ok(states)
}

/// Stacked bidirectional LSTM. Each layer concatenates the forward and
/// backward states per token and projects them back to width `d`.
pub fn encode_bilstm(
    g: &mut Graph<'_>,
    h0: NodeId,
    config: &EncoderConfig,
    mut dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    if config.kind != EncoderKind::Bilstm {
        return Err(Error::Config("encoder kind is not bilstm".into()));
    }
    let (_, d) = g.shape(h0)?;
    if d != config.hidden {
        return Err(Error::Shape(format!(
            "h0 has width {d}, encoder expects {}",
            config.hidden
        )));
    }
    let mut x = h0;
    for layer in 0..config.layers {
        let fwd = run_direction(g, x, &format!("lstm{layer}.fwd"), false)?;
        let bwd = run_direction(g, x, &format!("lstm{layer}.bwd"), true)?;
        let fwd = g.concat_rows(&fwd)?;
        let bwd = g.concat_rows(&bwd)?;
        let both = g.concat_cols(&[fwd, bwd])?;
        let w = g.param(&format!("lstm{layer}.proj.w"))?;
        let b = g.param(&format!("lstm{layer}.proj.b"))?;
        x = g.affine(both, w, b)?;
        if let Some(d) = dropout.as_deref_mut() {
            x = d.apply(g, x)?;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;
    use crate::autodiff::{Bindings, ParamStore};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, layers: usize) -> EncoderConfig {
        EncoderConfig {
            kind: EncoderKind::Bilstm,
            hidden: d,
            layers,
            heads: 1,
            ffn_hidden: 0,
            max_len: 10,
            vocab_size: 4,
            dropout: 0.0,
        }
    }

    fn run(cfg: &EncoderConfig, p: &ParamStore, h0: &Tensor) -> Tensor {
        let mut g = Graph::new(p);
        let x = g.input("h0", h0.nrows(), h0.ncols());
        let out = encode_bilstm(&mut g, x, cfg, None).unwrap();
        let mut b = Bindings::new();
        b.insert("h0".into(), h0.clone());
        g.evaluate_node(&b, out).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let c = cfg(3, 1);
        let mut p = ParamStore::new();
        for (name, shape, _) in c.param_shapes() {
            p.insert(name, Tensor::zeros(shape));
        }
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::from_elem((4, 3), 0.7));
        let fwd = run_direction(&mut g, x, "lstm0.fwd", false).unwrap();
        let values = g.evaluate(&Bindings::new()).unwrap();
        for h in fwd {
            assert!(values[h].iter().all(|&v| v == 0.0));
        }
        let out = run(&c, &p, &Tensor::from_elem((4, 3), 0.7));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape() {
        let c = cfg(4, 2);
        let mut p = ParamStore::new();
        init_params(&c.param_shapes(), &mut ChaCha8Rng::seed_from_u64(1), &mut p);
        for l in 1..5 {
            let h0 = Tensor::from_elem((l, 4), 0.1);
            assert_eq!(run(&c, &p, &h0).dim(), (l, 4));
        }
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Plain-loop LSTM for one direction, scalar by scalar.
    fn oracle_direction(
        x: &Tensor,
        wx: &Tensor,
        wh: &Tensor,
        b: &Tensor,
        reverse: bool,
    ) -> Vec<Vec<f64>> {
        let (len, d) = x.dim();
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut out = vec![vec![0.0; d]; len];
        let order: Vec<usize> = if reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        };
        for t in order {
            let mut pre = vec![0.0; 4 * d];
            for (j, p) in pre.iter_mut().enumerate() {
                let mut s = b[[0, j]];
                for k in 0..d {
                    s += x[[t, k]] * wx[[k, j]] + h[k] * wh[[k, j]];
                }
                *p = s;
            }
            for k in 0..d {
                let i = sig(pre[k]);
                let f = sig(pre[d + k]);
                let gg = pre[2 * d + k].tanh();
                let o = sig(pre[3 * d + k]);
                c[k] = f * c[k] + i * gg;
                h[k] = o * c[k].tanh();
            }
            out[t] = h.clone();
        }
        out
    }

    #[test]
    fn matches_hand_recurrence() {
        let c = cfg(2, 1);
        let mut p = ParamStore::new();
        init_params(
            &c.param_shapes(),
            &mut ChaCha8Rng::seed_from_u64(42),
            &mut p,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let fwd = oracle_direction(
            &x,
            p.get("lstm0.fwd.wx").unwrap(),
            p.get("lstm0.fwd.wh").unwrap(),
            p.get("lstm0.fwd.b").unwrap(),
            false,
        );
        let bwd = oracle_direction(
            &x,
            p.get("lstm0.bwd.wx").unwrap(),
            p.get("lstm0.bwd.wh").unwrap(),
            p.get("lstm0.bwd.b").unwrap(),
            true,
        );
        let pw = p.get("lstm0.proj.w").unwrap();
        let pb = p.get("lstm0.proj.b").unwrap();
        let out = run(&c, &p, &x);
        for t in 0..3 {
            let cat: Vec<f64> = fwd[t].iter().chain(bwd[t].iter()).copied().collect();
            for j in 0..2 {
                let mut s = pb[[0, j]];
                for (k, v) in cat.iter().enumerate() {
                    s += v * pw[[k, j]];
                }
                assert!((out[[t, j]] - s).abs() < 1e-12, "t={t} j={j}");
            }
        }
    }
}
