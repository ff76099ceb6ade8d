use super::forward::{forward_cached, loss_from_logits, smoothed_targets, ForwardCache, LayerCache};
use super::ops::{dot, gelu_grad, layer_norm_backward, linear_backward};
use super::{LayerParams, VitConfig, VitModel};
use crate::{Error, Real, Result};

/// Gradients of the mean batch loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct BatchGrad<T> {
    pub grads: VitModel<T>,
    /// Mean label-smoothed cross-entropy over the batch.
    pub loss: T,
    /// Number of samples whose prediction matched the label.
    pub correct: usize,
}

/// Reverse-mode pass over a batch of `(image, label)` pairs.
pub fn backward<T: Real>(model: &VitModel<T>, batch: &[(&[T], usize)], alpha: f64) -> Result<BatchGrad<T>> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let cfg = &model.config;
    let inv_b = T::one() / T::from_usize_lossy(batch.len());
    let mut grads = model.zeros_like();
    let mut loss = T::zero();
    let mut correct = 0;
    for &(img, label) in batch {
        let cache = forward_cached(img, model)?;
        let pred = &cache.prediction;
        loss += loss_from_logits(&pred.logits, label, alpha)?;
        if pred.predicted == label {
            correct += 1;
        }
        let targets = smoothed_targets::<T>(cfg.num_classes, label, alpha);
        let dlogits: Vec<T> = pred
            .probs
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| (p - t) * inv_b)
            .collect();
        sample_backward(model, &cache, &dlogits, &mut grads);
    }
    if !grads.is_finite() {
        return Err(Error::numeric("backward", "non-finite gradient"));
    }
    Ok(BatchGrad {
        grads,
        loss: loss * inv_b,
        correct,
    })
}

fn sample_backward<T: Real>(model: &VitModel<T>, cache: &ForwardCache<T>, dlogits: &[T], g: &mut VitModel<T>) {
    let cfg = &model.config;
    let d = cfg.embed_dim;
    let n = cfg.num_tokens();

    let dcls = linear_backward(
        &cache.final_tokens[..d],
        d,
        &model.head_w.data,
        dlogits,
        cfg.num_classes,
        &mut g.head_w.data,
        &mut g.head_b.data,
    );
    let mut dz = vec![T::zero(); n * d];
    dz[..d].copy_from_slice(&dcls);

    for (i, layer) in model.layers.iter().enumerate().rev() {
        dz = layer_backward(&dz, layer, &cache.layers[i], cfg, &mut g.layers[i]);
    }

    for (a, &b) in g.class_token.data.iter_mut().zip(&dz[..d]) {
        *a += b;
    }
    for (a, &b) in g.pos_embed.data.iter_mut().zip(&dz) {
        *a += b;
    }
    linear_backward(
        &cache.patches,
        cfg.patch_dim(),
        &model.patch_w.data,
        &dz[d..],
        d,
        &mut g.patch_w.data,
        &mut g.patch_b.data,
    );
}

fn layer_backward<T: Real>(
    dout: &[T],
    p: &LayerParams<T>,
    c: &LayerCache<T>,
    cfg: &VitConfig,
    g: &mut LayerParams<T>,
) -> Vec<T> {
    let d = cfg.embed_dim;
    let m = cfg.mlp_dim;
    let n = dout.len() / d;
    let heads = cfg.num_heads;
    let dk = cfg.head_dim();
    let w3 = 3 * d;

    // Feed-forward branch.
    let mut dg = linear_backward(&c.g, m, &p.fc2_w.data, dout, d, &mut g.fc2_w.data, &mut g.fc2_b.data);
    for (v, &h) in dg.iter_mut().zip(&c.h1) {
        *v *= gelu_grad(h);
    }
    let dy2 = linear_backward(&c.y2, d, &p.fc1_w.data, &dg, m, &mut g.fc1_w.data, &mut g.fc1_b.data);
    let dln2 = layer_norm_backward(&c.ln2, d, &p.ln2_gain.data, &dy2, &mut g.ln2_gain.data, &mut g.ln2_bias.data);
    let dmid: Vec<T> = dout.iter().zip(&dln2).map(|(&a, &b)| a + b).collect();

    // Attention branch.
    let dconcat = linear_backward(&c.concat, d, &p.proj_w.data, &dmid, d, &mut g.proj_w.data, &mut g.proj_b.data);
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut dqkv = vec![T::zero(); n * w3];
    let mut ds = vec![T::zero(); n];
    for h in 0..heads {
        let a = &c.attn[h * n * n..(h + 1) * n * n];
        let (qo, ko, vo) = (h * dk, d + h * dk, 2 * d + h * dk);
        for i in 0..n {
            let dout_i = &dconcat[i * d + h * dk..i * d + (h + 1) * dk];
            let arow = &a[i * n..(i + 1) * n];
            let mut weighted = T::zero();
            for j in 0..n {
                let vj = &c.qkv[j * w3 + vo..j * w3 + vo + dk];
                let da = dot(dout_i, vj);
                ds[j] = da;
                weighted += da * arow[j];
                let dvj = &mut dqkv[j * w3 + vo..j * w3 + vo + dk];
                for (dv, &o) in dvj.iter_mut().zip(dout_i) {
                    *dv += arow[j] * o;
                }
            }
            for j in 0..n {
                let s = arow[j] * (ds[j] - weighted) * scale;
                if s == T::zero() {
                    continue;
                }
                for t in 0..dk {
                    let kj = c.qkv[j * w3 + ko + t];
                    let qi = c.qkv[i * w3 + qo + t];
                    dqkv[i * w3 + qo + t] += s * kj;
                    dqkv[j * w3 + ko + t] += s * qi;
                }
            }
        }
    }
    let dy1 = linear_backward(&c.y1, d, &p.qkv_w.data, &dqkv, w3, &mut g.qkv_w.data, &mut g.qkv_b.data);
    let dln1 = layer_norm_backward(&c.ln1, d, &p.ln1_gain.data, &dy1, &mut g.ln1_gain.data, &mut g.ln1_bias.data);
    dmid.iter().zip(&dln1).map(|(&a, &b)| a + b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::seq::SliceRandom;
    use rand::Rng;

    const STEP: f64 = 1e-5;
    // Below this magnitude the comparison is effectively absolute (1e-10), which
    // absorbs loss rounding in structurally zero gradients such as key biases.
    const FLOOR: f64 = 1e-5;
    const TOL: f64 = 1e-5;

    fn batch_loss(m: &VitModel<f64>, batch: &[(&[f64], usize)], alpha: f64) -> f64 {
        let mut s = 0.0;
        for &(img, y) in batch {
            let logits = super::super::forward_logits(img, m).unwrap();
            s += loss_from_logits(&logits, y, alpha).unwrap();
        }
        s / batch.len() as f64
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let model = VitModel::<f64>::init_with_std(cfg, 21, 0.3).unwrap();
        let mut r = seed::rng(22);
        let imgs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..cfg.input_len()).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = vec![(&imgs[0], 1), (&imgs[1], 3)];
        let g = backward(&model, &batch, 0.1).unwrap();
        assert!((g.loss - batch_loss(&model, &batch, 0.1)).abs() < 1e-12);

        let mut worst = 0.0f64;
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = model.tensors()[ti].1.len();
            let mut idx: Vec<usize> = (0..len).collect();
            idx.shuffle(&mut r);
            idx.truncate(200);
            for &k in &idx {
                let mut plus = model.clone();
                plus.tensors_mut()[ti].1.data[k] += STEP;
                let mut minus = model.clone();
                minus.tensors_mut()[ti].1.data[k] -= STEP;
                let numeric = (batch_loss(&plus, &batch, 0.1) - batch_loss(&minus, &batch, 0.1)) / (2.0 * STEP);
                let analytic = g.grads.tensors()[ti].1.data[k];
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FLOOR);
                worst = worst.max(rel);
                assert!(rel <= TOL, "{name}[{k}]: analytic {analytic} numeric {numeric} rel {rel}");
            }
        }
        assert!(worst <= TOL);
    }

    #[test]
    fn head_bias_gradient_is_mean_residual() {
        let cfg = VitConfig::tiny(32, 8, 2, 2, 5);
        let model = VitModel::<f64>::init(cfg, 3).unwrap();
        let mut r = seed::rng(4);
        let imgs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..cfg.input_len()).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let labels = [0, 4, 2];
        let batch: Vec<(&[f64], usize)> = imgs.iter().map(|v| v.as_slice()).zip(labels).collect();
        let g = backward(&model, &batch, 0.1).unwrap();
        let mut expect = vec![0.0; 5];
        for &(img, y) in &batch {
            let p = super::super::forward(img, &model).unwrap();
            let t = smoothed_targets::<f64>(5, y, 0.1);
            for c in 0..5 {
                expect[c] += (p.probs[c] - t[c]) / 3.0;
            }
        }
        for (a, b) in g.grads.head_b.data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(g.grads.head_b.data.iter().sum::<f64>().abs() < 1e-14);
        assert!(backward(&model, &[], 0.1).is_err());
    }

    #[test]
    fn saturated_correct_logit_has_vanishing_gradient() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let mut model = VitModel::<f64>::init(cfg, 6).unwrap();
        model.head_w.data.iter_mut().for_each(|v| *v = 0.0);
        model.head_b.data = vec![0.0, 0.0, 60.0, 0.0];
        let img = vec![0.25; cfg.input_len()];
        let g = backward(&model, &[(&img, 2)], 0.0).unwrap();
        assert!(g.loss < 1e-20);
        assert!(g.grads.global_norm() < 1e-6);
        assert_eq!(g.correct, 1);
    }
}
