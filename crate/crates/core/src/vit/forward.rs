use super::ops::{dot, gelu, layer_norm_cached, linear, softmax_in_place, LnCache};
use super::{LayerParams, VitConfig, VitModel, CHANNELS};
use crate::matrix::Matrix;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    /// Argmax of `probs`; the lowest index wins ties.
    pub predicted: usize,
}

pub(crate) struct LayerCache<T> {
    pub ln1: LnCache<T>,
    pub y1: Vec<T>,
    pub qkv: Vec<T>,
    /// `heads × n × n` attention weights.
    pub attn: Vec<T>,
    pub concat: Vec<T>,
    pub ln2: LnCache<T>,
    pub y2: Vec<T>,
    pub h1: Vec<T>,
    pub g: Vec<T>,
}

pub(crate) struct ForwardCache<T> {
    pub patches: Vec<T>,
    pub layers: Vec<LayerCache<T>>,
    pub final_tokens: Vec<T>,
    pub prediction: Prediction<T>,
}

/// Non-overlapping `P×P` patches in raster order, each flattened as
/// (row, col, channel). Returns `N × P²·3`.
pub(crate) fn extract_patches<T: Real>(img: &[T], cfg: &VitConfig) -> Result<Vec<T>> {
    if img.len() != cfg.input_len() {
        return Err(Error::validation(format!(
            "image has {} values, model expects {}x{}x{}",
            img.len(),
            cfg.image_size,
            cfg.image_size,
            CHANNELS
        )));
    }
    let (s, p) = (cfg.image_size, cfg.patch_size);
    let grid = s / p;
    let mut out = Vec::with_capacity(img.len());
    for gy in 0..grid {
        for gx in 0..grid {
            for y in 0..p {
                let start = ((gy * p + y) * s + gx * p) * CHANNELS;
                out.extend_from_slice(&img[start..start + p * CHANNELS]);
            }
        }
    }
    Ok(out)
}

fn embed_from_patches<T: Real>(patches: &[T], model: &VitModel<T>) -> Vec<T> {
    let cfg = &model.config;
    let d = cfg.embed_dim;
    let projected = linear(patches, cfg.patch_dim(), &model.patch_w.data, &model.patch_b.data, d);
    let mut z = Vec::with_capacity(cfg.num_tokens() * d);
    z.extend_from_slice(&model.class_token.data);
    z.extend_from_slice(&projected);
    for (v, &p) in z.iter_mut().zip(&model.pos_embed.data) {
        *v += p;
    }
    z
}

/// Token matrix `(N+1) × d`: class token first, then projected patches,
/// with positional embeddings added to every row.
pub fn embed_patches<T: Real>(img: &[T], model: &VitModel<T>) -> Result<Matrix<T>> {
    let patches = extract_patches(img, &model.config)?;
    let z = embed_from_patches(&patches, model);
    Matrix::from_vec(model.config.num_tokens(), model.config.embed_dim, z)
}

fn scaled_scores<T: Real>(q: &[T], k: &[T], n: usize, stride: usize, offset_q: usize, offset_k: usize, dk: usize) -> Vec<T> {
    let scale = T::one() / T::from_usize_lossy(dk).sqrt();
    let mut s = vec![T::zero(); n * n];
    for i in 0..n {
        let qi = &q[i * stride + offset_q..i * stride + offset_q + dk];
        for j in 0..n {
            let kj = &k[j * stride + offset_k..j * stride + offset_k + dk];
            s[i * n + j] = dot(qi, kj) * scale;
        }
        softmax_in_place(&mut s[i * n..(i + 1) * n]);
    }
    s
}

/// Row-wise `softmax(QKᵀ/√d_k)`.
pub fn attention_weights<T: Real>(q: &Matrix<T>, k: &Matrix<T>) -> Result<Matrix<T>> {
    if q.cols != k.cols || q.rows != k.rows || q.cols == 0 {
        return Err(Error::validation("attention: Q and K shapes differ"));
    }
    let n = q.rows;
    Matrix::from_vec(n, n, scaled_scores(&q.data, &k.data, n, q.cols, 0, 0, q.cols))
}

/// `softmax(QKᵀ/√d_k) V`.
pub fn attention<T: Real>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
    if v.rows != q.rows {
        return Err(Error::validation("attention: V row count differs"));
    }
    let a = attention_weights(q, k)?;
    let mut out = Matrix::filled(q.rows, v.cols, T::zero());
    for i in 0..a.rows {
        for j in 0..a.cols {
            let w = a.get(i, j);
            for c in 0..v.cols {
                out.data[i * v.cols + c] += w * v.get(j, c);
            }
        }
    }
    Ok(out)
}

pub(crate) fn layer_forward<T: Real>(z: &[T], layer: &LayerParams<T>, cfg: &VitConfig) -> (Vec<T>, LayerCache<T>) {
    let d = cfg.embed_dim;
    let n = z.len() / d;
    let heads = cfg.num_heads;
    let dk = cfg.head_dim();
    let eps = T::lit(cfg.ln_eps);

    let (y1, ln1) = layer_norm_cached(z, d, &layer.ln1_gain.data, &layer.ln1_bias.data, eps);
    let qkv = linear(&y1, d, &layer.qkv_w.data, &layer.qkv_b.data, 3 * d);

    let mut attn = Vec::with_capacity(heads * n * n);
    let mut concat = vec![T::zero(); n * d];
    for h in 0..heads {
        let a = scaled_scores(&qkv, &qkv, n, 3 * d, h * dk, d + h * dk, dk);
        for i in 0..n {
            let out = &mut concat[i * d + h * dk..i * d + (h + 1) * dk];
            for j in 0..n {
                let w = a[i * n + j];
                let vj = &qkv[j * 3 * d + 2 * d + h * dk..j * 3 * d + 2 * d + (h + 1) * dk];
                for (o, &v) in out.iter_mut().zip(vj) {
                    *o += w * v;
                }
            }
        }
        attn.extend(a);
    }
    let proj = linear(&concat, d, &layer.proj_w.data, &layer.proj_b.data, d);
    let mid: Vec<T> = z.iter().zip(&proj).map(|(&a, &b)| a + b).collect();

    let (y2, ln2) = layer_norm_cached(&mid, d, &layer.ln2_gain.data, &layer.ln2_bias.data, eps);
    let m = cfg.mlp_dim;
    let h1 = linear(&y2, d, &layer.fc1_w.data, &layer.fc1_b.data, m);
    let g: Vec<T> = h1.iter().map(|&x| gelu(x)).collect();
    let f = linear(&g, m, &layer.fc2_w.data, &layer.fc2_b.data, d);
    let out: Vec<T> = mid.iter().zip(&f).map(|(&a, &b)| a + b).collect();

    let cache = LayerCache {
        ln1,
        y1,
        qkv,
        attn,
        concat,
        ln2,
        y2,
        h1,
        g,
    };
    (out, cache)
}

/// One pre-norm encoder block applied to a token matrix.
pub fn encoder_layer<T: Real>(tokens: &Matrix<T>, layer: &LayerParams<T>, cfg: &VitConfig) -> Result<Matrix<T>> {
    if tokens.cols != cfg.embed_dim {
        return Err(Error::validation(format!(
            "tokens have width {}, layer expects {}",
            tokens.cols, cfg.embed_dim
        )));
    }
    let (out, _) = layer_forward(&tokens.data, layer, cfg);
    Matrix::from_vec(tokens.rows, tokens.cols, out)
}

fn check_finite<T: Real>(v: &[T], site: impl FnOnce() -> String) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(site(), "non-finite activation"))
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn forward_cached<T: Real>(img: &[T], model: &VitModel<T>) -> Result<ForwardCache<T>> {
    let cfg = &model.config;
    let d = cfg.embed_dim;
    let patches = extract_patches(img, cfg)?;
    let mut z = embed_from_patches(&patches, model);
    check_finite(&z, || "patch embedding".into())?;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (i, layer) in model.layers.iter().enumerate() {
        let (out, cache) = layer_forward(&z, layer, cfg);
        check_finite(&out, || format!("encoder layer {i}"))?;
        layers.push(cache);
        z = out;
    }
    let logits = linear(&z[..d], d, &model.head_w.data, &model.head_b.data, cfg.num_classes);
    check_finite(&logits, || "classification head".into())?;
    let mut probs = logits.clone();
    softmax_in_place(&mut probs);
    let predicted = argmax(&probs);
    Ok(ForwardCache {
        patches,
        layers,
        final_tokens: z,
        prediction: Prediction {
            logits,
            probs,
            predicted,
        },
    })
}

/// Class probabilities and the predicted class for one standardized
/// `H×W×3` image.
pub fn forward<T: Real>(img: &[T], model: &VitModel<T>) -> Result<Prediction<T>> {
    forward_cached(img, model).map(|c| c.prediction)
}

pub fn forward_logits<T: Real>(img: &[T], model: &VitModel<T>) -> Result<Vec<T>> {
    forward(img, model).map(|p| p.logits)
}

/// `(1−α)·onehot(label) + α/|D|`.
pub fn smoothed_targets<T: Real>(num_classes: usize, label: usize, alpha: f64) -> Vec<T> {
    let off = T::lit(alpha / num_classes as f64);
    let mut t = vec![off; num_classes];
    t[label] += T::lit(1.0 - alpha);
    t
}

fn check_loss_args(n: usize, label: usize, alpha: f64) -> Result<()> {
    if label >= n {
        return Err(Error::validation(format!("label {label} out of range for {n} classes")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::validation(format!("label smoothing {alpha} outside [0, 1)")));
    }
    Ok(())
}

/// Label-smoothed cross-entropy computed from logits via log-sum-exp.
pub fn loss_from_logits<T: Real>(logits: &[T], label: usize, alpha: f64) -> Result<T> {
    check_loss_args(logits.len(), label, alpha)?;
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln();
    let targets = smoothed_targets::<T>(logits.len(), label, alpha);
    Ok(targets
        .iter()
        .zip(logits)
        .map(|(&t, &l)| t * (lse - l))
        .sum())
}

/// Label-smoothed cross-entropy from probabilities. Zero probabilities are
/// floored at the smallest positive normal so the loss stays finite.
pub fn loss_smoothed_ce<T: Real>(probs: &[T], label: usize, alpha: f64) -> Result<T> {
    check_loss_args(probs.len(), label, alpha)?;
    let floor = T::min_positive_value();
    let targets = smoothed_targets::<T>(probs.len(), label, alpha);
    Ok(-targets
        .iter()
        .zip(probs)
        .map(|(&t, &p)| t * p.max(floor).ln())
        .sum::<T>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random_image(cfg: &VitConfig, s: u64) -> Vec<f64> {
        let mut r = seed::rng(s);
        (0..cfg.input_len()).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn patch_order_is_raster_then_row_col_channel() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let img: Vec<f64> = (0..cfg.input_len()).map(|i| i as f64).collect();
        let p = extract_patches(&img, &cfg).unwrap();
        assert_eq!(p.len(), cfg.input_len());
        // Second patch (top-right) starts at pixel (0, 16).
        assert_eq!(p[768], (16 * 3) as f64);
        // Third patch (bottom-left), its second row starts at pixel (17, 0).
        assert_eq!(p[2 * 768 + 48], (17 * 32 * 3) as f64);
        assert!(extract_patches(&img[1..], &cfg).is_err());
    }

    #[test]
    fn single_token_attention_returns_value() {
        let q = Matrix::from_vec(1, 2, vec![0.3, -2.0]).unwrap();
        let k = Matrix::from_vec(1, 2, vec![5.0, 1.0]).unwrap();
        let v = Matrix::from_vec(1, 3, vec![1.5, -0.5, 2.0]).unwrap();
        assert_eq!(attention(&q, &k, &v).unwrap().data, v.data);
    }

    #[test]
    fn attention_rows_are_distributions_and_shift_invariant() {
        let mut r = seed::rng(4);
        let n = 5;
        let dk = 4;
        let q = Matrix::from_vec(n, dk, (0..n * dk).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
        let k = Matrix::from_vec(n, dk, (0..n * dk).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
        let a = attention_weights(&q, &k).unwrap();
        for i in 0..n {
            let row = a.row(i);
            assert!(row.iter().all(|&w| w > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Adding a constant vector c to every key adds q·c to a whole row of
        // scores, which softmax ignores.
        let c = [0.7, -1.1, 0.2, 3.0];
        let shifted = k.clone();
        let shifted = Matrix::from_vec(
            n,
            dk,
            shifted.data.iter().enumerate().map(|(i, &x)| x + c[i % dk]).collect(),
        )
        .unwrap();
        let b = attention_weights(&q, &shifted).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_weights_give_identity_layer() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let mut m = VitModel::<f64>::init_with_std(cfg, 3, 0.3).unwrap();
        let l = &mut m.layers[0];
        l.proj_w.data.iter_mut().for_each(|v| *v = 0.0);
        l.fc2_w.data.iter_mut().for_each(|v| *v = 0.0);
        let z = embed_patches(&random_image(&cfg, 1), &m).unwrap();
        assert_eq!(encoder_layer(&z, &m.layers[0], &cfg).unwrap(), z);
    }

    #[test]
    fn layer_is_permutation_equivariant() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let m = VitModel::<f64>::init_with_std(cfg, 5, 0.3).unwrap();
        let z = embed_patches(&random_image(&cfg, 2), &m).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let zp = Matrix::from_vec(5, 8, perm.iter().flat_map(|&i| z.row(i).to_vec()).collect()).unwrap();
        let out = encoder_layer(&z, &m.layers[0], &cfg).unwrap();
        let outp = encoder_layer(&zp, &m.layers[0], &cfg).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            for (a, b) in outp.row(r).iter().zip(out.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_head_predicts_uniformly() {
        let cfg = VitConfig::tiny(32, 8, 2, 2, 14);
        let mut m = VitModel::<f64>::init(cfg, 8).unwrap();
        m.head_w.data.iter_mut().for_each(|v| *v = 0.0);
        let p = forward(&random_image(&cfg, 3), &m).unwrap();
        assert!(p.probs.iter().all(|&x| (x - 1.0 / 14.0).abs() < 1e-15));
        assert_eq!(p.predicted, 0);
        let loss = loss_smoothed_ce(&p.probs, 5, 0.1).unwrap();
        assert!((loss - 14f64.ln()).abs() < 1e-12);
        assert!((loss - 2.6391).abs() < 1e-4);
        assert!((loss_from_logits(&p.logits, 5, 0.1).unwrap() - loss).abs() < 1e-12);
    }

    #[test]
    fn smoothing_targets() {
        let t = smoothed_targets::<f64>(14, 2, 0.1);
        assert!((t[2] - 0.907142857).abs() < 1e-8);
        assert!((t[0] - 0.1 / 14.0).abs() < 1e-15);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // A zero probability on the true class is floored, not infinite.
        let mut probs = vec![0.0f64; 4];
        probs[1] = 1.0;
        assert!(loss_smoothed_ce(&probs, 0, 0.1).unwrap().is_finite());
        assert!(loss_from_logits(&[0.0, 1.0], 2, 0.1).is_err());
        assert!(loss_from_logits(&[0.0, 1.0], 0, 1.0).is_err());
    }

    #[test]
    fn probabilities_are_valid_and_deterministic() {
        let cfg = VitConfig::tiny(64, 32, 2, 2, 4);
        let m = VitModel::<f64>::init(cfg, 11).unwrap();
        let img = random_image(&cfg, 4);
        let p = forward(&img, &m).unwrap();
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.probs.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(p, forward(&img, &m).unwrap());
        let m32 = VitModel::<f32>::init(cfg, 11).unwrap();
        let img32: Vec<f32> = img.iter().map(|&v| v as f32).collect();
        let p32 = forward(&img32, &m32).unwrap();
        for (a, b) in p.probs.iter().zip(&p32.probs) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn non_finite_input_reports_site() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let m = VitModel::<f64>::init(cfg, 1).unwrap();
        let mut img = random_image(&cfg, 5);
        img[7] = f64::NAN;
        let err = forward(&img, &m).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
    }

    #[test]
    fn tiny_forward_under_ten_ms() {
        let cfg = VitConfig::tiny(64, 32, 2, 2, 4);
        let m = VitModel::<f64>::init(cfg, 1).unwrap();
        let img = random_image(&cfg, 6);
        forward(&img, &m).unwrap();
        let runs = 20;
        let t = std::time::Instant::now();
        for _ in 0..runs {
            forward(&img, &m).unwrap();
        }
        let per = t.elapsed().as_secs_f64() / runs as f64;
        assert!(per < 0.010, "tiny forward took {:.2} ms", per * 1e3);
    }

    #[test]
    fn zero_image_embeds_to_class_token() {
        let cfg = VitConfig::tiny(32, 8, 1, 2, 4);
        let mut m = VitModel::<f64>::zeros(cfg).unwrap();
        m.class_token.data = (0..8).map(|i| i as f64).collect();
        let z = embed_patches(&vec![0.0; cfg.input_len()], &m).unwrap();
        assert_eq!((z.rows, z.cols), (5, 8));
        assert_eq!(z.row(0), m.class_token.data.as_slice());
        assert!(z.data[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permuting_patches_with_positions_keeps_prediction() {
        let cfg = VitConfig::tiny(32, 8, 2, 2, 4);
        let m = VitModel::<f64>::init_with_std(cfg, 7, 0.3).unwrap();
        let img = random_image(&cfg, 8);
        // Swap the top-left and bottom-right patches, and their positions.
        let mut swapped = img.clone();
        for y in 0..16 {
            for x in 0..16 * 3 {
                let a = y * 32 * 3 + x;
                let b = (y + 16) * 32 * 3 + 16 * 3 + x;
                swapped.swap(a, b);
            }
        }
        let mut mp = m.clone();
        for k in 0..8 {
            mp.pos_embed.data.swap(8 + k, 4 * 8 + k);
        }
        let a = forward(&img, &m).unwrap();
        let b = forward(&swapped, &mp).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_one_hot_has_zero_loss() {
        assert_eq!(loss_smoothed_ce(&[0.0, 1.0, 0.0], 1, 0.0).unwrap(), 0.0);
        let uniform = [0.25f64; 4];
        for alpha in [0.0, 0.1, 0.5] {
            assert!((loss_smoothed_ce(&uniform, 3, alpha).unwrap() - 4f64.ln()).abs() < 1e-12);
        }
    }
}
