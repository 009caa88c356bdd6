//! Reference math for fusing a common sense triple memory into text encodings.
//!
//! Triple element vectors are pooled with additive attention, the pooled vectors
//! plus a sentinel row form the memory `C`, and the text encodings `H` attend over it:
//!
//! ```text
//! I = H + softmax_rows(Q Kᵀ) V,   Q = H Wq,  K = C Wk,  V = C Wv
//! ```
//!
//! Every forward op has an analytic backward pass, checked against central
//! differences in [`gradcheck`].

pub mod extended;
pub mod gradcheck;
mod matrix;

pub use matrix::Matrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("bad matrix fixture: {0}")]
    Fixture(String),
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<(), FusionError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FusionError::NonFinite(what))
    }
}

/// Numerically stable softmax: the maximum is subtracted before exponentiation.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Additive attention parameters: `score_j = scorer · tanh(projectionᵀ e_j + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    /// `d_e × d_a`
    pub projection: Matrix,
    pub bias: Vec<f64>,
    pub scorer: Vec<f64>,
}

impl PoolParams {
    fn check(&self, element_dim: usize) -> Result<(), FusionError> {
        let (de, da) = self.projection.shape();
        if de != element_dim || self.bias.len() != da || self.scorer.len() != da {
            return Err(FusionError::Shape(format!(
                "pool params {}x{} / bias {} / scorer {} do not fit elements of width {element_dim}",
                de,
                da,
                self.bias.len(),
                self.scorer.len()
            )));
        }
        Ok(())
    }
}

/// Intermediate values of [`attention_pool`], kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolForward {
    /// `tanh(projectionᵀ e_j + bias)` per element, `m × d_a`.
    pub hidden: Matrix,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn attention_pool_forward(elements: &Matrix, params: &PoolParams) -> Result<PoolForward, FusionError> {
    params.check(elements.cols())?;
    let mut hidden = elements.matmul(&params.projection)?;
    for r in 0..hidden.rows() {
        for (h, b) in hidden.row_mut(r).iter_mut().zip(&params.bias) {
            *h = (*h + b).tanh();
        }
    }
    let scores: Vec<f64> = (0..hidden.rows())
        .map(|r| hidden.row(r).iter().zip(&params.scorer).map(|(h, v)| h * v).sum())
        .collect();
    check_finite("attention scores", &scores)?;
    let weights = softmax(&scores);
    let mut output = vec![0.0; elements.cols()];
    for (j, w) in weights.iter().enumerate() {
        for (o, e) in output.iter_mut().zip(elements.row(j)) {
            *o += w * e;
        }
    }
    check_finite("pooled output", &output)?;
    Ok(PoolForward {
        hidden,
        scores,
        weights,
        output,
    })
}

/// Pools `m ≥ 1` element vectors (rows) into one vector of the same width.
pub fn attention_pool(elements: &Matrix, params: &PoolParams) -> Result<Vec<f64>, FusionError> {
    attention_pool_forward(elements, params).map(|f| f.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolGrads {
    pub elements: Matrix,
    pub projection: Matrix,
    pub bias: Vec<f64>,
    pub scorer: Vec<f64>,
}

/// Gradients of `grad_output · attention_pool(elements)` with respect to every input.
pub fn attention_pool_backward(
    elements: &Matrix,
    params: &PoolParams,
    grad_output: &[f64],
) -> Result<PoolGrads, FusionError> {
    let fwd = attention_pool_forward(elements, params)?;
    let (m, de) = elements.shape();
    let da = params.bias.len();
    if grad_output.len() != de {
        return Err(FusionError::Shape("output gradient width".into()));
    }
    let alpha = &fwd.weights;

    // output = Σ_j α_j e_j
    let mut g_elements = Matrix::zeros(m, de);
    let d_alpha: Vec<f64> = (0..m)
        .map(|j| elements.row(j).iter().zip(grad_output).map(|(e, g)| e * g).sum())
        .collect();
    for j in 0..m {
        for (ge, g) in g_elements.row_mut(j).iter_mut().zip(grad_output) {
            *ge = alpha[j] * g;
        }
    }
    // softmax
    let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let d_scores: Vec<f64> = (0..m).map(|j| alpha[j] * (d_alpha[j] - weighted)).collect();

    let mut g_projection = Matrix::zeros(de, da);
    let mut g_bias = vec![0.0; da];
    let mut g_scorer = vec![0.0; da];
    for j in 0..m {
        let hidden = fwd.hidden.row(j);
        // score_j = scorer · hidden_j, hidden_j = tanh(u_j)
        let d_pre: Vec<f64> = (0..da)
            .map(|q| {
                g_scorer[q] += d_scores[j] * hidden[q];
                d_scores[j] * params.scorer[q] * (1.0 - hidden[q] * hidden[q])
            })
            .collect();
        for q in 0..da {
            g_bias[q] += d_pre[q];
        }
        let e = elements.row(j);
        for p in 0..de {
            let row = g_projection.row_mut(p);
            for q in 0..da {
                row[q] += e[p] * d_pre[q];
            }
        }
        let ge = g_elements.row_mut(j);
        for p in 0..de {
            ge[p] += (0..da).map(|q| params.projection.get(p, q) * d_pre[q]).sum::<f64>();
        }
    }
    Ok(PoolGrads {
        elements: g_elements,
        projection: g_projection,
        bias: g_bias,
        scorer: g_scorer,
    })
}

/// A zero sentinel row, the initial "no relevant knowledge" memory slot.
pub fn zero_sentinel(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}

/// Stacks the pooled triple vectors in order and appends the sentinel as the last row.
pub fn assemble_memory(pooled_triples: &[Vec<f64>], sentinel: &[f64]) -> Result<Matrix, FusionError> {
    if let Some(bad) = pooled_triples.iter().find(|v| v.len() != sentinel.len()) {
        return Err(FusionError::Shape(format!(
            "triple vector of width {} does not match sentinel width {}",
            bad.len(),
            sentinel.len()
        )));
    }
    let mut rows = pooled_triples.to_vec();
    rows.push(sentinel.to_vec());
    Matrix::from_rows(&rows)
}

/// Linear maps of the fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseParams {
    /// `d × d_k`
    pub wq: Matrix,
    /// `d_c × d_k`
    pub wk: Matrix,
    /// `d_c × d`
    pub wv: Matrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseOptions {
    /// Divide the logits by `sqrt(d_k)`. Off by default.
    pub scaled: bool,
}

impl FuseOptions {
    fn logit_scale(self, dk: usize) -> f64 {
        if self.scaled {
            1.0 / (dk as f64).sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseForward {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Row-stochastic `n × (m+1)` attention over memory rows.
    pub attention: Matrix,
    pub output: Matrix,
}

fn check_fuse_shapes(h: &Matrix, c: &Matrix, p: &FuseParams) -> Result<(), FusionError> {
    let (d, dc) = (h.cols(), c.cols());
    let ok = p.wq.rows() == d && p.wk.rows() == dc && p.wq.cols() == p.wk.cols() && p.wv.shape() == (dc, d);
    if ok {
        Ok(())
    } else {
        Err(FusionError::Shape(format!(
            "H {:?}, C {:?}, Wq {:?}, Wk {:?}, Wv {:?}",
            h.shape(),
            c.shape(),
            p.wq.shape(),
            p.wk.shape(),
            p.wv.shape()
        )))
    }
}

pub fn c2t_forward(h: &Matrix, c: &Matrix, params: &FuseParams, options: FuseOptions) -> Result<FuseForward, FusionError> {
    check_fuse_shapes(h, c, params)?;
    let q = h.matmul(&params.wq)?;
    let k = c.matmul(&params.wk)?;
    let v = c.matmul(&params.wv)?;
    let mut attention = q.matmul(&k.transpose())?;
    let scale = options.logit_scale(params.wq.cols());
    for r in 0..attention.rows() {
        let row = attention.row_mut(r);
        let logits: Vec<f64> = row.iter().map(|x| x * scale).collect();
        check_finite("attention logits", &logits)?;
        row.copy_from_slice(&softmax(&logits));
    }
    let output = h.add(&attention.matmul(&v)?)?;
    if !output.is_finite() {
        return Err(FusionError::NonFinite("fused output"));
    }
    Ok(FuseForward {
        q,
        k,
        v,
        attention,
        output,
    })
}

/// `I = H + softmax_rows(Q Kᵀ) V` for `H: n×d` and memory `C: (m+1)×d_c`.
pub fn c2t_fuse(h: &Matrix, c: &Matrix, params: &FuseParams, options: FuseOptions) -> Result<Matrix, FusionError> {
    c2t_forward(h, c, params, options).map(|f| f.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseGrads {
    pub h: Matrix,
    pub c: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// Gradients of `Σ grad_output ⊙ c2t_fuse(H, C)` with respect to every input.
pub fn c2t_backward(
    h: &Matrix,
    c: &Matrix,
    params: &FuseParams,
    options: FuseOptions,
    grad_output: &Matrix,
) -> Result<FuseGrads, FusionError> {
    let fwd = c2t_forward(h, c, params, options)?;
    if grad_output.shape() != h.shape() {
        return Err(FusionError::Shape("output gradient shape".into()));
    }
    let a = &fwd.attention;
    // I = H + A V
    let d_a = grad_output.matmul(&fwd.v.transpose())?;
    let d_v = a.transpose().matmul(grad_output)?;
    // row-wise softmax
    let mut d_s = Matrix::zeros(a.rows(), a.cols());
    let scale = options.logit_scale(params.wq.cols());
    for r in 0..a.rows() {
        let (ar, dar) = (a.row(r), d_a.row(r));
        let dot: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
        for (o, (x, y)) in d_s.row_mut(r).iter_mut().zip(ar.iter().zip(dar)) {
            *o = x * (y - dot) * scale;
        }
    }
    // S = Q Kᵀ
    let d_q = d_s.matmul(&fwd.k)?;
    let d_k = d_s.transpose().matmul(&fwd.q)?;

    let g_h = grad_output.add(&d_q.matmul(&params.wq.transpose())?)?;
    let g_c = d_k
        .matmul(&params.wk.transpose())?
        .add(&d_v.matmul(&params.wv.transpose())?)?;
    Ok(FuseGrads {
        h: g_h,
        c: g_c,
        wq: h.transpose().matmul(&d_q)?,
        wk: c.transpose().matmul(&d_k)?,
        wv: c.transpose().matmul(&d_v)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool_params(rng: &mut ChaCha8Rng, de: usize, da: usize) -> PoolParams {
        PoolParams {
            projection: Matrix::random(rng, de, da, 0.5),
            bias: Matrix::random(rng, 1, da, 0.5).data().to_vec(),
            scorer: Matrix::random(rng, 1, da, 1.0).data().to_vec(),
        }
    }

    #[test]
    fn single_element_pools_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Matrix::random(&mut rng, 1, 4, 1.0);
        let p = pool_params(&mut rng, 4, 3);
        assert_eq!(attention_pool(&e, &p).unwrap(), e.row(0));
    }

    #[test]
    fn zero_scorer_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Matrix::random(&mut rng, 3, 4, 1.0);
        let mut p = pool_params(&mut rng, 4, 5);
        p.scorer = vec![0.0; 5];
        let out = attention_pool(&e, &p).unwrap();
        for c in 0..4 {
            let mean = (0..3).map(|r| e.get(r, c)).sum::<f64>() / 3.0;
            assert!((out[c] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = Matrix::random(&mut rng, 3, 4, 1.0);
        let p = pool_params(&mut rng, 5, 3);
        assert!(matches!(attention_pool(&e, &p), Err(FusionError::Shape(_))));
    }

    #[test]
    fn memory_layout() {
        let sentinel = zero_sentinel(3);
        let only = assemble_memory(&[], &sentinel).unwrap();
        assert_eq!(only.shape(), (1, 3));
        assert_eq!(only.row(0), sentinel.as_slice());

        let t = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let c = assemble_memory(&t, &[9.0, 9.0, 9.0]).unwrap();
        assert_eq!(c.shape(), (3, 3));
        assert_eq!(c.row(0), t[0].as_slice());
        assert_eq!(c.row(1), t[1].as_slice());
        assert_eq!(c.row(2), &[9.0, 9.0, 9.0]);
        assert!(assemble_memory(&[vec![1.0]], &sentinel).is_err());
    }

    #[test]
    fn hand_computed_fusion() {
        // n = 1, m = 0: the only memory row gets weight 1, so I = H + C Wv.
        let h = Matrix::new(1, 2, vec![0.5, -1.0]).unwrap();
        let c = Matrix::new(1, 2, vec![2.0, 3.0]).unwrap();
        let params = FuseParams {
            wq: Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            wk: Matrix::new(2, 2, vec![0.3, 0.1, -0.2, 0.4]).unwrap(),
            wv: Matrix::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        };
        let out = c2t_fuse(&h, &c, &params, FuseOptions::default()).unwrap();
        // C Wv = [2*0.1 + 3*0.3, 2*0.2 + 3*0.4] = [1.1, 1.6]
        assert!((out.get(0, 0) - 1.6).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fuse_shape_errors() {
        let h = Matrix::zeros(2, 3);
        let c = Matrix::zeros(2, 4);
        let params = FuseParams {
            wq: Matrix::zeros(3, 2),
            wk: Matrix::zeros(4, 2),
            wv: Matrix::zeros(4, 2),
        };
        assert!(matches!(
            c2t_fuse(&h, &c, &params, FuseOptions::default()),
            Err(FusionError::Shape(_))
        ));
    }

    #[test]
    fn huge_logits_are_numeric_errors() {
        let h = Matrix::new(1, 1, vec![1e200]).unwrap();
        let c = Matrix::new(1, 1, vec![1e200]).unwrap();
        let one = Matrix::new(1, 1, vec![1.0]).unwrap();
        let params = FuseParams {
            wq: one.clone(),
            wk: one.clone(),
            wv: one,
        };
        assert!(matches!(
            c2t_fuse(&h, &c, &params, FuseOptions::default()),
            Err(FusionError::NonFinite(_))
        ));
    }

    #[test]
    fn scaled_variant_divides_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = Matrix::random(&mut rng, 2, 3, 1.0);
        let c = Matrix::random(&mut rng, 3, 3, 1.0);
        let params = FuseParams {
            wq: Matrix::random(&mut rng, 3, 4, 1.0),
            wk: Matrix::random(&mut rng, 3, 4, 1.0),
            wv: Matrix::random(&mut rng, 3, 3, 1.0),
        };
        let scaled = c2t_forward(&h, &c, &params, FuseOptions { scaled: true }).unwrap();
        let manual = FuseParams {
            wq: params.wq.scale(0.5),
            ..params.clone()
        };
        let reference = c2t_forward(&h, &c, &manual, FuseOptions::default()).unwrap();
        for (a, b) in scaled.attention.data().iter().zip(reference.attention.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
