//! Central-difference verification of the analytic gradients.
//!
//! The scalar loss is the sum of all outputs. For every entry `x` of every input
//! and parameter, the numeric derivative `(L(x + h) - L(x - h)) / 2h` is compared
//! with the analytic one using `|a - n| / max(|a|, |n|, 1e-8)`. The numeric side
//! evaluates the loss with plain scalar loops in double-double arithmetic, so its
//! rounding error sits far below the central-difference truncation error.

use rand::Rng;

use super::extended::{DoubleDouble, Real};

use super::{
    attention_pool, attention_pool_backward, c2t_backward, c2t_fuse, FuseOptions, FuseParams, FusionError, Matrix,
    PoolParams,
};

pub const DEFAULT_STEP: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-8;

/// An op together with the inputs and parameters to check it at.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Pool {
        elements: Matrix,
        params: PoolParams,
    },
    Fuse {
        h: Matrix,
        c: Matrix,
        params: FuseParams,
        options: FuseOptions,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries: usize,
    /// Name of the tensor holding the worst entry.
    pub worst: &'static str,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

impl Instance {
    pub fn random_pool<R: Rng>(rng: &mut R, m: usize, element_dim: usize, attention_dim: usize) -> Self {
        Instance::Pool {
            elements: Matrix::random(rng, m, element_dim, 1.0),
            params: PoolParams {
                projection: Matrix::random(rng, element_dim, attention_dim, 0.8),
                bias: Matrix::random(rng, 1, attention_dim, 0.5).data().to_vec(),
                scorer: Matrix::random(rng, 1, attention_dim, 1.5).data().to_vec(),
            },
        }
    }

    /// `n` text rows of width `d`, `triples` memory rows plus a sentinel of width `memory_dim`.
    pub fn random_fuse<R: Rng>(
        rng: &mut R,
        n: usize,
        d: usize,
        triples: usize,
        memory_dim: usize,
        key_dim: usize,
        options: FuseOptions,
    ) -> Self {
        Instance::Fuse {
            h: Matrix::random(rng, n, d, 1.0),
            c: Matrix::random(rng, triples + 1, memory_dim, 1.0),
            params: FuseParams {
                wq: Matrix::random(rng, d, key_dim, 0.8),
                wk: Matrix::random(rng, memory_dim, key_dim, 0.8),
                wv: Matrix::random(rng, memory_dim, d, 0.8),
            },
            options,
        }
    }

    fn tensors(&self) -> Vec<(&'static str, Vec<f64>)> {
        match self {
            Instance::Pool { elements, params } => vec![
                ("elements", elements.data().to_vec()),
                ("projection", params.projection.data().to_vec()),
                ("bias", params.bias.clone()),
                ("scorer", params.scorer.clone()),
            ],
            Instance::Fuse { h, c, params, .. } => vec![
                ("H", h.data().to_vec()),
                ("C", c.data().to_vec()),
                ("Wq", params.wq.data().to_vec()),
                ("Wk", params.wk.data().to_vec()),
                ("Wv", params.wv.data().to_vec()),
            ],
        }
    }

    /// Sum of all outputs.
    pub fn loss(&self) -> Result<f64, FusionError> {
        match self {
            Instance::Pool { elements, params } => Ok(attention_pool(elements, params)?.iter().sum()),
            Instance::Fuse { h, c, params, options } => Ok(c2t_fuse(h, c, params, *options)?.data().iter().sum()),
        }
    }

    /// Analytic gradients of [`Instance::loss`], in the same layout as the tensors.
    pub fn analytic_gradients(&self) -> Result<Vec<Vec<f64>>, FusionError> {
        match self {
            Instance::Pool { elements, params } => {
                let g = attention_pool_backward(elements, params, &vec![1.0; elements.cols()])?;
                Ok(vec![g.elements.data().to_vec(), g.projection.data().to_vec(), g.bias, g.scorer])
            }
            Instance::Fuse { h, c, params, options } => {
                let ones = Matrix::new(h.rows(), h.cols(), vec![1.0; h.rows() * h.cols()])?;
                let g = c2t_backward(h, c, params, *options, &ones)?;
                Ok(vec![
                    g.h.data().to_vec(),
                    g.c.data().to_vec(),
                    g.wq.data().to_vec(),
                    g.wk.data().to_vec(),
                    g.wv.data().to_vec(),
                ])
            }
        }
    }

    /// Sum of all outputs evaluated in `T` with scalar loops over flattened tensors.
    fn loss_in<T: Real>(&self, tensors: &[Vec<T>]) -> T {
        match self {
            Instance::Pool { elements, params } => {
                let (m, de) = elements.shape();
                pool_loss(tensors, m, de, params.bias.len())
            }
            Instance::Fuse { h, c, params, options } => {
                let scale = if options.scaled {
                    1.0 / (params.wq.cols() as f64).sqrt()
                } else {
                    1.0
                };
                fuse_loss(tensors, h.shape(), c.shape(), params.wq.cols(), T::from_f64(scale))
            }
        }
    }

    /// Central-difference gradients of the summed output with step `step`, in double-double precision.
    pub fn numeric_gradients(&self, step: f64) -> Vec<Vec<f64>> {
        let mut tensors: Vec<Vec<DoubleDouble>> = self
            .tensors()
            .into_iter()
            .map(|(_, v)| v.into_iter().map(DoubleDouble::from_f64).collect())
            .collect();
        let h = DoubleDouble::from_f64(step);
        let two_h = DoubleDouble::from_f64(2.0 * step);
        let mut grads = Vec::with_capacity(tensors.len());
        for t in 0..tensors.len() {
            let mut g = Vec::with_capacity(tensors[t].len());
            for i in 0..tensors[t].len() {
                let original = tensors[t][i];
                tensors[t][i] = original + h;
                let plus = self.loss_in(&tensors);
                tensors[t][i] = original - h;
                let minus = self.loss_in(&tensors);
                tensors[t][i] = original;
                g.push(((plus - minus) / two_h).to_f64());
            }
            grads.push(g);
        }
        grads
    }
}

fn softmax_in<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|l| (*l - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, b| a + *b);
    exps.into_iter().map(|e| e / sum).collect()
}

// tensors: [elements m×de, projection de×da, bias da, scorer da]
fn pool_loss<T: Real>(t: &[Vec<T>], m: usize, de: usize, da: usize) -> T {
    let (e, w, b, v) = (&t[0], &t[1], &t[2], &t[3]);
    let scores: Vec<T> = (0..m)
        .map(|j| {
            (0..da).fold(T::zero(), |acc, q| {
                let u = (0..de).fold(b[q], |u, p| u + e[j * de + p] * w[p * da + q]);
                acc + v[q] * u.tanh()
            })
        })
        .collect();
    let alpha = softmax_in(&scores);
    let mut loss = T::zero();
    for p in 0..de {
        for j in 0..m {
            loss = loss + alpha[j] * e[j * de + p];
        }
    }
    loss
}

// tensors: [H n×d, C r×dc, Wq d×dk, Wk dc×dk, Wv dc×d]
fn fuse_loss<T: Real>(t: &[Vec<T>], (n, d): (usize, usize), (r, dc): (usize, usize), dk: usize, scale: T) -> T {
    let (h, c, wq, wk, wv) = (&t[0], &t[1], &t[2], &t[3], &t[4]);
    let q: Vec<T> = (0..n * dk)
        .map(|x| (0..d).fold(T::zero(), |acc, p| acc + h[(x / dk) * d + p] * wq[p * dk + x % dk]))
        .collect();
    let k: Vec<T> = (0..r * dk)
        .map(|x| (0..dc).fold(T::zero(), |acc, p| acc + c[(x / dk) * dc + p] * wk[p * dk + x % dk]))
        .collect();
    let v: Vec<T> = (0..r * d)
        .map(|x| (0..dc).fold(T::zero(), |acc, p| acc + c[(x / d) * dc + p] * wv[p * d + x % d]))
        .collect();
    let mut loss = T::zero();
    for i in 0..n {
        let logits: Vec<T> = (0..r)
            .map(|j| scale * (0..dk).fold(T::zero(), |acc, a| acc + q[i * dk + a] * k[j * dk + a]))
            .collect();
        let attn = softmax_in(&logits);
        for p in 0..d {
            let mixed = (0..r).fold(T::zero(), |acc, j| acc + attn[j] * v[j * d + p]);
            loss = loss + h[i * d + p] + mixed;
        }
    }
    loss
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn grad_check(instance: &Instance, step: f64) -> Result<GradCheckReport, FusionError> {
    let names: Vec<&'static str> = instance.tensors().iter().map(|(n, _)| *n).collect();
    let analytic = instance.analytic_gradients()?;
    let numeric = instance.numeric_gradients(step);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        entries: 0,
        worst: names[0],
    };
    for ((name, a), n) in names.iter().zip(&analytic).zip(&numeric) {
        for (x, y) in a.iter().zip(n) {
            let err = relative_error(*x, *y);
            report.entries += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = name;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn near_linear_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let instance = match Instance::random_pool(&mut rng, 3, 4, 3) {
            Instance::Pool { elements, mut params } => {
                // keep tanh inputs close to zero
                params.projection = params.projection.scale(1e-3);
                params.bias = vec![0.0; 3];
                Instance::Pool { elements, params }
            }
            _ => unreachable!(),
        };
        let report = grad_check(&instance, DEFAULT_STEP).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn random_pool_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let report = grad_check(&Instance::random_pool(&mut rng, 3, 4, 5), DEFAULT_STEP).unwrap();
        assert_eq!(report.entries, 3 * 4 + 4 * 5 + 5 + 5);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn random_fuse_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for scaled in [false, true] {
            let instance = Instance::random_fuse(&mut rng, 5, 8, 3, 6, 4, FuseOptions { scaled });
            let report = grad_check(&instance, DEFAULT_STEP).unwrap();
            assert!(report.max_relative_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(0.0, 1e-12) - 1e-4).abs() < 1e-18);
    }
}
