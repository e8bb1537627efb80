use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{transform_tfidf_sparse, FeaturesError, SparseMatrix, TfidfModel, UserDoc};
use crate::autodiff::Tensor;

pub const LSA_OVERSAMPLING: usize = 10;
pub const LSA_POWER_ITERATIONS: usize = 7;

/// Top right singular vectors of a training matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LsaFit {
    /// `(F, k)`, orthonormal columns.
    pub components: Tensor,
    /// Non-increasing, length `k`.
    pub singular_values: Vec<f64>,
    /// The `k` asked for; `k()` may be smaller after clamping to `min(N, F)`.
    pub requested_k: usize,
}

impl LsaFit {
    pub fn k(&self) -> usize {
        self.singular_values.len()
    }
}

/// A fitted tf-idf model together with its LSA basis.
#[derive(Clone, Debug, PartialEq)]
pub struct LsaProjector {
    pub tfidf: TfidfModel,
    pub fit: LsaFit,
}

impl LsaProjector {
    pub fn new(tfidf: TfidfModel, fit: LsaFit) -> Result<Self, FeaturesError> {
        let f = tfidf.num_features();
        if fit.components.rows() != f {
            return Err(FeaturesError::LengthMismatch { expected: f, got: fit.components.rows() });
        }
        Ok(LsaProjector { tfidf, fit })
    }

    /// Fits tf-idf and LSA on the training documents.
    pub fn fit(docs: &[UserDoc], spec: &super::NgramSpec, k: usize, seed: u64) -> Result<Self, FeaturesError> {
        let tfidf = super::fit_tfidf(docs, spec)?;
        let rows: Vec<Vec<(usize, f64)>> = docs.iter().map(|d| transform_tfidf_sparse(&tfidf, d)).collect();
        let x = SparseMatrix::from_rows(tfidf.num_features(), &rows);
        let fit = fit_lsa_sparse(&x, k, seed)?;
        Ok(LsaProjector { tfidf, fit })
    }

    pub fn k(&self) -> usize {
        self.fit.k()
    }

    /// tf-idf followed by projection, with the frozen training statistics.
    pub fn transform(&self, doc: &UserDoc) -> Vec<f64> {
        let v = transform_tfidf_sparse(&self.tfidf, doc);
        project_sparse(&self.fit.components, &v)
    }
}

fn project_sparse(components: &Tensor, v: &[(usize, f64)]) -> Vec<f64> {
    let k = components.cols();
    let mut z = vec![0.0; k];
    for &(c, x) in v {
        for (zj, &cj) in z.iter_mut().zip(components.row(c)) {
            *zj += x * cj;
        }
    }
    z
}

/// `z = vᵀ · components`.
pub fn project_lsa(projector: &LsaProjector, v: &[f64]) -> Result<Vec<f64>, FeaturesError> {
    let f = projector.fit.components.rows();
    if v.len() != f {
        return Err(FeaturesError::LengthMismatch { expected: f, got: v.len() });
    }
    let sparse: Vec<(usize, f64)> = v.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect();
    Ok(project_sparse(&projector.fit.components, &sparse))
}

pub fn fit_lsa(x: &Tensor, k: usize, seed: u64) -> Result<LsaFit, FeaturesError> {
    if !x.is_finite() {
        return Err(FeaturesError::NonFinite);
    }
    let (n, f) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, f, x.data());
    randomized_svd(n, f, k, seed, |q| &m * q, |q| m.tr_mul(q))
}

pub fn fit_lsa_sparse(x: &SparseMatrix, k: usize, seed: u64) -> Result<LsaFit, FeaturesError> {
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(FeaturesError::NonFinite);
    }
    randomized_svd(x.rows(), x.cols(), k, seed, |q| x.mul_dense(q), |q| x.transpose_mul_dense(q))
}

fn orth(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Randomized subspace iteration: Gaussian sketch, power iterations with
/// re-orthonormalization at every half step, then an exact SVD of the small
/// projected problem.
fn randomized_svd(
    n: usize,
    f: usize,
    k: usize,
    seed: u64,
    mul: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    tmul: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<LsaFit, FeaturesError> {
    if k == 0 {
        return Err(FeaturesError::ZeroK);
    }
    if n < 2 {
        return Err(FeaturesError::TooFewDocuments { needed: 2, got: n });
    }
    let min_dim = n.min(f);
    let k_eff = k.min(min_dim);
    let l = (k + LSA_OVERSAMPLING).min(min_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = DMatrix::<f64>::zeros(f, l);
    for r in 0..f {
        for c in 0..l {
            omega[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut q = orth(mul(&omega));
    for _ in 0..LSA_POWER_ITERATIONS {
        let z = orth(tmul(&q));
        q = orth(mul(&z));
    }
    // X ≈ Q·B with Bᵀ = XᵀQ = Q2·R, so X ≈ (Q·V_r)·Σ·(Q2·U_r)ᵀ where R = U_r Σ V_rᵀ.
    let qr = tmul(&q).qr();
    let (q2, r) = qr.unpack();
    let svd = r.svd(true, false);
    let u_r = svd.u.expect("requested U");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    order.truncate(k_eff);

    let basis = &q2 * &u_r;
    let mut data = vec![0.0; f * k_eff];
    for (j, &src) in order.iter().enumerate() {
        let col = basis.column(src);
        let mut pivot = 0;
        for i in 1..f {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..f {
            data[i * k_eff + j] = sign * col[i];
        }
    }
    let singular_values: Vec<f64> = order.iter().map(|&i| sv[i]).collect();
    if data.iter().chain(&singular_values).any(|v| !v.is_finite()) {
        return Err(FeaturesError::NonFinite);
    }
    let components = Tensor::matrix(f, k_eff, data);
    Ok(LsaFit { components, singular_values, requested_k: k })
}
