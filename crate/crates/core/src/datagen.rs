//! Synthetic tabular generators with concept bottleneck (`x → c → y`) and
//! incomplete (`x → c → y` plus latent `x → r → y`) mechanisms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ConceptDataset, DatasetMeta, Mechanism, Partition};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::neural::{Layer, LayeredNet, Mode};

/// Width of both hidden layers of the generating MLPs.
pub const GENERATOR_HIDDEN: usize = 64;
/// Ridge added to `AAᵀ/p` when building the covariance.
pub const SPD_RIDGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    #[serde(default)]
    pub j: usize,
    pub seed: u64,
    pub mechanism: Mechanism,
}

impl GenConfig {
    /// Desk-scale bottleneck configuration.
    pub fn desk_bottleneck(seed: u64) -> Self {
        Self {
            n: 5_000,
            p: 100,
            k: 10,
            j: 0,
            seed,
            mechanism: Mechanism::Bottleneck,
        }
    }

    /// Desk-scale incomplete configuration.
    pub fn desk_incomplete(seed: u64) -> Self {
        Self {
            j: 30,
            mechanism: Mechanism::Incomplete,
            ..Self::desk_bottleneck(seed)
        }
    }

    /// Full-size bottleneck configuration (N = 50,000, p = 1,500, K = 30).
    pub fn full_bottleneck(seed: u64) -> Self {
        Self {
            n: 50_000,
            p: 1_500,
            k: 30,
            j: 0,
            seed,
            mechanism: Mechanism::Bottleneck,
        }
    }

    pub fn full_incomplete(seed: u64) -> Self {
        Self {
            j: 90,
            mechanism: Mechanism::Incomplete,
            ..Self::full_bottleneck(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "generator needs n >= 2, p >= 1, k >= 1 (got n={}, p={}, k={})",
                self.n, self.p, self.k
            )));
        }
        match (self.mechanism, self.j) {
            (Mechanism::Bottleneck, 0) | (Mechanism::Incomplete, 1..) => Ok(()),
            (Mechanism::Bottleneck, j) => Err(Error::Config(format!("bottleneck mechanism requires j = 0, got {j}"))),
            (Mechanism::Incomplete, _) => Err(Error::Config("incomplete mechanism requires j >= 1".into())),
        }
    }
}

/// Seeds for each generation step, drawn in a fixed order from the config seed.
struct StepSeeds {
    mean: u64,
    covariance: u64,
    design: u64,
    concept_mlp: u64,
    target_mlp: u64,
    partition: u64,
}

impl StepSeeds {
    fn derive(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Self {
            mean: r.gen(),
            covariance: r.gen(),
            design: r.gen(),
            concept_mlp: r.gen(),
            target_mlp: r.gen(),
            partition: r.gen(),
        }
    }
}

/// Random SPD matrix `AAᵀ/p + 0.1·I`, `A` standard normal, symmetric bit-for-bit.
pub fn gen_spd(p: usize, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    let mut s = a.matmul_t(&a).expect("square").scale(1.0 / p as f64);
    for i in 0..p {
        s[(i, i)] += SPD_RIDGE;
        for j in 0..i {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}

/// Lower Cholesky factor; fails unless `sigma` is symmetric positive definite.
pub fn cholesky(sigma: &Matrix<f64>) -> Result<Matrix<f64>> {
    let p = sigma.rows();
    if sigma.cols() != p {
        return Err(Error::NotPositiveDefinite);
    }
    let m = nalgebra::DMatrix::from_row_slice(p, p, sigma.as_slice());
    let chol = nalgebra::Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    Ok(Matrix::from_fn(p, p, |i, j| l[(i, j)]))
}

/// `n` rows drawn i.i.d. from `N(mu, sigma)` as `mu + L z`.
pub fn sample_gaussian(n: usize, mu: &[f64], sigma: &Matrix<f64>, seed: u64) -> Result<Matrix<f64>> {
    if mu.len() != sigma.rows() {
        return Err(Error::InvalidArgument(format!("mean of length {} for a {}-dim covariance", mu.len(), sigma.rows())));
    }
    let l = cholesky(sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Matrix::from_fn(n, mu.len(), |_, _| StandardNormal.sample(&mut rng));
    let mut x = z.matmul_t(&l)?;
    x.add_row_broadcast(mu)?;
    Ok(x)
}

/// Randomly initialised ReLU MLP with two hidden layers and a linear output, in eval mode.
pub fn random_mlp(in_dim: usize, out_dim: usize, seed: u64) -> LayeredNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LayeredNet::new(vec![
        Layer::affine_he(in_dim, GENERATOR_HIDDEN, &mut rng),
        Layer::Relu,
        Layer::affine_he(GENERATOR_HIDDEN, GENERATOR_HIDDEN, &mut rng),
        Layer::Relu,
        Layer::affine_he(GENERATOR_HIDDEN, out_dim, &mut rng),
    ])
    .expect("generator dims compose");
    net.set_mode(Mode::Eval);
    net
}

/// Median of a column: middle order statistic, or the mean of the two middle
/// ones for an even count.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `1{v ≥ median(column)}` elementwise.
pub fn binarize_by_median(v: &Matrix<f64>) -> Result<Matrix<f64>> {
    if v.rows() < 2 {
        return Err(Error::InvalidArgument("median binarisation needs at least two rows".into()));
    }
    let medians: Vec<f64> = (0..v.cols()).map(|j| median(&v.column(j))).collect();
    Ok(Matrix::from_fn(v.rows(), v.cols(), |i, j| if v[(i, j)] >= medians[j] { 1.0 } else { 0.0 }))
}

/// Full generation, also returning the binarised `u = [c, r]` (equal to `c` when `j = 0`).
pub fn generate_with_latents(cfg: &GenConfig) -> Result<(ConceptDataset<f64>, Matrix<f64>)> {
    cfg.validate()?;
    let seeds = StepSeeds::derive(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.mean);
    let uniform = Uniform::new(-5.0, 5.0);
    let mu: Vec<f64> = (0..cfg.p).map(|_| uniform.sample(&mut rng)).collect();
    let sigma = gen_spd(cfg.p, seeds.covariance);
    let x = sample_gaussian(cfg.n, &mu, &sigma, seeds.design)?;

    let width = cfg.k + cfg.j;
    let h = random_mlp(cfg.p, width, seeds.concept_mlp);
    let u = binarize_by_median(&h.predict(&x)?)?;
    let g = random_mlp(width, 1, seeds.target_mlp);
    let y = binarize_by_median(&g.predict(&u)?)?.into_vec();
    let c = u.select_cols(0, cfg.k);

    let meta = DatasetMeta {
        n: cfg.n,
        p: cfg.p,
        k: cfg.k,
        j: cfg.j,
        seed: cfg.seed,
        mechanism: cfg.mechanism,
    };
    let ds = ConceptDataset::new(x, c, y, Partition::sixty_twenty_twenty(cfg.n, seeds.partition), meta)?;
    Ok((ds, u))
}

pub fn gen_bottleneck(cfg: &GenConfig) -> Result<ConceptDataset<f64>> {
    if cfg.mechanism != Mechanism::Bottleneck {
        return Err(Error::Config("gen_bottleneck requires the bottleneck mechanism".into()));
    }
    Ok(generate_with_latents(cfg)?.0)
}

pub fn gen_incomplete(cfg: &GenConfig) -> Result<ConceptDataset<f64>> {
    if cfg.mechanism != Mechanism::Incomplete {
        return Err(Error::Config("gen_incomplete requires the incomplete mechanism".into()));
    }
    Ok(generate_with_latents(cfg)?.0)
}

/// Dispatches on `cfg.mechanism`.
pub fn generate(cfg: &GenConfig) -> Result<ConceptDataset<f64>> {
    Ok(generate_with_latents(cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_scalar_case_positive() {
        let s = gen_spd(1, 3);
        assert!(s[(0, 0)] > 0.0);
    }

    #[test]
    fn spd_symmetric_and_deterministic() {
        let s = gen_spd(17, 11);
        assert_eq!(s, s.transpose());
        assert_eq!(s, gen_spd(17, 11));
        assert!(cholesky(&s).is_ok());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&m), Err(Error::NotPositiveDefinite)));
        assert!(sample_gaussian(3, &[0.0, 0.0], &m, 0).is_err());
    }

    #[test]
    fn tiny_variance_rows_sit_on_the_mean() {
        let sigma = Matrix::identity(3).scale(1e-12);
        let x = sample_gaussian(1, &[1.0, -2.0, 3.0], &sigma, 5).unwrap();
        for (v, m) in x.row(0).iter().zip([1.0, -2.0, 3.0]) {
            assert!((v - m).abs() < 1e-5);
        }
    }

    #[test]
    fn median_convention() {
        let v = Matrix::column_vector(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(binarize_by_median(&v).unwrap().into_vec(), vec![0.0, 0.0, 1.0, 1.0]);
        let constant = Matrix::column_vector(&[2.0; 5]);
        assert!(binarize_by_median(&constant).unwrap().as_slice().iter().all(|&b| b == 1.0));
        assert!(binarize_by_median(&Matrix::column_vector(&[1.0])).is_err());
    }

    #[test]
    fn random_mlp_shapes_and_determinism() {
        let a = random_mlp(5, 3, 7);
        let b = random_mlp(5, 3, 7);
        let x = Matrix::from_fn(4, 5, |i, j| (i * j) as f64 - 1.0);
        let ya = a.predict(&x).unwrap();
        assert_eq!(ya.shape(), (4, 3));
        assert_eq!(ya, b.predict(&x).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig::full_bottleneck(0).validate().is_ok());
        assert!(GenConfig::full_incomplete(0).validate().is_ok());
        assert_eq!(GenConfig::full_bottleneck(0).n, 50_000);
        assert_eq!(GenConfig::full_bottleneck(0).p, 1_500);
        assert_eq!(GenConfig::full_bottleneck(0).k, 30);
        assert_eq!(GenConfig::full_incomplete(0).j, 90);
        let mut bad = GenConfig::desk_bottleneck(0);
        bad.j = 3;
        assert!(bad.validate().is_err());
        let mut bad = GenConfig::desk_incomplete(0);
        bad.j = 0;
        assert!(bad.validate().is_err());
    }
}
