//! Linear dynamic probabilistic CCA: a block-structured linear dynamical
//! system with one shared latent chain and one private chain per
//! observation set, learned exactly by EM over Kalman/RTS smoothed
//! moments.
//!
//! The stacked latent is ordered `[shared, set 1, ..., set D]`; the stacked
//! observation is `[set 1, ..., set D]`. The transition and process-noise
//! matrices are block diagonal over chains and the observation noise is
//! spherical within each set. Those zeros are structural: they are never
//! re-estimated, so any number of EM iterations preserves them exactly.

mod em;
mod kalman;

pub use em::{em_fit, em_m_step, initialize_params, EmOptions, EmTrace, SuffStats};
pub use kalman::{kalman_filter, rts_smooth, FilteredBeliefs, SmoothedMoments};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chain and set dimensions of a model instance.
///
/// `chain_dims[0]` is the shared chain; `chain_dims[1 + j]` pairs with
/// `set_dims[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpccaShape {
    pub chain_dims: Vec<usize>,
    pub set_dims: Vec<usize>,
}

impl DpccaShape {
    pub fn new(chain_dims: Vec<usize>, set_dims: Vec<usize>) -> Result<Self> {
        if chain_dims.len() != set_dims.len() + 1 {
            return Err(Error::Config(format!(
                "{} chains require {} observation sets, got {}",
                chain_dims.len(),
                chain_dims.len().saturating_sub(1),
                set_dims.len()
            )));
        }
        if chain_dims.iter().chain(set_dims.iter()).any(|&d| d == 0) {
            return Err(Error::Config("all chain and set dims must be positive".into()));
        }
        Ok(DpccaShape { chain_dims, set_dims })
    }

    pub fn num_sets(&self) -> usize {
        self.set_dims.len()
    }

    pub fn total_latent(&self) -> usize {
        self.chain_dims.iter().sum()
    }

    pub fn total_obs(&self) -> usize {
        self.set_dims.iter().sum()
    }

    /// Offset of chain `i` within the stacked latent.
    pub fn chain_offset(&self, chain: usize) -> usize {
        self.chain_dims[..chain].iter().sum()
    }

    /// Offset of set `j` (0-based) within the stacked observation.
    pub fn set_offset(&self, set: usize) -> usize {
        self.set_dims[..set].iter().sum()
    }
}

/// Block-structured parameters of the linear model.
///
/// Chain index 0 is the shared chain. Set indices are 0-based in code
/// (set `j` couples chain `j + 1` with observation block `j`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DpccaParams {
    /// Per-chain transition matrices.
    pub transitions: Vec<DMatrix<f64>>,
    /// Per-chain process noise covariances (SPD).
    pub process_noise: Vec<DMatrix<f64>>,
    /// Per-set loadings onto the shared chain.
    pub shared_loadings: Vec<DMatrix<f64>>,
    /// Per-set loadings onto the set's own chain.
    pub set_loadings: Vec<DMatrix<f64>>,
    /// Per-set spherical observation noise variances.
    pub obs_noise: Vec<f64>,
    /// Per-chain initial (t = 1) state means.
    pub init_mean: Vec<DVector<f64>>,
    /// Per-chain initial state covariances (SPD).
    pub init_cov: Vec<DMatrix<f64>>,
}

/// Assembled dense linear-dynamical-system form.
#[derive(Clone, Debug)]
pub struct Lds {
    /// Stacked transition matrix (block diagonal).
    pub transition: DMatrix<f64>,
    /// Stacked process noise (block diagonal).
    pub process_noise: DMatrix<f64>,
    /// Stacked emission matrix `[shared loadings | blockdiag(set loadings)]`.
    pub emission: DMatrix<f64>,
    /// Stacked observation noise (diagonal, spherical per set).
    pub obs_noise: DMatrix<f64>,
    /// Prior mean of the t = 1 latent.
    pub init_mean: DVector<f64>,
    /// Prior covariance of the t = 1 latent.
    pub init_cov: DMatrix<f64>,
}

impl DpccaParams {
    /// Shape implied by the stored matrices.
    pub fn shape(&self) -> DpccaShape {
        DpccaShape {
            chain_dims: self.transitions.iter().map(|a| a.nrows()).collect(),
            set_dims: self.shared_loadings.iter().map(|w| w.nrows()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n_chains = self.transitions.len();
        if n_chains < 2 {
            return Err(Error::Config("need a shared chain plus at least one set chain".into()));
        }
        let n_sets = n_chains - 1;
        if self.process_noise.len() != n_chains
            || self.init_mean.len() != n_chains
            || self.init_cov.len() != n_chains
            || self.shared_loadings.len() != n_sets
            || self.set_loadings.len() != n_sets
            || self.obs_noise.len() != n_sets
        {
            return Err(Error::Config("inconsistent chain/set counts across parameter fields".into()));
        }
        for (i, a) in self.transitions.iter().enumerate() {
            let d = a.nrows();
            if a.ncols() != d {
                return Err(Error::Config(format!("transition {i} is not square")));
            }
            if self.process_noise[i].shape() != (d, d) || self.init_cov[i].shape() != (d, d) {
                return Err(Error::Config(format!("covariance shapes of chain {i} do not match dim {d}")));
            }
            if self.init_mean[i].len() != d {
                return Err(Error::Config(format!("init mean of chain {i} has wrong length")));
            }
            check_spd(&self.process_noise[i], "process noise", i)?;
            check_spd(&self.init_cov[i], "init covariance", i)?;
        }
        let d0 = self.transitions[0].nrows();
        for j in 0..n_sets {
            let p = self.shared_loadings[j].nrows();
            if self.shared_loadings[j].ncols() != d0 {
                return Err(Error::Config(format!(
                    "shared loading {j} has {} columns, shared chain dim is {d0}",
                    self.shared_loadings[j].ncols()
                )));
            }
            if self.set_loadings[j].nrows() != p
                || self.set_loadings[j].ncols() != self.transitions[j + 1].nrows()
            {
                return Err(Error::Config(format!("set loading {j} does not match chain {} dims", j + 1)));
            }
            if self.obs_noise[j] <= 0.0 {
                return Err(Error::Config(format!("observation noise of set {j} must be positive")));
            }
        }
        Ok(())
    }

    /// Assemble the block-diagonal LDS form.
    pub fn assemble(&self) -> Result<Lds> {
        self.validate()?;
        let shape = self.shape();
        let d = shape.total_latent();
        let p = shape.total_obs();

        let mut transition = DMatrix::zeros(d, d);
        let mut process_noise = DMatrix::zeros(d, d);
        let mut init_cov = DMatrix::zeros(d, d);
        let mut init_mean = DVector::zeros(d);
        for (i, a) in self.transitions.iter().enumerate() {
            let o = shape.chain_offset(i);
            let di = shape.chain_dims[i];
            transition.view_mut((o, o), (di, di)).copy_from(a);
            process_noise
                .view_mut((o, o), (di, di))
                .copy_from(&self.process_noise[i]);
            init_cov.view_mut((o, o), (di, di)).copy_from(&self.init_cov[i]);
            init_mean.rows_mut(o, di).copy_from(&self.init_mean[i]);
        }

        let mut emission = DMatrix::zeros(p, d);
        let mut obs_noise = DMatrix::zeros(p, p);
        let d0 = shape.chain_dims[0];
        for j in 0..shape.num_sets() {
            let ro = shape.set_offset(j);
            let pj = shape.set_dims[j];
            let co = shape.chain_offset(j + 1);
            let dj = shape.chain_dims[j + 1];
            emission.view_mut((ro, 0), (pj, d0)).copy_from(&self.shared_loadings[j]);
            emission.view_mut((ro, co), (pj, dj)).copy_from(&self.set_loadings[j]);
            for r in 0..pj {
                obs_noise[(ro + r, ro + r)] = self.obs_noise[j];
            }
        }

        Ok(Lds {
            transition,
            process_noise,
            emission,
            obs_noise,
            init_mean,
            init_cov,
        })
    }

    /// Inverse of [`DpccaParams::assemble`]; extracts the structured blocks.
    pub fn disassemble(lds: &Lds, shape: &DpccaShape) -> Result<Self> {
        let d = shape.total_latent();
        let p = shape.total_obs();
        if lds.transition.shape() != (d, d) || lds.emission.shape() != (p, d) {
            return Err(Error::Config("LDS dims do not match the requested shape".into()));
        }
        let mut params = DpccaParams {
            transitions: Vec::new(),
            process_noise: Vec::new(),
            shared_loadings: Vec::new(),
            set_loadings: Vec::new(),
            obs_noise: Vec::new(),
            init_mean: Vec::new(),
            init_cov: Vec::new(),
        };
        for i in 0..shape.chain_dims.len() {
            let o = shape.chain_offset(i);
            let di = shape.chain_dims[i];
            params.transitions.push(lds.transition.view((o, o), (di, di)).into());
            params.process_noise.push(lds.process_noise.view((o, o), (di, di)).into());
            params.init_mean.push(lds.init_mean.rows(o, di).into());
            params.init_cov.push(lds.init_cov.view((o, o), (di, di)).into());
        }
        let d0 = shape.chain_dims[0];
        for j in 0..shape.num_sets() {
            let ro = shape.set_offset(j);
            let pj = shape.set_dims[j];
            let co = shape.chain_offset(j + 1);
            let dj = shape.chain_dims[j + 1];
            params.shared_loadings.push(lds.emission.view((ro, 0), (pj, d0)).into());
            params.set_loadings.push(lds.emission.view((ro, co), (pj, dj)).into());
            params.obs_noise.push(lds.obs_noise[(ro, ro)]);
        }
        params.validate()?;
        Ok(params)
    }

    /// Ancestral sampling of `count` sequences of length `t_len`.
    /// Returns `(observations, latents)` per sequence.
    pub fn simulate<R: Rng>(
        &self,
        t_len: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)>> {
        let lds = self.assemble()?;
        let d = lds.transition.nrows();
        let p = lds.emission.nrows();
        let chol_q = spd_cholesky(&lds.process_noise, "process noise")?;
        let chol_p1 = spd_cholesky(&lds.init_cov, "initial covariance")?;
        let obs_std: DVector<f64> = lds.obs_noise.diagonal().map(f64::sqrt);

        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut xs = Vec::with_capacity(t_len);
            let mut zs = Vec::with_capacity(t_len);
            let mut z = &lds.init_mean + chol_p1.l() * randn(d, rng);
            for t in 0..t_len {
                if t > 0 {
                    z = &lds.transition * &z + chol_q.l() * randn(d, rng);
                }
                let noise = randn(p, rng).component_mul(&obs_std);
                let x = &lds.emission * &z + noise;
                zs.push(z.clone());
                xs.push(x);
            }
            out.push((xs, zs));
        }
        Ok(out)
    }
}

fn randn<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn check_spd(m: &DMatrix<f64>, what: &str, idx: usize) -> Result<()> {
    let sym_err = (m - m.transpose()).abs().max();
    if sym_err > 1e-10 * (1.0 + m.abs().max()) {
        return Err(Error::Config(format!("{what} {idx} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Config(format!("{what} {idx} is not positive definite")));
    }
    Ok(())
}

pub(crate) fn spd_cholesky(
    m: &DMatrix<f64>,
    what: &str,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scalar_chain_params() -> DpccaParams {
        // D = 2, every chain one-dimensional, sets of width 2 and 3.
        DpccaParams {
            transitions: vec![
                DMatrix::from_element(1, 1, 0.9),
                DMatrix::from_element(1, 1, 0.7),
                DMatrix::from_element(1, 1, 0.5),
            ],
            process_noise: vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 0.5),
                DMatrix::from_element(1, 1, 0.25),
            ],
            shared_loadings: vec![
                DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
                DMatrix::from_column_slice(3, 1, &[0.5, 0.25, 2.0]),
            ],
            set_loadings: vec![
                DMatrix::from_column_slice(2, 1, &[0.3, 0.6]),
                DMatrix::from_column_slice(3, 1, &[1.5, -0.5, 0.1]),
            ],
            obs_noise: vec![1.0, 4.0],
            init_mean: vec![DVector::zeros(1), DVector::zeros(1), DVector::zeros(1)],
            init_cov: vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 1.0),
            ],
        }
    }

    #[test]
    fn assemble_block_layout() {
        let params = scalar_chain_params();
        let lds = params.assemble().unwrap();
        assert_eq!(lds.transition.diagonal().as_slice(), &[0.9, 0.7, 0.5]);
        assert_eq!(lds.transition[(0, 1)], 0.0);
        assert_eq!(
            lds.obs_noise.diagonal().as_slice(),
            &[1.0, 1.0, 4.0, 4.0, 4.0]
        );
        // emission: shared loadings occupy column 0; set loadings are block
        // diagonal over (columns 1, 2).
        assert_eq!(lds.emission[(0, 0)], 1.0);
        assert_eq!(lds.emission[(0, 1)], 0.3);
        assert_eq!(lds.emission[(0, 2)], 0.0);
        assert_eq!(lds.emission[(2, 2)], 1.5);
        assert_eq!(lds.emission[(2, 1)], 0.0);
    }

    #[test]
    fn assemble_disassemble_roundtrip() {
        let params = scalar_chain_params();
        let lds = params.assemble().unwrap();
        let back = DpccaParams::disassemble(&lds, &params.shape()).unwrap();
        assert_eq!(back.transitions, params.transitions);
        assert_eq!(back.shared_loadings, params.shared_loadings);
        assert_eq!(back.set_loadings, params.set_loadings);
        assert_eq!(back.obs_noise, params.obs_noise);
        assert_eq!(back.init_cov, params.init_cov);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut params = scalar_chain_params();
        params.shared_loadings[0] = DMatrix::from_column_slice(2, 2, &[1.0; 4]);
        assert!(params.assemble().is_err());
    }
}
