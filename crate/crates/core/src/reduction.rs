//! Elimination of coherences from a block-partitioned generator.
//!
//! With `d/dt (p, c) = [[M_p, M_pc], [M_cp, M_c]] (p, c)`, the exact
//! Laplace-domain reduction gives the memory kernel
//! `M_pc (s - M_c)^{-1} M_cp`; freezing the coherences at their instantaneous
//! stationary value `c = K p` with `K = -M_c^{-1} M_cp` leaves the population
//! generator `L = M_p + M_pc K`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, expm, max_abs, nearest_eigenvalue, null_vector, re, solve, CMatrix, CVector};
use crate::liouville::{HilbertBasis, LiouvilleVector, Superoperator, SuperoperatorBlocks};

/// Minimum ratio between the two smallest generator eigenvalue magnitudes
/// for a steady state to count as unique.
pub const UNIQUENESS_RATIO: f64 = 1e3;

/// Imaginary parts of effective rates above this are rejected as unphysical.
pub const REALNESS_TOL: f64 = 1e-10;

fn singular_tol(m: &CMatrix) -> f64 {
    1e-12 * max_abs(m).max(1.0)
}

/// Stationary coherences per unit population: `c = K p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMap {
    k: CMatrix,
    residual: f64,
}

impl CoherenceMap {
    pub fn matrix(&self) -> &CMatrix {
        &self.k
    }

    /// `max |M_c K + M_cp|` at construction.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `W p = (p, K p)`: lift a population vector into Liouville space.
    pub fn lift(&self, basis: &HilbertBasis, populations: &CVector) -> Result<LiouvilleVector> {
        if populations.len() != self.k.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.k.ncols(),
                found: populations.len(),
            });
        }
        LiouvilleVector::from_parts(basis, populations, &(&self.k * populations))
    }
}

pub fn coherence_map(blocks: &SuperoperatorBlocks) -> Result<CoherenceMap> {
    let nc = blocks.m_c.nrows();
    if nc == 0 {
        return Ok(CoherenceMap {
            k: CMatrix::zeros(0, blocks.m_p.ncols()),
            residual: 0.0,
        });
    }
    check_decaying(&blocks.m_c)?;
    let k = solve(&blocks.m_c, &blocks.m_cp)
        .ok_or_else(|| Error::NonDecayingCoherence { eigenvalue: re(0.0) })?
        .map(|z| -z);
    let residual = max_abs(&(&blocks.m_c * &k + &blocks.m_cp));
    Ok(CoherenceMap { k, residual })
}

fn check_decaying(m_c: &CMatrix) -> Result<()> {
    let eigs = eigenvalues(m_c);
    if let Some((ev, dist)) = nearest_eigenvalue(&eigs, re(0.0)) {
        if dist <= singular_tol(m_c) {
            return Err(Error::NonDecayingCoherence { eigenvalue: ev });
        }
    }
    Ok(())
}

/// Population-space generator `L`, stored complex but expected real.
///
/// Entry `(n, m)` is the rate `L_{nn,mm}` of the transition `m -> n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveRateMatrix {
    basis: HilbertBasis,
    l: CMatrix,
}

impl EffectiveRateMatrix {
    /// Wrap a classical rate matrix (columns must sum to zero).
    pub fn from_rates(basis: &HilbertBasis, rates: &DMatrix<f64>) -> Result<Self> {
        if rates.nrows() != basis.dim() || rates.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: rates.nrows().max(rates.ncols()),
            });
        }
        Self::new(basis, rates.map(re))
    }

    fn new(basis: &HilbertBasis, l: CMatrix) -> Result<Self> {
        let out = Self {
            basis: basis.clone(),
            l,
        };
        let defect = out.column_sum_defect();
        if defect > 1e-12 * max_abs(&out.l).max(1.0) {
            return Err(Error::NotConservative { defect });
        }
        Ok(out)
    }

    pub fn basis(&self) -> &HilbertBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn max_imag(&self) -> f64 {
        self.l.iter().fold(0.0, |a, z| a.max(z.im.abs()))
    }

    pub fn column_sum_defect(&self) -> f64 {
        self.l.column_iter().map(|col| col.sum().norm()).fold(0.0, f64::max)
    }

    /// Real part of `L`, after checking the imaginary parts are negligible.
    pub fn rates(&self) -> Result<DMatrix<f64>> {
        let max_imag = self.max_imag();
        if max_imag > REALNESS_TOL * max_abs(&self.l).max(1.0) {
            return Err(Error::NonRealRates { max_imag });
        }
        Ok(self.l.map(|z| z.re))
    }

    /// Normalized null vector of `L`.
    pub fn stationary_populations(&self) -> Result<PopulationSteadyState> {
        let (v, gap_ratio) = unique_null_vector(&self.l)?;
        let total: Complex64 = v.sum();
        let p = v.map(|z| z / total);
        let residual = (&self.l * &p).norm();
        Ok(PopulationSteadyState {
            populations: p.map(|z| z.re),
            residual,
            gap_ratio,
        })
    }
}

pub fn effective_rate_matrix(blocks: &SuperoperatorBlocks) -> Result<EffectiveRateMatrix> {
    let k = coherence_map(blocks)?;
    effective_rate_matrix_with(blocks, &k)
}

/// `L = M_p + M_pc K` for an already computed coherence map.
pub fn effective_rate_matrix_with(blocks: &SuperoperatorBlocks, k: &CoherenceMap) -> Result<EffectiveRateMatrix> {
    EffectiveRateMatrix::new(&blocks.basis, &blocks.m_p + &blocks.m_pc * &k.k)
}

/// `M_pc (s - M_c)^{-1} M_cp`, the Laplace-domain memory kernel.
pub fn memory_kernel(blocks: &SuperoperatorBlocks, s: Complex64) -> Result<CMatrix> {
    let d = blocks.m_p.nrows();
    let nc = blocks.m_c.nrows();
    if nc == 0 {
        return Ok(CMatrix::zeros(d, d));
    }
    let eigs = eigenvalues(&blocks.m_c);
    if let Some((ev, dist)) = nearest_eigenvalue(&eigs, s) {
        if dist <= singular_tol(&blocks.m_c) {
            return Err(Error::SingularResolvent { s, eigenvalue: ev });
        }
    }
    let shifted = CMatrix::identity(nc, nc) * s - &blocks.m_c;
    let x = solve(&shifted, &blocks.m_cp).ok_or(Error::SingularResolvent { s, eigenvalue: s })?;
    Ok(&blocks.m_pc * x)
}

/// Stationary state of a full Liouvillian.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub rho: LiouvilleVector,
    /// `||M vec(rho)||_2`
    pub residual: f64,
    /// `|lambda_2| / |lambda_1|` of the generator spectrum.
    pub gap_ratio: f64,
}

/// Stationary populations of an effective rate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSteadyState {
    pub populations: DVector<f64>,
    pub residual: f64,
    pub gap_ratio: f64,
}

fn unique_null_vector(m: &CMatrix) -> Result<(CVector, f64)> {
    let mut mags: Vec<f64> = eigenvalues(m).iter().map(|z| z.norm()).collect();
    mags.sort_by(f64::total_cmp);
    let (smallest, second) = match mags.as_slice() {
        [] => {
            return Err(Error::NonUniqueSteadyState {
                smallest: 0.0,
                second: 0.0,
            })
        }
        [a] => (*a, f64::INFINITY),
        [a, b, ..] => (*a, *b),
    };
    let ratio = if smallest == 0.0 {
        f64::INFINITY
    } else {
        second / smallest
    };
    if !(second > UNIQUENESS_RATIO * smallest) || second <= singular_tol(m) {
        return Err(Error::NonUniqueSteadyState { smallest, second });
    }
    let (v, _) = null_vector(m);
    Ok((v, ratio))
}

/// Null vector of `M`, normalized to unit trace and Hermitized.
pub fn steady_state(m: &Superoperator) -> Result<SteadyState> {
    let basis = m.basis();
    let (v, gap_ratio) = unique_null_vector(m.matrix())?;
    let trace: Complex64 = v.rows(0, basis.dim()).sum();
    if trace.norm() < 1e-300 {
        return Err(Error::NonUniqueSteadyState {
            smallest: 0.0,
            second: 0.0,
        });
    }
    let v = v.map(|z| z / trace);
    let rho = LiouvilleVector::from_entries(basis, v)?.devectorize();
    let rho = (&rho + rho.adjoint()) * re(0.5);
    let rho = crate::liouville::vectorize(&rho, basis)?;
    let residual = (m.matrix() * rho.entries()).norm();
    Ok(SteadyState {
        rho,
        residual,
        gap_ratio,
    })
}

/// `e^{M t} |rho0>>` via a dense Padé scaling-and-squaring exponential.
pub fn propagate(m: &Superoperator, rho0: &LiouvilleVector, t: f64) -> Result<LiouvilleVector> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "propagation time must be finite and >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        if rho0.basis() != m.basis() {
            return Err(Error::DimensionMismatch {
                expected: m.basis().liouville_dim(),
                found: rho0.basis().liouville_dim(),
            });
        }
        return Ok(rho0.clone());
    }
    let g = Superoperator::from_matrix(m.basis(), expm(&(m.matrix() * re(t))))?;
    g.apply(rho0)
}

/// How well coherences and populations separate in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimescaleSeparation {
    /// smallest `-Re(lambda)` over the coherence block
    pub slowest_coherence_decay: f64,
    /// largest `-Re(lambda)` over the population generator
    pub fastest_population_relaxation: f64,
}

impl TimescaleSeparation {
    pub fn ratio(&self) -> f64 {
        self.slowest_coherence_decay / self.fastest_population_relaxation
    }
}

pub fn timescale_separation(blocks: &SuperoperatorBlocks, l: &EffectiveRateMatrix) -> TimescaleSeparation {
    let coh = eigenvalues(&blocks.m_c)
        .iter()
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    let pop = eigenvalues(l.matrix()).iter().map(|z| -z.re).fold(0.0, f64::max);
    TimescaleSeparation {
        slowest_coherence_decay: coh,
        fastest_population_relaxation: pop,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::liouville::{build_liouvillian, diagonal_hamiltonian, vectorize, DissipationChannel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, d: usize) -> Superoperator {
        let b = HilbertBasis::numbered(d).unwrap();
        let a = CMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = (&a + a.adjoint()) * re(0.5);
        let mut chans = Vec::new();
        for lo in 0..d {
            for up in lo + 1..d {
                chans.push(
                    DissipationChannel::between(
                        &b,
                        lo,
                        up,
                        rng.random_range(0.1..1.0),
                        rng.random_range(0.1..1.0),
                        1.0,
                    )
                    .unwrap(),
                );
            }
        }
        build_liouvillian(&b, &h, &chans).unwrap()
    }

    fn random_density(rng: &mut ChaCha8Rng, b: &HilbertBasis) -> LiouvilleVector {
        let d = b.dim();
        let a = CMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let rho = &a * a.adjoint();
        let tr = rho.trace();
        vectorize(&(rho / tr), b).unwrap()
    }

    #[test]
    fn coherence_map_residual_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 2..6 {
            let blocks = random_model(&mut rng, d).partition();
            let k = coherence_map(&blocks).unwrap();
            assert!(k.residual() <= 1e-12, "residual {}", k.residual());
            let direct = max_abs(&(&blocks.m_c * k.matrix() + &blocks.m_cp));
            assert!(direct <= 1e-12);
        }
    }

    #[test]
    fn coherence_map_vanishes_without_coupling() {
        let b = HilbertBasis::numbered(2).unwrap();
        let ch = DissipationChannel::between(&b, 0, 1, 0.2, 0.5, 1.0).unwrap();
        let m = build_liouvillian(&b, &diagonal_hamiltonian(&[0.0, 1.0]), &[ch]).unwrap();
        let blocks = m.partition();
        assert_eq!(max_abs(&blocks.m_cp), 0.0);
        assert_eq!(max_abs(coherence_map(&blocks).unwrap().matrix()), 0.0);
        let l = effective_rate_matrix(&blocks).unwrap();
        assert_eq!(l.matrix(), &blocks.m_p);
    }

    #[test]
    fn non_decaying_coherence_is_reported() {
        // pure Hamiltonian dynamics with a degenerate pair: a zero coherence eigenvalue
        let b = HilbertBasis::numbered(2).unwrap();
        let m = build_liouvillian(&b, &diagonal_hamiltonian(&[0.3, 0.3]), &[]).unwrap();
        match coherence_map(&m.partition()) {
            Err(Error::NonDecayingCoherence { eigenvalue }) => assert!(eigenvalue.norm() < 1e-12),
            other => panic!("expected NonDecayingCoherence, got {other:?}"),
        }
    }

    #[test]
    fn effective_rates_conserve_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for d in 2..6 {
            let m = random_model(&mut rng, d);
            assert!(m.trace_defect() <= 1e-12);
            let l = effective_rate_matrix(&m.partition()).unwrap();
            assert!(l.column_sum_defect() <= 1e-12);
            assert!(l.max_imag() <= 1e-10, "imag {}", l.max_imag());
        }
    }

    #[test]
    fn memory_kernel_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let blocks = random_model(&mut rng, 3).partition();
        let far = memory_kernel(&blocks, re(1e8)).unwrap();
        assert!(far.norm() <= 1e-6);
        let k0 = memory_kernel(&blocks, re(0.0)).unwrap();
        let l = effective_rate_matrix(&blocks).unwrap();
        assert!(max_abs(&(k0 + &blocks.m_p - l.matrix())) <= 1e-12);
    }

    #[test]
    fn memory_kernel_matches_eigendecomposition() {
        // diagonalizable M_c = V diag(lambda) V^{-1}  =>  (s - M_c)^{-1} = V diag(1/(s - lambda)) V^{-1}
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let blocks = random_model(&mut rng, 3).partition();
        let eigs = eigenvalues(&blocks.m_c);
        let nc = blocks.m_c.nrows();
        // eigenvectors by inverse iteration on each eigenvalue
        let mut v = CMatrix::zeros(nc, nc);
        for (j, &lam) in eigs.iter().enumerate() {
            let shifted = &blocks.m_c - CMatrix::identity(nc, nc) * (lam + c(1e-10, 1e-10));
            let lu = shifted.lu();
            let mut x = CVector::from_element(nc, re(1.0));
            for _ in 0..3 {
                x = lu.solve(&x).unwrap();
                x /= re(x.norm());
            }
            v.set_column(j, &x);
        }
        let v_inv = v.clone().try_inverse().unwrap();
        for w in [0.0, 0.5, 1.3, -2.0] {
            let s = c(0.0, w);
            let diag = CVector::from_iterator(nc, eigs.iter().map(|&l| re(1.0) / (s - l)));
            let res = &v * CMatrix::from_diagonal(&diag) * &v_inv;
            let oracle = &blocks.m_pc * res * &blocks.m_cp;
            let got = memory_kernel(&blocks, s).unwrap();
            assert!(max_abs(&(got - oracle)) <= 1e-8);
        }
    }

    #[test]
    fn memory_kernel_singular_point_is_reported() {
        let b = HilbertBasis::numbered(2).unwrap();
        let ch = DissipationChannel::between(&b, 0, 1, 0.0, 0.4, 1.0).unwrap();
        let m = build_liouvillian(&b, &diagonal_hamiltonian(&[0.0, 1.0]), &[ch]).unwrap();
        let blocks = m.partition();
        // coherence eigenvalues are -0.2 +- i
        let err = memory_kernel(&blocks, c(-0.2, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SingularResolvent { .. }));
    }

    #[test]
    fn two_state_balance() {
        let b = HilbertBasis::numbered(2).unwrap();
        let (up, down) = (0.3, 1.1);
        let rates = DMatrix::from_row_slice(2, 2, &[-up, down, up, -down]);
        let l = EffectiveRateMatrix::from_rates(&b, &rates).unwrap();
        let ss = l.stationary_populations().unwrap();
        assert!((ss.populations[0] - down / (up + down)).abs() < 1e-14);
        assert!((ss.populations[1] - up / (up + down)).abs() < 1e-14);
    }

    #[test]
    fn from_rates_rejects_non_conservative_matrix() {
        let b = HilbertBasis::numbered(2).unwrap();
        let rates = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -0.5]);
        assert!(matches!(
            EffectiveRateMatrix::from_rates(&b, &rates),
            Err(Error::NotConservative { .. })
        ));
    }

    #[test]
    fn steady_state_quality_and_k_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for d in 2..6 {
            let m = random_model(&mut rng, d);
            let ss = steady_state(&m).unwrap();
            assert!(ss.residual <= 1e-10);
            assert!((ss.rho.trace() - re(1.0)).norm() <= 1e-12);
            assert!(ss.rho.physicality_defect() <= 1e-10);
            let blocks = m.partition();
            let k = coherence_map(&blocks).unwrap();
            let lifted = k.matrix() * ss.rho.populations();
            assert!((lifted - ss.rho.coherences()).norm() <= 1e-10);
            // L-consistency
            let l = effective_rate_matrix_with(&blocks, &k).unwrap();
            let pss = l.stationary_populations().unwrap();
            assert!((pss.populations - ss.rho.real_populations()).norm() <= 1e-10);
        }
    }

    #[test]
    fn degenerate_steady_state_is_rejected() {
        // two disconnected decaying ladders share no population: two stationary states
        let b = HilbertBasis::numbered(4).unwrap();
        let chans = vec![
            DissipationChannel::between(&b, 0, 1, 0.0, 1.0, 1.0).unwrap(),
            DissipationChannel::between(&b, 2, 3, 0.0, 1.0, 1.0).unwrap(),
        ];
        let m = build_liouvillian(&b, &diagonal_hamiltonian(&[0.0, 1.0, 0.2, 1.4]), &chans).unwrap();
        assert!(matches!(steady_state(&m), Err(Error::NonUniqueSteadyState { .. })));
    }

    #[test]
    fn propagation_identity_semigroup_and_long_time_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let m = random_model(&mut rng, 3);
        let rho0 = random_density(&mut rng, m.basis());
        assert_eq!(propagate(&m, &rho0, 0.0).unwrap(), rho0);
        assert!(propagate(&m, &rho0, -1.0).is_err());
        for _ in 0..5 {
            let (t1, t2) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
            let two = propagate(&m, &propagate(&m, &rho0, t1).unwrap(), t2).unwrap();
            let one = propagate(&m, &rho0, t1 + t2).unwrap();
            assert!((two.entries() - one.entries()).norm() <= 1e-10);
        }
        let ss = steady_state(&m).unwrap();
        let late = propagate(&m, &rho0, 1e4).unwrap();
        assert!((late.entries() - ss.rho.entries()).norm() <= 1e-8);
    }

    #[test]
    fn propagation_preserves_physicality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let m = random_model(&mut rng, 3);
            let rho0 = random_density(&mut rng, m.basis());
            for t in [0.1, 1.0, 5.0, 30.0] {
                let rho = propagate(&m, &rho0, t).unwrap();
                assert!(
                    rho.physicality_defect() <= 1e-10,
                    "t = {t}: {}",
                    rho.physicality_defect()
                );
            }
        }
    }

    #[test]
    fn timescale_diagnostic_is_positive_for_damped_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let m = random_model(&mut rng, 3);
        let blocks = m.partition();
        let l = effective_rate_matrix(&blocks).unwrap();
        let ts = timescale_separation(&blocks, &l);
        assert!(ts.slowest_coherence_decay > 0.0 && ts.fastest_population_relaxation > 0.0);
        assert!(ts.ratio().is_finite());
    }
}
