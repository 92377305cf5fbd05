//! Linear response and fluctuation spectra from a Liouvillian.
//!
//! Frequency-domain quantities use the resolvent
//! `G(w) = int_0^inf e^{Mt} e^{iwt} dt = -(M + iw - eps)^{-1}`,
//! evaluated by dense LU solves. The response to a probe coupled through `V`
//! and read out through `Omega` is `R(w) = -i <<1| Omega_L G(w) V_- |rho>>`.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flux::{is_detailed_balanced, SplitOperators};
use crate::linalg::{
    eigenvalues, expm, hermiticity_defect, max_abs, max_abs_vec, nearest_eigenvalue, re, CMatrix, CVector, I,
};
use crate::liouville::{
    commutator_superop, expectation, left_mult, HilbertBasis, LiouvilleVector, Superoperator, SuperoperatorBlocks,
};
use crate::reduction::{effective_rate_matrix, steady_state, CoherenceMap, EffectiveRateMatrix};

/// Regularization used when the resolvent hits the stationary mode.
pub const FALLBACK_EPS: f64 = 1e-8;

/// Tolerance on `||M rho||` for a state to count as stationary.
pub const STATIONARY_TOL: f64 = 1e-10;

/// Observable `Omega` read out after a perturbation through `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    observable: CMatrix,
    coupling: CMatrix,
}

impl Probe {
    pub fn new(observable: CMatrix, coupling: CMatrix) -> Result<Self> {
        for op in [&observable, &coupling] {
            let defect = hermiticity_defect(op);
            if defect > 1e-12 * max_abs(op).max(1.0) {
                return Err(Error::NonHermitian { deviation: defect });
            }
        }
        if observable.shape() != coupling.shape() {
            return Err(Error::DimensionMismatch {
                expected: observable.nrows(),
                found: coupling.nrows(),
            });
        }
        Ok(Self { observable, coupling })
    }

    /// `Omega = V`.
    pub fn dipole(v: CMatrix) -> Result<Self> {
        Self::new(v.clone(), v)
    }

    pub fn observable(&self) -> &CMatrix {
        &self.observable
    }

    pub fn coupling(&self) -> &CMatrix {
        &self.coupling
    }
}

/// `M` together with its spectrum, for repeated resolvent evaluations.
#[derive(Debug, Clone)]
pub struct Resolvent {
    m: Superoperator,
    eigenvalues: Vec<Complex64>,
    tol: f64,
}

impl Resolvent {
    pub fn new(m: &Superoperator) -> Self {
        Self {
            eigenvalues: eigenvalues(m.matrix()),
            tol: 1e-12 * max_abs(m.matrix()).max(1.0),
            m: m.clone(),
        }
    }

    pub fn generator(&self) -> &Superoperator {
        &self.m
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// Generator eigenvalue making `M + iw - eps` singular, if any.
    fn singular_at(&self, omega: f64, eps: f64) -> Option<Complex64> {
        let s = Complex64::new(eps, -omega);
        nearest_eigenvalue(&self.eigenvalues, s)
            .filter(|&(_, dist)| dist <= self.tol)
            .map(|(ev, _)| ev)
    }

    fn shifted(&self, omega: f64, eps: f64) -> CMatrix {
        let n = self.m.matrix().nrows();
        self.m.matrix() + CMatrix::identity(n, n) * Complex64::new(-eps, omega)
    }

    /// `-(M + iw - eps)^{-1}`.
    pub fn matrix(&self, omega: f64, eps: f64) -> Result<CMatrix> {
        if let Some(eigenvalue) = self.singular_at(omega, eps) {
            return Err(Error::SingularResolvent {
                s: Complex64::new(eps, -omega),
                eigenvalue,
            });
        }
        let inv = self.shifted(omega, eps).try_inverse().ok_or(Error::SingularResolvent {
            s: Complex64::new(eps, -omega),
            eigenvalue: Complex64::new(eps, -omega),
        })?;
        Ok(-inv)
    }

    /// `G(w) X` for the columns of `X`.
    ///
    /// When `w` hits the stationary mode and every column is traceless (so has
    /// no stationary component), the solve is retried with `FALLBACK_EPS`.
    pub fn apply(&self, omega: f64, eps: f64, sources: &CMatrix) -> Result<CMatrix> {
        let eps = match self.singular_at(omega, eps) {
            None => eps,
            Some(ev) if ev.norm() <= self.tol && self.traceless(sources) => {
                log::warn!(
                    "resolvent at w = {omega} meets the stationary mode; regularizing with eps = {FALLBACK_EPS}"
                );
                eps.max(FALLBACK_EPS)
            }
            Some(eigenvalue) => {
                return Err(Error::SingularResolvent {
                    s: Complex64::new(eps, -omega),
                    eigenvalue,
                })
            }
        };
        let s = Complex64::new(eps, -omega);
        let x = self
            .shifted(omega, eps)
            .lu()
            .solve(sources)
            .ok_or(Error::SingularResolvent { s, eigenvalue: s })?;
        Ok(-x)
    }

    fn traceless(&self, sources: &CMatrix) -> bool {
        let d = self.m.basis().dim();
        sources.column_iter().all(|col| {
            let tr: Complex64 = col.rows(0, d).sum();
            tr.norm() <= 1e-12 * col.camax().max(1e-300)
        })
    }
}

/// `G(w)` as a superoperator; `eps = 0` requests the unregularized resolvent.
pub fn green_function(m: &Superoperator, omega: f64, eps: f64) -> Result<Superoperator> {
    Superoperator::from_matrix(m.basis(), Resolvent::new(m).matrix(omega, eps)?)
}

fn check_stationary(m: &Superoperator, rho: &LiouvilleVector) -> Result<()> {
    if rho.basis() != m.basis() {
        return Err(Error::DimensionMismatch {
            expected: m.basis().liouville_dim(),
            found: rho.basis().liouville_dim(),
        });
    }
    let residual = max_abs_vec(&(m.matrix() * rho.entries()));
    if residual > STATIONARY_TOL * max_abs(m.matrix()).max(1.0) {
        return Err(Error::NonStationary { residual });
    }
    Ok(())
}

fn check_probe(probe: &Probe, basis: &HilbertBasis) -> Result<()> {
    if probe.coupling.nrows() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: probe.coupling.nrows(),
        });
    }
    Ok(())
}

/// `V_- |rho>> = |[V, rho]>>`.
fn commutator_source(probe: &Probe, rho: &CVector, basis: &HilbertBasis) -> Result<CVector> {
    Ok(commutator_superop(&probe.coupling, basis)?.matrix() * rho)
}

/// `R(t) = -i <<1| Omega_L e^{Mt} V_- |rho>>`.
pub fn linear_response_time(probe: &Probe, m: &Superoperator, rho_ss: &LiouvilleVector, t: f64) -> Result<Complex64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "response time must be finite and >= 0, got {t}"
        )));
    }
    check_stationary(m, rho_ss)?;
    let basis = m.basis();
    check_probe(probe, basis)?;
    let src = commutator_source(probe, rho_ss.entries(), basis)?;
    let evolved = expm(&(m.matrix() * re(t))) * src;
    Ok(-I * expectation(&probe.observable, &evolved, basis))
}

/// Response on a frequency grid, with the optional equilibrium/nonequilibrium split.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpectrum {
    pub omega: Vec<f64>,
    pub r_full: Vec<Complex64>,
    pub r_eq_term: Option<Vec<Complex64>>,
    pub r_ne_term: Option<Vec<Complex64>>,
}

pub const CSV_HEADER: &str = "omega,re_full,im_full,im_eq,im_ne";

impl ResponseSpectrum {
    /// `Im R(w)`; negative values are absorption.
    pub fn transmission(&self) -> Vec<f64> {
        self.r_full.iter().map(|z| z.im).collect()
    }

    /// `max_w |Im R_full - Im(R_eq + R_ne)| / max_w |Im R_full|`.
    pub fn split_error(&self) -> Option<f64> {
        let (eq, ne) = (self.r_eq_term.as_ref()?, self.r_ne_term.as_ref()?);
        let scale = self.r_full.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let err = self
            .r_full
            .iter()
            .zip(eq.iter().zip(ne))
            .map(|(f, (a, b))| (f.im - (a + b).im).abs())
            .fold(0.0, f64::max);
        Some(if scale > 0.0 { err / scale } else { err })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(96 * (self.omega.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        let im =
            |v: &Option<Vec<Complex64>>, i: usize| v.as_ref().map(|v| format!("{:.16e}", v[i].im)).unwrap_or_default();
        for (i, (w, r)) in self.omega.iter().zip(&self.r_full).enumerate() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{},{}\n",
                w,
                r.re,
                r.im,
                im(&self.r_eq_term, i),
                im(&self.r_ne_term, i)
            ));
        }
        out
    }
}

fn sweep<T: Send>(grid: &[f64], f: impl Fn(f64) -> Result<T> + Sync) -> Result<Vec<T>> {
    grid.par_iter().map(|&w| f(w)).collect()
}

/// `R(w) = -i <<1| Omega_L G(w) V_- |rho>>` on a grid, data-parallel over `w`.
pub fn linear_response_freq(
    probe: &Probe,
    m: &Superoperator,
    rho_ss: &LiouvilleVector,
    omega_grid: &[f64],
) -> Result<ResponseSpectrum> {
    check_stationary(m, rho_ss)?;
    let basis = m.basis();
    check_probe(probe, basis)?;
    let src = commutator_source(probe, rho_ss.entries(), basis)?;
    let src = CMatrix::from_columns(&[src]);
    let res = Resolvent::new(m);
    let r_full = sweep(omega_grid, |w| {
        let x = res.apply(w, 0.0, &src)?;
        Ok(-I * expectation(&probe.observable, &x.column(0).into_owned(), basis))
    })?;
    Ok(ResponseSpectrum {
        omega: omega_grid.to_vec(),
        r_full,
        r_eq_term: None,
        r_ne_term: None,
    })
}

/// Full response together with its detailed-balance and curl-flux parts,
///
/// `r_eq(w) = i <<1| Omega_L G(w) V_- W S_D |p>>` and
/// `r_ne(w) = i <<1| Omega_L G(w) V_- W V_ss |p>>`, with `W p = (p, K p)`.
/// Since `S_D + V_ss = -1` at stationarity the two add up to `R(w)`.
pub fn response_split(
    probe: &Probe,
    blocks: &SuperoperatorBlocks,
    l: &EffectiveRateMatrix,
    k: &CoherenceMap,
    populations: &DVector<f64>,
    split: &SplitOperators,
    omega_grid: &[f64],
) -> Result<ResponseSpectrum> {
    let basis = &blocks.basis;
    let d = basis.dim();
    check_probe(probe, basis)?;
    if l.basis() != basis || populations.len() != d || split.s_d.len() != d || split.v_ss.len() != d {
        return Err(Error::ModelMismatch("components live on different bases".into()));
    }
    if k.matrix().shape() != blocks.m_cp.shape() {
        return Err(Error::ModelMismatch("coherence map has the wrong shape".into()));
    }
    let scale = max_abs(&blocks.m_c).max(max_abs(&blocks.m_cp)).max(1.0);
    let k_defect = max_abs(&(&blocks.m_c * k.matrix() + &blocks.m_cp));
    if k_defect > 1e-10 * scale {
        return Err(Error::ModelMismatch(format!(
            "coherence map does not solve M_c K + M_cp = 0 ({k_defect:.3e})"
        )));
    }
    let l_defect = max_abs(&(&blocks.m_p + &blocks.m_pc * k.matrix() - l.matrix()));
    if l_defect > 1e-10 * scale {
        return Err(Error::ModelMismatch(format!(
            "rate matrix does not match the blocks ({l_defect:.3e})"
        )));
    }
    let p = populations.map(re);
    let stat = max_abs_vec(&(l.matrix() * &p));
    if stat > STATIONARY_TOL * max_abs(l.matrix()).max(1.0) {
        return Err(Error::NonStationary { residual: stat });
    }
    let completeness = split.completeness_defect();
    if completeness > 1e-8 {
        return Err(Error::ModelMismatch(format!(
            "split operators do not sum to -1 ({completeness:.3e})"
        )));
    }

    let m = blocks.assemble();
    let commutator = commutator_superop(&probe.coupling, basis)?;
    let lifted = |q: &CVector| -> Result<CVector> { Ok(commutator.matrix() * k.lift(basis, q)?.entries()) };
    let s_p = p.component_mul(&split.s_d.map(re));
    let v_p = p.component_mul(&split.v_ss.map(re));
    let sources = CMatrix::from_columns(&[lifted(&p)?, lifted(&s_p)?, lifted(&v_p)?]);
    let omega_l = left_mult(&probe.observable, basis)?;
    let res = Resolvent::new(&m);

    let values = sweep(omega_grid, |w| {
        let x = res.apply(w, 0.0, &sources)?;
        let read = |j: usize| -> Complex64 { (omega_l.matrix() * x.column(j)).rows(0, d).sum() };
        Ok((-I * read(0), I * read(1), I * read(2)))
    })?;
    let (mut r_full, mut r_eq, mut r_ne) = (Vec::new(), Vec::new(), Vec::new());
    for (f, a, b) in values {
        r_full.push(f);
        r_eq.push(a);
        r_ne.push(b);
    }
    Ok(ResponseSpectrum {
        omega: omega_grid.to_vec(),
        r_full,
        r_eq_term: Some(r_eq),
        r_ne_term: Some(r_ne),
    })
}

/// `S(w) = <<1| V_L G(w) V_L |rho>>`, the one-sided transform of `<V(t) V(0)>`.
///
/// A nonzero `<V>` leaves a stationary part `<V>^2 i / (w + i eps)`.
pub fn fluctuation_spectrum(
    v: &CMatrix,
    m: &Superoperator,
    rho_ss: &LiouvilleVector,
    omega: f64,
    eps: f64,
) -> Result<Complex64> {
    check_stationary(m, rho_ss)?;
    fluctuation_with(&Resolvent::new(m), v, rho_ss, omega, eps)
}

fn fluctuation_with(res: &Resolvent, v: &CMatrix, rho_ss: &LiouvilleVector, omega: f64, eps: f64) -> Result<Complex64> {
    let basis = res.m.basis();
    let src = left_mult(v, basis)?.matrix() * rho_ss.entries();
    let x = res.apply(omega, eps, &CMatrix::from_columns(&[src]))?;
    Ok(expectation(v, &x.column(0).into_owned(), basis))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdrReport {
    pub omega: Vec<f64>,
    /// `coth(w/2T) * chi''(w)` with `chi'' = -Im R`.
    pub lhs: Vec<f64>,
    /// `Re[S(w) + S(-w)]`.
    pub rhs: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_residual: f64,
    pub skipped: Vec<f64>,
}

impl FdrReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,lhs,rhs,residual\n");
        for i in 0..self.omega.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.omega[i], self.lhs[i], self.rhs[i], self.residual[i]
            ));
        }
        out
    }
}

/// Compare both sides of the coth fluctuation-dissipation relation for `Omega = V`.
///
/// Refuses generators whose steady state breaks detailed balance. Grid points
/// with `w = 0` sit on the coth pole and are skipped.
pub fn check_equilibrium_fdr(
    v: &CMatrix,
    m: &Superoperator,
    temperature: f64,
    omega_grid: &[f64],
) -> Result<FdrReport> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let ss = steady_state(m)?;
    let blocks = m.partition();
    let l = effective_rate_matrix(&blocks)?;
    let pops = ss.rho.real_populations();
    let balance = is_detailed_balanced(&l, &pops, 1e-10 * max_abs(l.matrix()).max(1.0));
    if !balance.balanced {
        return Err(Error::NotDetailedBalanced {
            violation: balance.max_violation,
        });
    }
    let probe = Probe::dipole(v.clone())?;
    check_probe(&probe, m.basis())?;
    let (kept, skipped): (Vec<f64>, Vec<f64>) = omega_grid.iter().partition(|w| **w != 0.0);
    if !skipped.is_empty() {
        log::warn!("skipping w = 0 in the FDR check (coth pole)");
    }
    let res = Resolvent::new(m);
    let src = CMatrix::from_columns(&[commutator_source(&probe, ss.rho.entries(), m.basis())?]);
    let rows = sweep(&kept, |w| {
        let x = res.apply(w, 0.0, &src)?;
        let r = -I * expectation(v, &x.column(0).into_owned(), m.basis());
        let lhs = -r.im / (w / (2.0 * temperature)).tanh();
        let s_sum = fluctuation_with(&res, v, &ss.rho, w, 0.0)? + fluctuation_with(&res, v, &ss.rho, -w, 0.0)?;
        Ok((lhs, s_sum.re))
    })?;
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let residual: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).collect();
    let max_residual = residual.iter().copied().fold(0.0, f64::max);
    Ok(FdrReport {
        omega: kept,
        lhs,
        rhs,
        residual,
        max_residual,
        skipped,
    })
}
