//! Liouville-space representation of density matrices and superoperators.
//!
//! A `dim x dim` operator `A` is stored as a vector `|A>>` of length `dim²` in
//! *population-first* order:
//!
//! * entries `0..dim` are the populations `A_nn` in basis-label order;
//! * the remaining `dim² - dim` entries are the coherences `A_nm`, `n != m`,
//!   in row-major `(n, m)` order, skipping the diagonal.
//!
//! For three levels `(g, e1, e2)` this gives
//! `gg, e1e1, e2e2, g·e1, g·e2, e1·g, e1·e2, e2·g, e2·e1`.
//! The inner product is `<<A|B>> = Tr(A^H B)`.

use std::collections::HashSet;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermiticity_defect, max_abs, re, CMatrix, CVector, I};

/// Ordered set of named basis states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertBasis {
    labels: Vec<String>,
}

impl HilbertBasis {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidBasis("basis must contain at least one state".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidBasis(format!("duplicate label '{l}'")));
            }
        }
        Ok(Self { labels })
    }

    /// Basis labelled `0, 1, ..., dim-1`.
    pub fn numbered(dim: usize) -> Result<Self> {
        Self::new((0..dim).map(|i| i.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Liouville-space dimension `dim²`.
    pub fn liouville_dim(&self) -> usize {
        self.dim() * self.dim()
    }

    pub fn coherence_count(&self) -> usize {
        self.liouville_dim() - self.dim()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Liouville index of the element `(n, m)`.
    pub fn pair_index(&self, n: usize, m: usize) -> usize {
        let d = self.dim();
        debug_assert!(n < d && m < d);
        if n == m {
            n
        } else {
            d + n * (d - 1) + if m < n { m } else { m - 1 }
        }
    }

    /// Inverse of [`pair_index`](Self::pair_index).
    pub fn pair_at(&self, idx: usize) -> (usize, usize) {
        let d = self.dim();
        if idx < d {
            return (idx, idx);
        }
        let k = idx - d;
        let n = k / (d - 1);
        let r = k % (d - 1);
        let m = if r < n { r } else { r + 1 };
        (n, m)
    }

    /// Index of coherence `(n, m)` within the coherence sector.
    pub fn coherence_index(&self, n: usize, m: usize) -> usize {
        assert_ne!(n, m, "populations have no coherence index");
        self.pair_index(n, m) - self.dim()
    }

    fn check_operator(&self, op: &CMatrix) -> Result<()> {
        if !op.is_square() {
            return Err(Error::DimensionMismatch {
                expected: op.nrows(),
                found: op.ncols(),
            });
        }
        if op.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: op.nrows(),
            });
        }
        Ok(())
    }

    /// Matrix unit `|n><m|`.
    pub fn matrix_unit(&self, n: usize, m: usize) -> CMatrix {
        let mut u = CMatrix::zeros(self.dim(), self.dim());
        u[(n, m)] = re(1.0);
        u
    }
}

/// A vectorized operator in population-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleVector {
    basis: HilbertBasis,
    entries: CVector,
}

impl LiouvilleVector {
    pub fn from_entries(basis: &HilbertBasis, entries: CVector) -> Result<Self> {
        if entries.len() != basis.liouville_dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.liouville_dim(),
                found: entries.len(),
            });
        }
        Ok(Self {
            basis: basis.clone(),
            entries,
        })
    }

    /// Assemble from a population block and a coherence block.
    pub fn from_parts(basis: &HilbertBasis, populations: &CVector, coherences: &CVector) -> Result<Self> {
        if populations.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: populations.len(),
            });
        }
        if coherences.len() != basis.coherence_count() {
            return Err(Error::DimensionMismatch {
                expected: basis.coherence_count(),
                found: coherences.len(),
            });
        }
        let mut entries = CVector::zeros(basis.liouville_dim());
        entries.rows_mut(0, basis.dim()).copy_from(populations);
        entries
            .rows_mut(basis.dim(), basis.coherence_count())
            .copy_from(coherences);
        Self::from_entries(basis, entries)
    }

    /// `|1>> = sum_n |nn>>`.
    pub fn identity(basis: &HilbertBasis) -> Self {
        let mut entries = CVector::zeros(basis.liouville_dim());
        for n in 0..basis.dim() {
            entries[n] = re(1.0);
        }
        Self {
            basis: basis.clone(),
            entries,
        }
    }

    pub fn basis(&self) -> &HilbertBasis {
        &self.basis
    }

    pub fn entries(&self) -> &CVector {
        &self.entries
    }

    pub fn into_entries(self) -> CVector {
        self.entries
    }

    pub fn populations(&self) -> CVector {
        self.entries.rows(0, self.basis.dim()).into_owned()
    }

    /// Population entries as reals (imaginary parts dropped).
    pub fn real_populations(&self) -> nalgebra::DVector<f64> {
        self.entries.rows(0, self.basis.dim()).map(|z| z.re)
    }

    pub fn coherences(&self) -> CVector {
        self.entries
            .rows(self.basis.dim(), self.basis.coherence_count())
            .into_owned()
    }

    /// Entry for the matrix element `(n, m)`.
    pub fn element(&self, n: usize, m: usize) -> Complex64 {
        self.entries[self.basis.pair_index(n, m)]
    }

    /// Sum of the population entries.
    pub fn trace(&self) -> Complex64 {
        self.entries.rows(0, self.basis.dim()).sum()
    }

    pub fn devectorize(&self) -> CMatrix {
        let d = self.basis.dim();
        let mut rho = CMatrix::zeros(d, d);
        for (idx, z) in self.entries.iter().enumerate() {
            let (n, m) = self.basis.pair_at(idx);
            rho[(n, m)] = *z;
        }
        rho
    }

    /// Largest violation among Hermiticity, unit trace and non-negative populations.
    pub fn physicality_defect(&self) -> f64 {
        let rho = self.devectorize();
        let herm = hermiticity_defect(&rho);
        let tr = (self.trace() - re(1.0)).norm();
        let neg = self
            .populations()
            .iter()
            .map(|p| (-p.re).max(p.im.abs()))
            .fold(0.0, f64::max);
        herm.max(tr).max(neg)
    }
}

/// Vectorize a square matrix in population-first order.
pub fn vectorize(rho: &CMatrix, basis: &HilbertBasis) -> Result<LiouvilleVector> {
    basis.check_operator(rho)?;
    let mut entries = CVector::zeros(basis.liouville_dim());
    for n in 0..basis.dim() {
        for m in 0..basis.dim() {
            entries[basis.pair_index(n, m)] = rho[(n, m)];
        }
    }
    Ok(LiouvilleVector {
        basis: basis.clone(),
        entries,
    })
}

/// `<<a|b>> = Tr(a^H b)`.
pub fn inner_product(a: &LiouvilleVector, b: &LiouvilleVector) -> Result<Complex64> {
    if a.basis != b.basis {
        return Err(Error::DimensionMismatch {
            expected: a.basis.liouville_dim(),
            found: b.basis.liouville_dim(),
        });
    }
    Ok(a.entries.dotc(&b.entries))
}

/// `Tr(op · X)` for a vectorized `X`, i.e. `<<1| op_L |X>>`.
pub fn expectation(op: &CMatrix, x: &CVector, basis: &HilbertBasis) -> Complex64 {
    let d = basis.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for n in 0..d {
        for m in 0..d {
            let o = op[(m, n)];
            if o != Complex64::new(0.0, 0.0) {
                acc += o * x[basis.pair_index(n, m)];
            }
        }
    }
    acc
}

/// A linear map on Liouville space, `dim² x dim²`, in population-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    basis: HilbertBasis,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn from_matrix(basis: &HilbertBasis, matrix: CMatrix) -> Result<Self> {
        let n = basis.liouville_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self {
            basis: basis.clone(),
            matrix,
        })
    }

    pub fn zeros(basis: &HilbertBasis) -> Self {
        let n = basis.liouville_dim();
        Self {
            basis: basis.clone(),
            matrix: CMatrix::zeros(n, n),
        }
    }

    pub fn basis(&self) -> &HilbertBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn apply(&self, v: &LiouvilleVector) -> Result<LiouvilleVector> {
        if v.basis != self.basis {
            return Err(Error::DimensionMismatch {
                expected: self.basis.liouville_dim(),
                found: v.basis.liouville_dim(),
            });
        }
        Ok(LiouvilleVector {
            basis: self.basis.clone(),
            entries: &self.matrix * &v.entries,
        })
    }

    /// `max_col |<<1| M|col>>|`; zero for trace-preserving generators.
    pub fn trace_defect(&self) -> f64 {
        let d = self.basis.dim();
        (0..self.matrix.ncols())
            .map(|j| (0..d).map(|n| self.matrix[(n, j)]).sum::<Complex64>().norm())
            .fold(0.0, f64::max)
    }

    pub fn partition(&self) -> SuperoperatorBlocks {
        let d = self.basis.dim();
        let nc = self.basis.coherence_count();
        SuperoperatorBlocks {
            basis: self.basis.clone(),
            m_p: self.matrix.view((0, 0), (d, d)).into_owned(),
            m_pc: self.matrix.view((0, d), (d, nc)).into_owned(),
            m_cp: self.matrix.view((d, 0), (nc, d)).into_owned(),
            m_c: self.matrix.view((d, d), (nc, nc)).into_owned(),
        }
    }
}

impl std::ops::Add for &Superoperator {
    type Output = Superoperator;
    fn add(self, rhs: &Superoperator) -> Superoperator {
        assert_eq!(self.basis, rhs.basis, "superoperators on different bases");
        Superoperator {
            basis: self.basis.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl std::ops::Sub for &Superoperator {
    type Output = Superoperator;
    fn sub(self, rhs: &Superoperator) -> Superoperator {
        assert_eq!(self.basis, rhs.basis, "superoperators on different bases");
        Superoperator {
            basis: self.basis.clone(),
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

/// `V_L |rho>> = |V rho>>`.
pub fn left_mult(v: &CMatrix, basis: &HilbertBasis) -> Result<Superoperator> {
    basis.check_operator(v)?;
    let d = basis.dim();
    let mut s = CMatrix::zeros(d * d, d * d);
    for n in 0..d {
        for m in 0..d {
            let row = basis.pair_index(n, m);
            for k in 0..d {
                s[(row, basis.pair_index(k, m))] += v[(n, k)];
            }
        }
    }
    Superoperator::from_matrix(basis, s)
}

/// `V_R |rho>> = |rho V>>`.
pub fn right_mult(v: &CMatrix, basis: &HilbertBasis) -> Result<Superoperator> {
    basis.check_operator(v)?;
    let d = basis.dim();
    let mut s = CMatrix::zeros(d * d, d * d);
    for n in 0..d {
        for m in 0..d {
            let row = basis.pair_index(n, m);
            for k in 0..d {
                s[(row, basis.pair_index(n, k))] += v[(k, m)];
            }
        }
    }
    Superoperator::from_matrix(basis, s)
}

/// `V_- = V_L - V_R`, the commutator superoperator.
pub fn commutator_superop(v: &CMatrix, basis: &HilbertBasis) -> Result<Superoperator> {
    Ok(&left_mult(v, basis)? - &right_mult(v, basis)?)
}

/// The four population/coherence blocks of a superoperator.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperoperatorBlocks {
    pub basis: HilbertBasis,
    /// populations -> populations, `dim x dim`
    pub m_p: CMatrix,
    /// coherences -> populations, `dim x (dim² - dim)`
    pub m_pc: CMatrix,
    /// populations -> coherences
    pub m_cp: CMatrix,
    /// coherences -> coherences
    pub m_c: CMatrix,
}

impl SuperoperatorBlocks {
    pub fn assemble(&self) -> Superoperator {
        let d = self.basis.dim();
        let nc = self.basis.coherence_count();
        let mut m = CMatrix::zeros(d + nc, d + nc);
        m.view_mut((0, 0), (d, d)).copy_from(&self.m_p);
        m.view_mut((0, d), (d, nc)).copy_from(&self.m_pc);
        m.view_mut((d, 0), (nc, d)).copy_from(&self.m_cp);
        m.view_mut((d, d), (nc, nc)).copy_from(&self.m_c);
        Superoperator {
            basis: self.basis.clone(),
            matrix: m,
        }
    }
}

/// An environment-induced transition pair `lower <-> upper` in secular form.
///
/// The raising operator `A+` moves population from `lower` to `upper`; rates
/// are the physical transition rates, so a lone decay channel gives
/// `d(rho_uu)/dt = -rate_down * rho_uu`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipationChannel {
    raising: CMatrix,
    rate_up: f64,
    rate_down: f64,
    frequency: f64,
}

impl DissipationChannel {
    pub fn new(raising: CMatrix, rate_up: f64, rate_down: f64, frequency: f64) -> Result<Self> {
        if !raising.is_square() {
            return Err(Error::DimensionMismatch {
                expected: raising.nrows(),
                found: raising.ncols(),
            });
        }
        for (name, r) in [("rate_up", rate_up), ("rate_down", rate_down)] {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {r}"
                )));
            }
        }
        Ok(Self {
            raising,
            rate_up,
            rate_down,
            frequency,
        })
    }

    /// Channel with raising operator `|upper><lower|`.
    pub fn between(
        basis: &HilbertBasis,
        lower: usize,
        upper: usize,
        rate_up: f64,
        rate_down: f64,
        frequency: f64,
    ) -> Result<Self> {
        if lower >= basis.dim() || upper >= basis.dim() || lower == upper {
            return Err(Error::InvalidParameter(format!(
                "channel states ({lower}, {upper}) invalid for dimension {}",
                basis.dim()
            )));
        }
        Self::new(basis.matrix_unit(upper, lower), rate_up, rate_down, frequency)
    }

    /// Channel whose rates obey `rate_up / rate_down = exp(-frequency / temperature)`.
    pub fn thermal(
        basis: &HilbertBasis,
        lower: usize,
        upper: usize,
        frequency: f64,
        rate_down: f64,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        let rate_up = rate_down * (-frequency / temperature).exp();
        Self::between(basis, lower, upper, rate_up, rate_down, frequency)
    }

    pub fn raising(&self) -> &CMatrix {
        &self.raising
    }

    pub fn rate_up(&self) -> f64 {
        self.rate_up
    }

    pub fn rate_down(&self) -> f64 {
        self.rate_down
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }
}

/// `gamma (A rho A^H - 1/2 {A^H A, rho})` as a superoperator.
fn dissipator(jump: &CMatrix, rate: f64, basis: &HilbertBasis) -> Result<Superoperator> {
    if rate == 0.0 {
        return Ok(Superoperator::zeros(basis));
    }
    let jump_dag = jump.adjoint();
    let n = &jump_dag * jump;
    let sandwich = &left_mult(jump, basis)?.matrix * &right_mult(&jump_dag, basis)?.matrix;
    let anti = &left_mult(&n, basis)?.matrix + &right_mult(&n, basis)?.matrix;
    Superoperator::from_matrix(basis, (sandwich - anti * re(0.5)) * re(rate))
}

/// Secular master-equation generator
/// `d rho/dt = i[rho, H] + sum_ch gamma+ D[A+] rho + gamma- D[A-] rho`.
pub fn build_liouvillian(
    basis: &HilbertBasis,
    hamiltonian: &CMatrix,
    channels: &[DissipationChannel],
) -> Result<Superoperator> {
    basis.check_operator(hamiltonian)?;
    let defect = hermiticity_defect(hamiltonian);
    if defect > 1e-12 * max_abs(hamiltonian).max(1.0) {
        return Err(Error::NonHermitian { deviation: defect });
    }
    let coherent = (&right_mult(hamiltonian, basis)?.matrix - &left_mult(hamiltonian, basis)?.matrix) * I;
    let mut total = coherent;
    for ch in channels {
        basis.check_operator(&ch.raising)?;
        let lowering = ch.raising.adjoint();
        total += dissipator(&ch.raising, ch.rate_up, basis)?.matrix;
        total += dissipator(&lowering, ch.rate_down, basis)?.matrix;
    }
    Superoperator::from_matrix(basis, total)
}

/// Real diagonal Hamiltonian `diag(energies)`.
pub fn diagonal_hamiltonian(energies: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        energies.len(),
        energies.iter().map(|&e| re(e)),
    ))
}

/// Gibbs populations `exp(-E/T)/Z` for a diagonal Hamiltonian.
pub fn gibbs_populations(energies: &[f64], temperature: f64) -> Vec<f64> {
    let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = energies.iter().map(|e| (-(e - e0) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}
