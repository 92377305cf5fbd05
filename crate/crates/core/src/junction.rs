//! Three-level molecular junction `{g, e1, e2}` between two electrodes.
//!
//! The single-electron Hamiltonian is
//! `H = w_g |g><g| + w_1 |e1><e1| + w_2 |e2><e2| - Delta (|e1><e2| + h.c.)`
//! and electrode `j` exchanges an electron with level `e_j` at rate `Gamma`,
//! filling it with probability `f_j = 1 / (exp((w_{e_j g} - mu_j) / T_j) + 1)`.
//! The Coulomb energy `U` only removes the doubly occupied state and does not
//! enter the single-electron dynamics.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{
    curl_flux, is_detailed_balanced, split_operators, DetailedBalance, FluxDecomposition, SplitOperators,
};
use crate::linalg::{c, re, CMatrix};
use crate::liouville::{build_liouvillian, DissipationChannel, HilbertBasis, Superoperator, SuperoperatorBlocks};
use crate::reduction::{
    coherence_map, effective_rate_matrix_with, steady_state, CoherenceMap, EffectiveRateMatrix, SteadyState,
};
use crate::response::{response_split, Probe, ResponseSpectrum};

pub const G: usize = 0;
pub const E1: usize = 1;
pub const E2: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionParams {
    #[serde(default)]
    pub omega_g: f64,
    pub omega_1: f64,
    pub omega_2: f64,
    pub delta: f64,
    pub gamma: f64,
    pub mu_1: f64,
    pub mu_2: f64,
    pub t_1: f64,
    pub t_2: f64,
    #[serde(default = "unit")]
    pub dipole: f64,
    #[serde(default)]
    pub coulomb_u: f64,
    /// Damp `rho_{g,e1}` with `f_2` and `rho_{g,e2}` with `f_1` in the analytic
    /// ge-block; `false` swaps the assignment.
    #[serde(default = "yes")]
    pub strict_paper_rates: bool,
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl Default for JunctionParams {
    /// `w_{e1 g} = 1.06`, `w_{e2 g} = 0.94`, `Delta = 0.01`, `Gamma = 0.02`,
    /// `mu = (1, 0.5)`, `T = 0.3`.
    fn default() -> Self {
        Self {
            omega_g: 0.0,
            omega_1: 1.06,
            omega_2: 0.94,
            delta: 0.01,
            gamma: 0.02,
            mu_1: 1.0,
            mu_2: 0.5,
            t_1: 0.3,
            t_2: 0.3,
            dipole: 1.0,
            coulomb_u: 0.0,
            strict_paper_rates: true,
        }
    }
}

impl JunctionParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("omega_g", self.omega_g),
            ("omega_1", self.omega_1),
            ("omega_2", self.omega_2),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("mu_1", self.mu_1),
            ("mu_2", self.mu_2),
            ("t_1", self.t_1),
            ("t_2", self.t_2),
            ("dipole", self.dipole),
            ("coulomb_u", self.coulomb_u),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.t_1 > 0.0 && self.t_2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "electrode temperatures must be > 0, got ({}, {})",
                self.t_1, self.t_2
            )));
        }
        if !(self.omega_1 > self.omega_2) {
            return Err(Error::InvalidParameter(format!(
                "levels must be ordered omega_1 > omega_2, got {} <= {}",
                self.omega_1, self.omega_2
            )));
        }
        Ok(())
    }

    /// Symmetric bias `mu_{1,2} = center +- delta_mu`.
    pub fn with_bias(&self, center: f64, delta_mu: f64) -> Self {
        Self {
            mu_1: center + delta_mu,
            mu_2: center - delta_mu,
            ..self.clone()
        }
    }

    pub fn with_potentials(&self, mu_1: f64, mu_2: f64) -> Self {
        Self {
            mu_1,
            mu_2,
            ..self.clone()
        }
    }

    pub fn omega_e1g(&self) -> f64 {
        self.omega_1 - self.omega_g
    }

    pub fn omega_e2g(&self) -> f64 {
        self.omega_2 - self.omega_g
    }

    pub fn omega_12(&self) -> f64 {
        self.omega_1 - self.omega_2
    }

    /// Electrode occupations `(f_1, f_2)` at the two transition energies.
    pub fn fermi_factors(&self) -> Result<(f64, f64)> {
        Ok((
            fermi_dirac(self.omega_e1g(), self.mu_1, self.t_1)?,
            fermi_dirac(self.omega_e2g(), self.mu_2, self.t_2)?,
        ))
    }

    /// Damping of `(rho_{g,e1}, rho_{g,e2})` used by the analytic ge-block.
    fn ge_damping(&self) -> Result<(f64, f64)> {
        let (f1, f2) = self.fermi_factors()?;
        let half = self.gamma / 2.0;
        Ok(if self.strict_paper_rates {
            (half * (1.0 + f2), half * (1.0 + f1))
        } else {
            (half * (1.0 + f1), half * (1.0 + f2))
        })
    }
}

/// `1 / (exp((w - mu) / T) + 1)`, evaluated without overflow.
pub fn fermi_dirac(omega: f64, mu: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let x = (omega - mu) / temperature;
    Ok(if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JunctionDerived {
    pub fbar_1: f64,
    pub fbar_2: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub theta: f64,
}

impl JunctionDerived {
    pub fn sin_2theta(&self) -> f64 {
        (2.0 * self.theta).sin()
    }

    pub fn cos_2theta(&self) -> f64 {
        (2.0 * self.theta).cos()
    }
}

/// Hybridized frequencies and damping of the coupled ge coherences.
///
/// `w+- = (w_{e1 g} + w_{e2 g} +- S) / 2` with `S = sqrt(w_12^2 + 4 Delta^2)`,
/// `tan 2 theta = 2 Delta / w_12`, and `gamma+-` the damping averaged over
/// each mode to first order in the damping difference.
pub fn hybridized_parameters(params: &JunctionParams) -> Result<JunctionDerived> {
    params.validate()?;
    let (fbar_1, fbar_2) = params.fermi_factors()?;
    let (a1, a2) = params.ge_damping()?;
    let w12 = params.omega_12();
    let s = w12.hypot(2.0 * params.delta);
    let mean = (params.omega_e1g() + params.omega_e2g()) / 2.0;
    let cos2 = w12 / s;
    Ok(JunctionDerived {
        fbar_1,
        fbar_2,
        omega_plus: mean + s / 2.0,
        omega_minus: mean - s / 2.0,
        gamma_plus: (a1 + a2) / 2.0 + cos2 * (a1 - a2) / 2.0,
        gamma_minus: (a1 + a2) / 2.0 - cos2 * (a1 - a2) / 2.0,
        theta: 0.5 * (2.0 * params.delta).atan2(w12),
    })
}

/// Generator of `(rho_{g,e1}, rho_{g,e2})`.
pub fn ge_generator(params: &JunctionParams) -> Result<CMatrix> {
    params.validate()?;
    let (a1, a2) = params.ge_damping()?;
    let coupling = c(0.0, -params.delta);
    Ok(CMatrix::from_row_slice(
        2,
        2,
        &[
            c(-a1, params.omega_e1g()),
            coupling,
            coupling,
            c(-a2, params.omega_e2g()),
        ],
    ))
}

/// Closed-form ge-block propagator in terms of the hybridized modes, for `t >= 0`.
/// The eg block is its complex conjugate.
pub fn analytic_propagator_ge(params: &JunctionParams, t: f64) -> Result<CMatrix> {
    let h = hybridized_parameters(params)?;
    let s = params.omega_12().hypot(2.0 * params.delta);
    let cos2 = h.cos_2theta();
    let em = (c(-h.gamma_minus, h.omega_minus) * t).exp();
    let ep = (c(-h.gamma_plus, h.omega_plus) * t).exp();
    let off = (em - ep) * (params.delta / s);
    Ok(CMatrix::from_row_slice(
        2,
        2,
        &[
            (em * (1.0 - cos2) + ep * (1.0 + cos2)) * 0.5,
            off,
            off,
            (em * (1.0 + cos2) + ep * (1.0 - cos2)) * 0.5,
        ],
    ))
}

/// How the eg-block frequency propagators entering the closed-form `T_NE` are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyPropagators {
    /// Lorentzians at `w+-` with widths `gamma+-` and weights `sin^2, cos^2 theta`.
    #[default]
    Hybridized,
    /// The 2x2 resolvent of the eg generator.
    Exact,
}

/// `G_{e_i g, e_j g}(w)` for `i, j in {1, 2}`.
pub fn eg_propagators(params: &JunctionParams, omega: f64, kind: FrequencyPropagators) -> Result<CMatrix> {
    match kind {
        FrequencyPropagators::Hybridized => {
            let h = hybridized_parameters(params)?;
            let (sin, cos) = h.theta.sin_cos();
            let am = re(1.0) / c(-h.gamma_minus, omega - h.omega_minus);
            let ap = re(1.0) / c(-h.gamma_plus, omega - h.omega_plus);
            let off = -(am - ap) * (sin * cos);
            Ok(CMatrix::from_row_slice(
                2,
                2,
                &[
                    -am * sin * sin - ap * cos * cos,
                    off,
                    off,
                    -am * cos * cos - ap * sin * sin,
                ],
            ))
        }
        FrequencyPropagators::Exact => {
            let a = ge_generator(params)?.map(|z| z.conj());
            let shifted = a + CMatrix::identity(2, 2) * c(0.0, omega);
            let inv = shifted.try_inverse().ok_or(Error::SingularResolvent {
                s: c(0.0, -omega),
                eigenvalue: c(0.0, -omega),
            })?;
            Ok(-inv)
        }
    }
}

/// `Omega = V = d (|e1><g| + |e2><g| + h.c.)`.
pub fn dipole_operator(params: &JunctionParams) -> CMatrix {
    let mut v = CMatrix::zeros(3, 3);
    for e in [E1, E2] {
        v[(e, G)] = re(params.dipole);
        v[(G, e)] = re(params.dipole);
    }
    v
}

pub fn junction_basis() -> HilbertBasis {
    HilbertBasis::new(["g", "e1", "e2"]).expect("fixed labels are distinct")
}

pub fn hamiltonian(params: &JunctionParams) -> CMatrix {
    let mut h = CMatrix::zeros(3, 3);
    h[(G, G)] = re(params.omega_g);
    h[(E1, E1)] = re(params.omega_1);
    h[(E2, E2)] = re(params.omega_2);
    h[(E1, E2)] = re(-params.delta);
    h[(E2, E1)] = re(-params.delta);
    h
}

/// Electrode channels `|e_j><g|` with `gamma+ = Gamma f_j`, `gamma- = Gamma (1 - f_j)`.
pub fn electrode_channels(params: &JunctionParams) -> Result<Vec<DissipationChannel>> {
    let basis = junction_basis();
    let (f1, f2) = params.fermi_factors()?;
    [(E1, f1, params.omega_e1g()), (E2, f2, params.omega_e2g())]
        .into_iter()
        .map(|(e, f, w)| DissipationChannel::between(&basis, G, e, params.gamma * f, params.gamma * (1.0 - f), w))
        .collect()
}

/// Everything derived from one parameter point.
#[derive(Debug, Clone)]
pub struct JunctionModel {
    pub params: JunctionParams,
    pub derived: JunctionDerived,
    pub basis: HilbertBasis,
    pub hamiltonian: CMatrix,
    pub liouvillian: Superoperator,
    pub blocks: SuperoperatorBlocks,
    pub k: CoherenceMap,
    pub l: EffectiveRateMatrix,
    pub steady: SteadyState,
    /// Stationary populations of `L`.
    pub populations: DVector<f64>,
    pub flux: FluxDecomposition,
    pub split: SplitOperators,
    pub balance: DetailedBalance,
    /// `c_{e1,e2}`, the current around `g -> e1 -> e2 -> g`.
    pub flux_j: f64,
}

/// Detailed balance is declared when `max |t_mn - t_nm|` is below this.
pub const BALANCE_TOL: f64 = 1e-12;

pub fn build_junction(params: &JunctionParams) -> Result<JunctionModel> {
    params.validate()?;
    let derived = hybridized_parameters(params)?;
    let basis = junction_basis();
    let h = hamiltonian(params);
    let liouvillian = build_liouvillian(&basis, &h, &electrode_channels(params)?)?;
    let blocks = liouvillian.partition();
    let k = coherence_map(&blocks)?;
    let l = effective_rate_matrix_with(&blocks, &k)?;
    let steady = steady_state(&liouvillian)?;
    let populations = l.stationary_populations()?.populations;
    let flux = curl_flux(&l, &populations)?;
    let split = split_operators(&l, &populations, &flux)?;
    let balance = is_detailed_balanced(&l, &populations, BALANCE_TOL);
    let flux_j = flux.c[(E1, E2)];
    Ok(JunctionModel {
        params: params.clone(),
        derived,
        basis,
        hamiltonian: h,
        liouvillian,
        blocks,
        k,
        l,
        steady,
        populations,
        flux,
        split,
        balance,
        flux_j,
    })
}

/// `J = L_{e2,e1} p_e1 - min(L_{e2,e1} p_e1, L_{e1,e2} p_e2)`.
pub fn flux_j(params: &JunctionParams) -> Result<f64> {
    Ok(build_junction(params)?.flux_j)
}

/// Full response with its split, plus the closed-form nonequilibrium transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub spectrum: ResponseSpectrum,
    pub t_ne_closed: Vec<f64>,
}

impl JunctionModel {
    /// `Im rho_{e1,e2}` of the steady state.
    pub fn coherence_e1e2(&self) -> Complex64 {
        self.steady.rho.element(E1, E2)
    }

    /// `J / Im rho_{e1,e2}`; the electron current is proportional to both.
    pub fn current_ratio(&self) -> f64 {
        self.flux_j / self.coherence_e1e2().im
    }

    /// Coefficients `(a_1, a_2)` weighting the eg propagators in the closed-form `T_NE`.
    pub fn closed_form_coefficients(&self) -> Result<(Complex64, Complex64)> {
        let l = self.l.rates()?;
        let k = self.k.matrix();
        let i12 = self.basis.coherence_index(E1, E2);
        let i21 = self.basis.coherence_index(E2, E1);
        let lg = re(1.0 / l[(G, G)]);
        let l1 = l[(E1, E1)];
        let l2 = l[(E2, E2)];
        let a1 = lg - (k[(i12, E1)] + 1.0) / l1 - k[(i12, E2)] / l2;
        let a2 = lg - k[(i21, E1)] / l1 - (k[(i21, E2)] + 1.0) / l2;
        Ok((a1, a2))
    }

    /// Weight of the single loop, whichever way it circulates. Equals `flux_j`
    /// when the loop runs `g -> e1 -> e2 -> g`.
    pub fn loop_current(&self) -> f64 {
        self.flux.loops.iter().map(|lp| lp.weight).sum()
    }

    /// `T_NE(w) = d^2 J Re[G+(w) + G-(w)]` with `G-(w) = -conj(G+(-w))` and
    /// `G+ = a1 (G_11 + G_21) + a2 (G_22 + G_12)`. `J` is the loop weight: every
    /// state receives the same inflow in either circulation.
    pub fn t_ne_closed(&self, omega: f64, kind: FrequencyPropagators) -> Result<f64> {
        let (a1, a2) = self.closed_form_coefficients()?;
        let script_g = |w: f64| -> Result<Complex64> {
            let g = eg_propagators(&self.params, w, kind)?;
            Ok(g[(0, 0)] * a1 + g[(1, 1)] * a2 + g[(0, 1)] * a2 + g[(1, 0)] * a1)
        };
        let total = script_g(omega)?.re - script_g(-omega)?.re;
        Ok(self.params.dipole * self.params.dipole * self.loop_current() * total)
    }

    pub fn transmission(&self, omega_grid: &[f64], kind: FrequencyPropagators) -> Result<Transmission> {
        let probe = Probe::dipole(dipole_operator(&self.params))?;
        let spectrum = response_split(
            &probe,
            &self.blocks,
            &self.l,
            &self.k,
            &self.populations,
            &self.split,
            omega_grid,
        )?;
        let t_ne_closed = omega_grid
            .iter()
            .map(|&w| self.t_ne_closed(w, kind))
            .collect::<Result<Vec<_>>>()?;
        Ok(Transmission { spectrum, t_ne_closed })
    }
}

pub fn transmission(params: &JunctionParams, omega_grid: &[f64], kind: FrequencyPropagators) -> Result<Transmission> {
    build_junction(params)?.transmission(omega_grid, kind)
}

/// Hand-derived junction blocks, in the same population-first ordering as
/// [`build_junction`].
pub mod closed_form {
    use super::*;

    fn dephasing(params: &JunctionParams) -> Result<f64> {
        let (f1, f2) = params.fermi_factors()?;
        Ok(params.gamma / 2.0 * (2.0 - f1 - f2))
    }

    pub fn m_p(params: &JunctionParams) -> Result<CMatrix> {
        let (f1, f2) = params.fermi_factors()?;
        let g = params.gamma;
        Ok(CMatrix::from_row_slice(
            3,
            3,
            &[
                re(-g * (f1 + f2)),
                re(g * (1.0 - f1)),
                re(g * (1.0 - f2)),
                re(g * f1),
                re(-g * (1.0 - f1)),
                re(0.0),
                re(g * f2),
                re(0.0),
                re(-g * (1.0 - f2)),
            ],
        ))
    }

    /// The `{e1e2, e2e1}` sector of `M_c`.
    pub fn m_coh(params: &JunctionParams) -> Result<CMatrix> {
        let x = dephasing(params)?;
        let w = params.omega_12();
        Ok(CMatrix::from_row_slice(2, 2, &[c(-x, -w), re(0.0), re(0.0), c(-x, w)]))
    }

    /// Rows `{e1e2, e2e1}` of `M_cp`.
    pub fn m_cp_coh(params: &JunctionParams) -> CMatrix {
        let d = params.delta;
        CMatrix::from_row_slice(2, 3, &[re(0.0), c(0.0, -d), c(0.0, d), re(0.0), c(0.0, d), c(0.0, -d)])
    }

    /// Columns `{e1e2, e2e1}` of `M_pc`.
    pub fn m_pc_coh(params: &JunctionParams) -> CMatrix {
        let d = params.delta;
        CMatrix::from_row_slice(3, 2, &[re(0.0), re(0.0), c(0.0, -d), c(0.0, d), c(0.0, d), c(0.0, -d)])
    }

    /// Rows `{e1e2, e2e1}` of `K`.
    pub fn k_coh(params: &JunctionParams) -> Result<CMatrix> {
        let x = dephasing(params)?;
        let w = params.omega_12();
        let d = params.delta;
        let k12 = re(-d) / c(w, -x);
        let k21 = re(-d) / c(w, x);
        Ok(CMatrix::from_row_slice(2, 3, &[re(0.0), k12, -k12, re(0.0), k21, -k21]))
    }

    pub fn l(params: &JunctionParams) -> Result<CMatrix> {
        let x = dephasing(params)?;
        let w = params.omega_12();
        let hop = params.delta * params.delta * 2.0 * x / (w * w + x * x);
        let mut l = m_p(params)?;
        l[(E1, E1)] -= hop;
        l[(E2, E2)] -= hop;
        l[(E1, E2)] += hop;
        l[(E2, E1)] += hop;
        Ok(l)
    }

    fn coherence_slots(basis: &HilbertBasis) -> [usize; 2] {
        [basis.coherence_index(E1, E2), basis.coherence_index(E2, E1)]
    }

    fn ge_slots(basis: &HilbertBasis) -> [usize; 2] {
        [basis.coherence_index(G, E1), basis.coherence_index(G, E2)]
    }

    fn eg_slots(basis: &HilbertBasis) -> [usize; 2] {
        [basis.coherence_index(E1, G), basis.coherence_index(E2, G)]
    }

    /// All four blocks, with the ge sector from [`ge_generator`] and the eg
    /// sector its conjugate.
    pub fn blocks(params: &JunctionParams) -> Result<SuperoperatorBlocks> {
        params.validate()?;
        let basis = junction_basis();
        let nc = basis.coherence_count();
        let mut m_c = CMatrix::zeros(nc, nc);
        let mut m_cp = CMatrix::zeros(nc, 3);
        let mut m_pc = CMatrix::zeros(3, nc);
        let coh = coherence_slots(&basis);
        let sector = m_coh(params)?;
        let cp = m_cp_coh(params);
        let pc = m_pc_coh(params);
        let ge = ge_generator(params)?;
        for (i, &a) in coh.iter().enumerate() {
            for (j, &b) in coh.iter().enumerate() {
                m_c[(a, b)] = sector[(i, j)];
            }
            for p in 0..3 {
                m_cp[(a, p)] = cp[(i, p)];
                m_pc[(p, a)] = pc[(p, i)];
            }
        }
        for (slots, conj) in [(ge_slots(&basis), false), (eg_slots(&basis), true)] {
            for (i, &a) in slots.iter().enumerate() {
                for (j, &b) in slots.iter().enumerate() {
                    m_c[(a, b)] = if conj { ge[(i, j)].conj() } else { ge[(i, j)] };
                }
            }
        }
        Ok(SuperoperatorBlocks {
            basis,
            m_p: m_p(params)?,
            m_pc,
            m_cp,
            m_c,
        })
    }

    /// `K` in the full coherence space; only the `{e1e2, e2e1}` rows are nonzero.
    pub fn k(params: &JunctionParams) -> Result<CMatrix> {
        let basis = junction_basis();
        let mut k = CMatrix::zeros(basis.coherence_count(), 3);
        let kc = k_coh(params)?;
        for (i, &a) in coherence_slots(&basis).iter().enumerate() {
            for p in 0..3 {
                k[(a, p)] = kc[(i, p)];
            }
        }
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, max_abs};

    #[test]
    fn fermi_values() {
        assert_eq!(fermi_dirac(1.0, 1.0, 0.3).unwrap(), 0.5);
        assert!(fermi_dirac(1.0 + 50.0 * 0.3, 1.0, 0.3).unwrap() < 1e-20);
        assert!((fermi_dirac(1.06, 1.0, 0.3).unwrap() - 1.0 / (0.2f64.exp() + 1.0)).abs() < 1e-15);
        assert!((fermi_dirac(1.06, 1.0, 0.3).unwrap() - 0.45017).abs() < 1e-5);
        assert!(fermi_dirac(-1e4, 0.0, 1e-3).unwrap() == 1.0);
        assert!(fermi_dirac(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn hybridized_values() {
        let h = hybridized_parameters(&JunctionParams::default()).unwrap();
        let s = 0.12f64.hypot(0.02);
        assert!((s - 0.121655).abs() < 1e-6);
        assert!((h.omega_plus - 1.06083).abs() < 1e-5);
        assert!((h.omega_minus - 0.93917).abs() < 1e-5);
        assert!((h.cos_2theta() - 0.98640).abs() < 1e-5);
        assert!((h.sin_2theta() - 0.16440).abs() < 1e-5);
        let (f1, f2) = (h.fbar_1, h.fbar_2);
        let g = 0.02 / 4.0;
        assert!((h.gamma_plus - g * (2.0 + f1 + f2 - 0.12 * (f1 - f2) / s)).abs() < 1e-15);
        assert!((h.gamma_minus - g * (2.0 + f1 + f2 + 0.12 * (f1 - f2) / s)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_occupation_gives_equal_widths() {
        // f_1 = f_2 when both levels sit at the same distance from their potentials
        let p = JunctionParams::default().with_potentials(1.06 - 0.1, 0.94 - 0.1);
        let h = hybridized_parameters(&p).unwrap();
        assert!((h.fbar_1 - h.fbar_2).abs() < 1e-15);
        let expected = 0.02 * (1.0 + h.fbar_1) / 2.0;
        assert!((h.gamma_plus - expected).abs() < 1e-15);
        assert!((h.gamma_minus - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        let p = JunctionParams::default();
        assert!(build_junction(&JunctionParams {
            gamma: 0.0,
            ..p.clone()
        })
        .is_err());
        assert!(build_junction(&JunctionParams { t_2: -1.0, ..p.clone() }).is_err());
        assert!(build_junction(&JunctionParams { omega_2: 1.1, ..p }).is_err());
    }

    #[test]
    fn propagator_at_zero_and_decoupled() {
        let p = JunctionParams::default();
        let g0 = analytic_propagator_ge(&p, 0.0).unwrap();
        assert!(max_abs(&(g0 - CMatrix::identity(2, 2))) < 1e-15);

        let p = JunctionParams { delta: 0.0, ..p };
        let (a1, a2) = p.ge_damping().unwrap();
        for t in [0.5, 3.0, 40.0] {
            let g = analytic_propagator_ge(&p, t).unwrap();
            assert_eq!(g[(0, 1)], re(0.0));
            assert!((g[(0, 0)] - (c(-a1, 1.06) * t).exp()).norm() < 1e-14);
            assert!((g[(1, 1)] - (c(-a2, 0.94) * t).exp()).norm() < 1e-14);
        }
    }

    #[test]
    fn propagator_exact_for_equal_occupations() {
        let p = JunctionParams::default().with_potentials(0.96, 0.84);
        let a = ge_generator(&p).unwrap();
        for t in [0.1, 1.0, 10.0, 100.0, 500.0] {
            let err = max_abs(&(analytic_propagator_ge(&p, t).unwrap() - expm(&(&a * re(t)))));
            assert!(err < 1e-10, "t = {t}: {err:.3e}");
        }
    }

    #[test]
    fn ge_sector_of_liouvillian_matches_generator() {
        let p = JunctionParams::default();
        let m = build_junction(&p).unwrap();
        let b = &m.basis;
        let gen = ge_generator(&p).unwrap();
        let slots = [b.pair_index(G, E1), b.pair_index(G, E2)];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.liouvillian.matrix()[(slots[i], slots[j])] - gen[(i, j)]).norm() < 1e-15);
            }
        }
        let swapped = ge_generator(&JunctionParams {
            strict_paper_rates: false,
            ..p
        })
        .unwrap();
        assert!((swapped[(0, 0)] - gen[(0, 0)]).norm() > 1e-4);
    }

    #[test]
    fn flux_runs_around_single_loop() {
        let m = build_junction(&JunctionParams::default().with_bias(1.0, 0.3)).unwrap();
        assert!(m.flux_j > 1e-6);
        assert_eq!(m.flux.loops.len(), 1);
        assert_eq!(m.flux.loops[0].cycle, vec![G, E1, E2]);
        assert!((m.flux.loops[0].weight - m.flux_j).abs() < 1e-15);
        assert!((m.flux.c[(G, E1)] - m.flux_j).abs() < 1e-12);
        assert!((m.flux.c[(E2, G)] - m.flux_j).abs() < 1e-12);
        assert!(!m.balance.balanced);
        assert!((m.balance.max_violation - m.flux_j).abs() < 1e-15);
        assert!(m.split.completeness_defect() < 1e-12);
    }

    #[test]
    fn dipole_and_hamiltonian() {
        let p = JunctionParams {
            dipole: 0.5,
            ..Default::default()
        };
        let v = dipole_operator(&p);
        assert_eq!(v[(E1, G)], re(0.5));
        assert_eq!(v[(E1, E2)], re(0.0));
        let h = hamiltonian(&p);
        assert_eq!(h[(E1, E2)], re(-0.01));
    }
}
