//! Curl-flux decomposition of a stationary population rate system.
//!
//! For a rate matrix `L` (entry `(n, m)` is the rate of `m -> n`) and
//! stationary populations `p`, the probability current from `m` to `n` is
//! `t_mn = L_nm p_m`. Its detailed-balance part is `min(t_mn, t_nm)`; the
//! remainder `c_mn` is non-negative, one-directional and divergence-free, so it
//! splits into a superposition of directed loops.
//!
//! All matrices here are indexed `(source, destination)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::reduction::EffectiveRateMatrix;

/// Stationarity tolerance for `curl_flux`, relative to the largest rate.
pub const STATIONARITY_TOL: f64 = 1e-10;

/// Loop conditions must hold to this tolerance, relative to the largest flux.
pub const LOOP_CONDITION_TOL: f64 = 1e-12;

/// Flux entries below this (relative) are treated as round-off.
pub const CLAMP_TOL: f64 = 1e-14;

/// A directed cycle `cycle[0] -> cycle[1] -> ... -> cycle[0]` carrying `weight`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxLoop {
    pub cycle: Vec<usize>,
    pub weight: f64,
}

impl FluxLoop {
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.cycle.len();
        (0..k).map(move |i| (self.cycle[i], self.cycle[(i + 1) % k]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxDecomposition {
    pub t_rate: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sym: DMatrix<f64>,
    pub loops: Vec<FluxLoop>,
}

impl FluxDecomposition {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// `sum_loops weight * indicator(cycle edges)`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        reconstruct_loops(self.dim(), &self.loops)
    }

    pub fn reconstruction_error(&self) -> f64 {
        (self.reconstruct() - &self.c).amax()
    }

    /// `max_n |sum_m c_nm - sum_m c_mn|`.
    pub fn divergence(&self) -> f64 {
        divergence(&self.c)
    }

    /// `max_mn |t_mn - t_nm|`.
    pub fn max_violation(&self) -> f64 {
        antisymmetric_max(&self.t_rate)
    }
}

pub fn reconstruct_loops(dim: usize, loops: &[FluxLoop]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for lp in loops {
        for (a, b) in lp.edges() {
            out[(a, b)] += lp.weight;
        }
    }
    out
}

fn divergence(c: &DMatrix<f64>) -> f64 {
    (0..c.nrows())
        .map(|n| (c.row(n).sum() - c.column(n).sum()).abs())
        .fold(0.0, f64::max)
}

fn antisymmetric_max(t: &DMatrix<f64>) -> f64 {
    let d = t.nrows();
    let mut worst: f64 = 0.0;
    for m in 0..d {
        for n in (m + 1)..d {
            worst = worst.max((t[(m, n)] - t[(n, m)]).abs());
        }
    }
    worst
}

fn check_populations(l: &EffectiveRateMatrix, populations: &DVector<f64>) -> Result<DMatrix<f64>> {
    if populations.len() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            found: populations.len(),
        });
    }
    l.rates()
}

/// `t_mn = L_nm p_m`, the stationary current from `m` to `n`.
pub fn transition_currents(rates: &DMatrix<f64>, populations: &DVector<f64>) -> DMatrix<f64> {
    let d = rates.nrows();
    DMatrix::from_fn(d, d, |m, n| if m == n { 0.0 } else { rates[(n, m)] * populations[m] })
}

pub fn curl_flux(l: &EffectiveRateMatrix, populations: &DVector<f64>) -> Result<FluxDecomposition> {
    let rates = check_populations(l, populations)?;
    let scale = rates.amax().max(1.0);
    let residual = (&rates * populations).amax();
    if residual > STATIONARITY_TOL * scale {
        return Err(Error::NonStationary { residual });
    }
    if let Some((n, p)) = populations.iter().enumerate().find(|(_, p)| **p < -STATIONARITY_TOL) {
        return Err(Error::InvalidParameter(format!(
            "negative population {p:.3e} at state {n}"
        )));
    }

    let t_rate = transition_currents(&rates, populations);
    let d = t_rate.nrows();
    let sym = DMatrix::from_fn(d, d, |m, n| {
        if m == n {
            0.0
        } else {
            t_rate[(m, n)].min(t_rate[(n, m)])
        }
    });
    let c = &t_rate - &sym;
    let loops = extract_loops(&c, loop_tolerance(&c).max(residual * d as f64))?;
    Ok(FluxDecomposition { t_rate, c, sym, loops })
}

fn loop_tolerance(c: &DMatrix<f64>) -> f64 {
    LOOP_CONDITION_TOL * c.amax().max(1.0)
}

/// Decompose a curl flux into directed loops by repeated cycle cancellation.
///
/// Cycles are found by depth-first search from the lowest-indexed state with
/// outgoing flux, always trying the lowest-indexed successor first.
pub fn loop_decomposition(c: &DMatrix<f64>) -> Result<Vec<FluxLoop>> {
    extract_loops(c, loop_tolerance(c))
}

fn extract_loops(c: &DMatrix<f64>, tol: f64) -> Result<Vec<FluxLoop>> {
    check_loop_conditions(c, tol)?;
    let d = c.nrows();
    let clamp = CLAMP_TOL * c.amax().max(1.0);
    let mut w = c.map(|x| if x < clamp { 0.0 } else { x });
    for n in 0..d {
        w[(n, n)] = 0.0;
    }

    let mut loops = Vec::new();
    let mut dead = vec![false; d];
    while let Some(start) = (0..d).find(|&n| !dead[n] && w.row(n).iter().any(|&x| x > 0.0)) {
        match find_cycle(&w, start, &mut dead) {
            Some(cycle) => {
                let lp = FluxLoop { weight: 0.0, cycle };
                let weight = lp.edges().map(|(a, b)| w[(a, b)]).fold(f64::INFINITY, f64::min);
                for (a, b) in lp.edges() {
                    let rest = w[(a, b)] - weight;
                    w[(a, b)] = if rest < clamp { 0.0 } else { rest };
                }
                loops.push(FluxLoop { weight, ..lp });
            }
            None => dead[start] = true,
        }
    }

    let remaining: f64 = w.iter().sum();
    if remaining > tol * d as f64 {
        let state = (0..d)
            .max_by(|&a, &b| w.row(a).sum().total_cmp(&w.row(b).sum()))
            .unwrap_or(0);
        return Err(Error::ResidualFlux { state, remaining });
    }
    Ok(loops)
}

fn find_cycle(w: &DMatrix<f64>, start: usize, dead: &mut [bool]) -> Option<Vec<usize>> {
    let d = w.nrows();
    let mut path = vec![start];
    let mut on_path = vec![false; d];
    on_path[start] = true;
    while let Some(&u) = path.last() {
        let next = (0..d).find(|&v| w[(u, v)] > 0.0 && !dead[v]);
        match next {
            Some(v) if on_path[v] => {
                let pos = path.iter().position(|&x| x == v).expect("node is on the path");
                return Some(path.split_off(pos));
            }
            Some(v) => {
                on_path[v] = true;
                path.push(v);
            }
            None => {
                dead[u] = true;
                on_path[u] = false;
                path.pop();
            }
        }
    }
    None
}

fn check_loop_conditions(c: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch {
            expected: c.nrows(),
            found: c.ncols(),
        });
    }
    let d = c.nrows();
    for m in 0..d {
        if c[(m, m)].abs() > tol {
            return Err(Error::InvalidCurlFlux(format!("nonzero self-flux at state {m}")));
        }
        for n in 0..d {
            let x = c[(m, n)];
            if !x.is_finite() || x < -tol {
                return Err(Error::InvalidCurlFlux(format!(
                    "entry ({m}, {n}) = {x:.3e} is not non-negative"
                )));
            }
            if n > m && x.min(c[(n, m)]) > tol {
                return Err(Error::InvalidCurlFlux(format!(
                    "flux runs both ways between {m} and {n}"
                )));
            }
        }
    }
    let div = divergence(c);
    if div > tol * d as f64 {
        return Err(Error::InvalidCurlFlux(format!(
            "divergence {div:.3e} exceeds {tol:.1e}"
        )));
    }
    Ok(())
}

/// Diagonal operators splitting `L_D` into its detailed-balance-preserving and
/// flux-driven parts. Both already carry the factor `1 / L_nn`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOperators {
    pub s_d: DVector<f64>,
    pub v_ss: DVector<f64>,
}

impl SplitOperators {
    /// `max_n |S_nn + V_nn + 1|`, zero at exact stationarity.
    pub fn completeness_defect(&self) -> f64 {
        self.s_d
            .iter()
            .zip(self.v_ss.iter())
            .map(|(s, v)| (s + v + 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn split_operators(
    l: &EffectiveRateMatrix,
    populations: &DVector<f64>,
    decomposition: &FluxDecomposition,
) -> Result<SplitOperators> {
    let rates = check_populations(l, populations)?;
    let d = rates.nrows();
    if decomposition.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: decomposition.dim(),
        });
    }
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut s_d = DVector::zeros(d);
    let mut v_ss = DVector::zeros(d);
    for n in 0..d {
        let lnn = rates[(n, n)];
        let pn = populations[n];
        if lnn.abs() <= tiny {
            return Err(Error::SingularDiagonal {
                state: n,
                reason: "zero escape rate",
            });
        }
        if pn <= tiny {
            return Err(Error::SingularDiagonal {
                state: n,
                reason: "zero population",
            });
        }
        let mut s = 0.0;
        let mut v = 0.0;
        for k in (0..d).filter(|&k| k != n) {
            s += (rates[(n, k)] * populations[k] / pn).min(rates[(k, n)]);
            v += decomposition.c[(k, n)];
        }
        s_d[n] = s / lnn;
        v_ss[n] = v / (lnn * pn);
    }
    Ok(SplitOperators { s_d, v_ss })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetailedBalance {
    pub balanced: bool,
    pub max_violation: f64,
}

/// Compare `max |t_mn - t_nm|` against `tol`. Imaginary parts of `L` are ignored.
pub fn is_detailed_balanced(l: &EffectiveRateMatrix, populations: &DVector<f64>, tol: f64) -> DetailedBalance {
    let rates = l.matrix().map(|z| z.re);
    let max_violation = if populations.len() == rates.nrows() {
        antisymmetric_max(&transition_currents(&rates, populations))
    } else {
        f64::INFINITY
    };
    DetailedBalance {
        balanced: max_violation <= tol,
        max_violation,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopEntry {
    pub cycle: Vec<String>,
    pub indices: Vec<usize>,
    pub weight: f64,
}

/// Machine-readable summary of a decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct FluxReport {
    pub labels: Vec<String>,
    pub populations: Vec<f64>,
    pub transition_currents: Vec<Vec<f64>>,
    pub curl_flux: Vec<Vec<f64>>,
    pub loops: Vec<LoopEntry>,
    pub s_d: Vec<f64>,
    pub v_ss: Vec<f64>,
    pub detailed_balance: DetailedBalance,
    pub verdict: String,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl FluxReport {
    pub fn new(
        labels: &[String],
        populations: &DVector<f64>,
        decomposition: &FluxDecomposition,
        split: &SplitOperators,
        balance: DetailedBalance,
    ) -> Self {
        let loops = decomposition
            .loops
            .iter()
            .map(|lp| LoopEntry {
                cycle: lp.cycle.iter().map(|&i| labels[i].clone()).collect(),
                indices: lp.cycle.clone(),
                weight: lp.weight,
            })
            .collect();
        Self {
            labels: labels.to_vec(),
            populations: populations.iter().copied().collect(),
            transition_currents: rows(&decomposition.t_rate),
            curl_flux: rows(&decomposition.c),
            loops,
            s_d: split.s_d.iter().copied().collect(),
            v_ss: split.v_ss.iter().copied().collect(),
            detailed_balance: balance,
            verdict: if balance.balanced {
                "detailed balance".into()
            } else {
                "detailed balance broken".into()
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("flux report is serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::HilbertBasis;

    fn rate_system(rates: DMatrix<f64>) -> (EffectiveRateMatrix, DVector<f64>) {
        let mut rates = rates;
        let d = rates.nrows();
        for n in 0..d {
            rates[(n, n)] = 0.0;
            let out: f64 = rates.column(n).sum();
            rates[(n, n)] = -out;
        }
        let l = EffectiveRateMatrix::from_rates(&HilbertBasis::numbered(d).unwrap(), &rates).unwrap();
        let p = l.stationary_populations().unwrap().populations;
        (l, p)
    }

    /// Rates (to, from) for a uniform three-cycle biased `0 -> 1 -> 2 -> 0`.
    fn biased_cycle(forward: f64, backward: f64) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(3, 3);
        for m in 0..3 {
            r[((m + 1) % 3, m)] = forward;
            r[((m + 2) % 3, m)] = backward;
        }
        r
    }

    #[test]
    fn balanced_system_has_no_curl() {
        // symmetric rates are detailed balanced with uniform populations
        let r = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 0.5, 2.0, 0.5, 0.0]);
        let (l, p) = rate_system(r);
        let dec = curl_flux(&l, &p).unwrap();
        assert!(dec.c.amax() < 1e-15);
        assert!(dec.loops.is_empty());
        let db = is_detailed_balanced(&l, &p, 1e-12);
        assert!(db.balanced);
        let split = split_operators(&l, &p, &dec).unwrap();
        for n in 0..3 {
            assert!(split.v_ss[n].abs() < 1e-15);
            assert!((split.s_d[n] + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn min_formula_on_uniform_cycle() {
        // uniform populations 1/3: t_forward = 9 * 1/3 = 3, t_backward = 1
        let (l, p) = rate_system(biased_cycle(9.0, 3.0));
        let dec = curl_flux(&l, &p).unwrap();
        assert!((dec.t_rate[(0, 1)] - 3.0).abs() < 1e-13);
        assert!((dec.t_rate[(1, 0)] - 1.0).abs() < 1e-13);
        assert!((dec.c[(0, 1)] - 2.0).abs() < 1e-13);
        assert_eq!(dec.c[(1, 0)], 0.0);
        assert_eq!(dec.loops.len(), 1);
        assert_eq!(dec.loops[0].cycle, vec![0, 1, 2]);
        assert!((dec.loops[0].weight - 2.0).abs() < 1e-13);
        let db = is_detailed_balanced(&l, &p, 1e-12);
        assert!(!db.balanced);
        assert!((db.max_violation - 2.0).abs() < 1e-13);
    }

    #[test]
    fn split_operators_by_hand() {
        let (l, p) = rate_system(biased_cycle(9.0, 3.0));
        let dec = curl_flux(&l, &p).unwrap();
        let split = split_operators(&l, &p, &dec).unwrap();
        // L_nn = -12, p_n = 1/3, inflowing curl 2
        let v = 2.0 / (-12.0 / 3.0);
        let s = (3.0f64.min(9.0) + 3.0f64.min(9.0)) / -12.0;
        for n in 0..3 {
            assert!((split.v_ss[n] - v).abs() < 1e-13);
            assert!((split.s_d[n] - s).abs() < 1e-13);
        }
        assert!(split.completeness_defect() < 1e-13);
    }

    #[test]
    fn empty_flux_gives_no_loops() {
        assert!(loop_decomposition(&DMatrix::zeros(4, 4)).unwrap().is_empty());
    }

    #[test]
    fn single_cycle_recovered() {
        let mut c = DMatrix::zeros(4, 4);
        c[(1, 3)] = 0.7;
        c[(3, 2)] = 0.7;
        c[(2, 1)] = 0.7;
        let loops = loop_decomposition(&c).unwrap();
        assert_eq!(
            loops,
            vec![FluxLoop {
                cycle: vec![1, 3, 2],
                weight: 0.7
            }]
        );
    }

    #[test]
    fn rejects_violated_conditions() {
        let mut c = DMatrix::zeros(3, 3);
        c[(0, 1)] = 1.0;
        assert!(matches!(loop_decomposition(&c), Err(Error::InvalidCurlFlux(_))));
        c[(1, 0)] = 1.0;
        assert!(matches!(loop_decomposition(&c), Err(Error::InvalidCurlFlux(_))));
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 1)] = -1.0;
        assert!(matches!(loop_decomposition(&c), Err(Error::InvalidCurlFlux(_))));
    }

    #[test]
    fn rejects_non_stationary_populations() {
        let (l, _) = rate_system(biased_cycle(9.0, 3.0));
        let p = DVector::from_vec(vec![0.5, 0.3, 0.2]);
        assert!(matches!(curl_flux(&l, &p), Err(Error::NonStationary { .. })));
    }

    #[test]
    fn split_rejects_empty_state() {
        // state 2 is only ever left, so it is empty at stationarity
        let r = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let (l, p) = rate_system(r);
        let dec = curl_flux(&l, &p).unwrap();
        assert!(matches!(
            split_operators(&l, &p, &dec),
            Err(Error::SingularDiagonal { state: 2, .. })
        ));
    }

    #[test]
    fn report_serializes() {
        let (l, p) = rate_system(biased_cycle(9.0, 3.0));
        let dec = curl_flux(&l, &p).unwrap();
        let split = split_operators(&l, &p, &dec).unwrap();
        let db = is_detailed_balanced(&l, &p, 1e-12);
        let report = FluxReport::new(l.basis().labels(), &p, &dec, &split, db);
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["loops"][0]["cycle"], serde_json::json!(["0", "1", "2"]));
        assert_eq!(v["verdict"], "detailed balance broken");
    }
}
