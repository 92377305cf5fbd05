use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use neqfdt_core::flux::{
    curl_flux, is_detailed_balanced, split_operators, DetailedBalance, FluxDecomposition, FluxReport, SplitOperators,
};
use neqfdt_core::junction::{
    build_junction, closed_form, dipole_operator, FrequencyPropagators, JunctionModel, JunctionParams, BALANCE_TOL,
};
use neqfdt_core::linalg::{max_abs, re, CMatrix};
use neqfdt_core::liouville::{
    build_liouvillian, diagonal_hamiltonian, DissipationChannel, HilbertBasis, SuperoperatorBlocks,
};
use neqfdt_core::reduction::{
    coherence_map, effective_rate_matrix_with, steady_state, CoherenceMap, EffectiveRateMatrix, SteadyState,
};
use neqfdt_core::response::{check_equilibrium_fdr, response_split, Probe, ResponseSpectrum};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{GenericSection, RunConfig};
use crate::error::CliError;

/// One parameter point of a sweep.
#[derive(Debug, Clone)]
pub struct Point {
    pub tag: String,
    pub model: PointModel,
}

#[derive(Debug, Clone)]
pub enum PointModel {
    Junction(JunctionParams),
    Generic(GenericSection),
}

pub fn points(cfg: &RunConfig, strict_override: Option<bool>) -> Result<Vec<Point>, CliError> {
    if let Some(g) = &cfg.model.generic {
        return Ok(vec![Point {
            tag: "generic".into(),
            model: PointModel::Generic(g.clone()),
        }]);
    }
    let section = cfg.model.junction.as_ref().expect("validated config has a model");
    let mut base = section.params()?;
    if let Some(strict) = strict_override {
        base.strict_paper_rates = strict;
    }
    let mut out = Vec::new();
    for &dm in &cfg.sweep.delta_mu {
        out.push(Point {
            tag: format!("dmu_{dm}"),
            model: PointModel::Junction(base.with_bias(cfg.sweep.bias_center, dm)),
        });
    }
    for &[m1, m2] in &cfg.sweep.chemical_potentials {
        out.push(Point {
            tag: format!("mu_{m1}_{m2}"),
            model: PointModel::Junction(base.with_potentials(m1, m2)),
        });
    }
    if out.is_empty() {
        out.push(Point {
            tag: format!("mu_{}_{}", base.mu_1, base.mu_2),
            model: PointModel::Junction(base),
        });
    }
    Ok(out)
}

/// Everything the subcommands need from one parameter point.
pub struct Pipeline {
    pub labels: Vec<String>,
    pub liouvillian_trace_defect: f64,
    pub blocks: SuperoperatorBlocks,
    pub k: CoherenceMap,
    pub l: EffectiveRateMatrix,
    pub steady: SteadyState,
    pub populations: DVector<f64>,
    pub flux: FluxDecomposition,
    pub split: SplitOperators,
    pub balance: DetailedBalance,
    pub dipole: CMatrix,
    pub junction: Option<JunctionModel>,
}

fn generic_basis(g: &GenericSection) -> Result<HilbertBasis, CliError> {
    Ok(match &g.labels {
        Some(labels) => HilbertBasis::new(labels.iter().cloned())?,
        None => HilbertBasis::numbered(g.dim())?,
    })
}

fn generic_hamiltonian(g: &GenericSection) -> CMatrix {
    let mut h = diagonal_hamiltonian(&g.energies);
    for c in &g.couplings {
        h[(c.from, c.to)] += re(c.value);
        h[(c.to, c.from)] += re(c.value);
    }
    h
}

fn generic_dipole(g: &GenericSection) -> CMatrix {
    let d = g.dim();
    match &g.dipole {
        Some(rows) => CMatrix::from_fn(d, d, |i, j| re(rows[i][j])),
        None => CMatrix::from_fn(d, d, |i, j| re(if i == j { 0.0 } else { 1.0 })),
    }
}

fn generic_channels(g: &GenericSection, basis: &HilbertBasis) -> Result<Vec<DissipationChannel>, CliError> {
    g.channels
        .iter()
        .map(|ch| {
            let w = g.energies[ch.upper] - g.energies[ch.lower];
            let channel = match (ch.rate_up, ch.temperature) {
                (Some(up), _) => DissipationChannel::between(basis, ch.lower, ch.upper, up, ch.rate_down, w),
                (None, Some(t)) => DissipationChannel::thermal(basis, ch.lower, ch.upper, w, ch.rate_down, t),
                (None, None) => unreachable!("validated channel"),
            };
            Ok(channel?)
        })
        .collect()
}

pub fn generic_generator(
    g: &GenericSection,
) -> Result<(HilbertBasis, neqfdt_core::liouville::Superoperator), CliError> {
    let basis = generic_basis(g)?;
    let channels = generic_channels(g, &basis)?;
    let m = build_liouvillian(&basis, &generic_hamiltonian(g), &channels)?;
    Ok((basis, m))
}

impl Pipeline {
    pub fn build(model: &PointModel) -> Result<Self, CliError> {
        match model {
            PointModel::Junction(p) => {
                let jm = build_junction(p)?;
                Ok(Pipeline {
                    labels: jm.basis.labels().to_vec(),
                    liouvillian_trace_defect: jm.liouvillian.trace_defect(),
                    blocks: jm.blocks.clone(),
                    k: jm.k.clone(),
                    l: jm.l.clone(),
                    steady: jm.steady.clone(),
                    populations: jm.populations.clone(),
                    flux: jm.flux.clone(),
                    split: jm.split.clone(),
                    balance: jm.balance,
                    dipole: dipole_operator(p),
                    junction: Some(jm),
                })
            }
            PointModel::Generic(g) => {
                let (basis, m) = generic_generator(g)?;
                let blocks = m.partition();
                let k = coherence_map(&blocks)?;
                let l = effective_rate_matrix_with(&blocks, &k)?;
                let steady = steady_state(&m)?;
                let populations = l.stationary_populations()?.populations;
                let flux = curl_flux(&l, &populations)?;
                let split = split_operators(&l, &populations, &flux)?;
                let scale = max_abs(l.matrix()).max(1.0);
                let balance = is_detailed_balanced(&l, &populations, BALANCE_TOL * scale);
                Ok(Pipeline {
                    labels: basis.labels().to_vec(),
                    liouvillian_trace_defect: m.trace_defect(),
                    blocks,
                    k,
                    l,
                    steady,
                    populations,
                    flux,
                    split,
                    balance,
                    dipole: generic_dipole(g),
                    junction: None,
                })
            }
        }
    }

    pub fn spectrum(&self, grid: &[f64]) -> Result<ResponseSpectrum, CliError> {
        let probe = Probe::dipole(self.dipole.clone())?;
        Ok(response_split(
            &probe,
            &self.blocks,
            &self.l,
            &self.k,
            &self.populations,
            &self.split,
            grid,
        )?)
    }

    pub fn flux_report(&self) -> FluxReport {
        FluxReport::new(&self.labels, &self.populations, &self.flux, &self.split, self.balance)
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write(dir: &Path, name: String, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn build_all(points: &[Point]) -> Result<Vec<Pipeline>, CliError> {
    points.par_iter().map(|p| Pipeline::build(&p.model)).collect()
}

/// Grid points where `values` has a discrete local extremum.
pub fn local_extrema(omega: &[f64], values: &[f64]) -> Vec<f64> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| {
            let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
            (b > a && b >= c) || (b < a && b <= c)
        })
        .map(|i| omega[i])
        .collect()
}

fn nearest(xs: &[f64], target: f64) -> f64 {
    xs.iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .unwrap_or(f64::NAN)
}

/// Closed-form `T_NE` on the grid and the peaks-table row.
type JunctionExtras = (Vec<f64>, String);

pub const PEAKS_HEADER: &str =
    "tag,mu_1,mu_2,flux_j,omega_plus,omega_minus,extremum_near_plus,extremum_near_minus,t_ne_plus,t_ne_minus";

pub fn run_spectrum(cfg: &RunConfig, points: &[Point], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let grid = cfg.grid();
    let kind = cfg.numerics.propagators;
    let prefix = &cfg.output.prefix;
    let results: Vec<(ResponseSpectrum, Option<JunctionExtras>)> = build_all(points)?
        .par_iter()
        .zip(points)
        .map(|(pipe, point)| {
            let spectrum = pipe.spectrum(&grid)?;
            let extra = match &pipe.junction {
                Some(jm) => Some(junction_extras(jm, point, &spectrum, &grid, kind)?),
                None => None,
            };
            Ok((spectrum, extra))
        })
        .collect::<Result<_, CliError>>()?;

    let mut written = Vec::new();
    let mut peaks = String::from(PEAKS_HEADER);
    peaks.push('\n');
    for (point, (spectrum, extra)) in points.iter().zip(&results) {
        written.push(write(out, format!("{prefix}_{}.csv", point.tag), &spectrum.to_csv())?);
        if let Some((t_ne, row)) = extra {
            let mut csv = String::from("omega,t_ne_closed\n");
            for (w, t) in grid.iter().zip(t_ne) {
                csv.push_str(&format!("{w:.16e},{t:.16e}\n"));
            }
            written.push(write(out, format!("{prefix}_{}_tne.csv", point.tag), &csv)?);
            peaks.push_str(row);
        }
    }
    if results.iter().any(|r| r.1.is_some()) {
        written.push(write(out, format!("{prefix}_peaks.csv"), &peaks)?);
    }
    Ok(written)
}

fn junction_extras(
    jm: &JunctionModel,
    point: &Point,
    spectrum: &ResponseSpectrum,
    grid: &[f64],
    kind: FrequencyPropagators,
) -> Result<JunctionExtras, CliError> {
    let t_ne = grid
        .iter()
        .map(|&w| jm.t_ne_closed(w, kind))
        .collect::<Result<Vec<_>, _>>()?;
    let extrema = local_extrema(grid, &spectrum.transmission());
    let h = &jm.derived;
    let row = format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        point.tag,
        jm.params.mu_1,
        jm.params.mu_2,
        jm.flux_j,
        h.omega_plus,
        h.omega_minus,
        nearest(&extrema, h.omega_plus),
        nearest(&extrema, h.omega_minus),
        jm.t_ne_closed(h.omega_plus, kind)?,
        jm.t_ne_closed(h.omega_minus, kind)?,
    );
    Ok((t_ne, row))
}

#[derive(Serialize)]
struct JunctionFlux {
    flux_j: f64,
    loop_current: f64,
    im_rho_e1e2: f64,
    current_ratio: f64,
    params: JunctionParams,
}

#[derive(Serialize)]
struct FluxFile<'a> {
    tag: &'a str,
    #[serde(flatten)]
    report: FluxReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    junction: Option<JunctionFlux>,
}

pub fn run_flux(points: &[Point], prefix: &str, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let pipes = build_all(points)?;
    let mut written = Vec::new();
    for (point, pipe) in points.iter().zip(&pipes) {
        let report = pipe.flux_report();
        println!(
            "{}: {} loop(s), max violation {:.3e}, {}",
            point.tag,
            report.loops.len(),
            report.detailed_balance.max_violation,
            report.verdict
        );
        let junction = pipe.junction.as_ref().map(|jm| JunctionFlux {
            flux_j: jm.flux_j,
            loop_current: jm.loop_current(),
            im_rho_e1e2: jm.coherence_e1e2().im,
            current_ratio: jm.current_ratio(),
            params: jm.params.clone(),
        });
        let file = FluxFile {
            tag: &point.tag,
            report,
            junction,
        };
        let json = serde_json::to_string_pretty(&file).expect("flux file is serializable") + "\n";
        written.push(write(out, format!("{prefix}_{}_flux.json", point.tag), &json)?);
    }
    Ok(written)
}

pub fn run_fdr(cfg: &RunConfig, points: &[Point], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let grid = cfg.grid();
    let mut written = Vec::new();
    for point in points {
        let (m, v, temperature) = match &point.model {
            PointModel::Generic(g) => {
                let t = g
                    .temperature
                    .ok_or_else(|| CliError::Config("model.generic.temperature is required for fdr-check".into()))?;
                let (_, m) = generic_generator(g)?;
                (m, generic_dipole(g), t)
            }
            PointModel::Junction(p) => {
                if p.t_1 != p.t_2 {
                    return Err(CliError::Config(format!(
                        "fdr-check needs a single temperature, got t_1 = {}, t_2 = {}",
                        p.t_1, p.t_2
                    )));
                }
                let jm = build_junction(p)?;
                (jm.liouvillian, dipole_operator(p), p.t_1)
            }
        };
        let report = check_equilibrium_fdr(&v, &m, temperature, &grid)?;
        let scale = report.rhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        println!(
            "{}: max residual {:.3e} (scale {:.3e}, tolerance {:.1e}) {}",
            point.tag,
            report.max_residual,
            scale,
            cfg.numerics.fdr_tol,
            if report.max_residual <= cfg.numerics.fdr_tol {
                "within tolerance"
            } else {
                "exceeds tolerance"
            }
        );
        written.push(write(
            out,
            format!("{}_{}_fdr.csv", cfg.output.prefix, point.tag),
            &report.to_csv(),
        )?);
    }
    Ok(written)
}

/// One line of the invariant suite.
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
    /// Informational checks are reported but never fail the run.
    pub gating: bool,
}

impl Check {
    fn new(name: &'static str, value: f64, tol: f64) -> Self {
        Self {
            name,
            value,
            tol,
            gating: true,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tol
    }
}

pub fn invariant_checks(pipe: &Pipeline, grid: &[f64], tol: f64) -> Result<Vec<Check>, CliError> {
    let p = pipe.populations.map(re);
    let mut checks = vec![
        Check::new("trace preservation", pipe.liouvillian_trace_defect, tol),
        Check::new("steady-state residual", pipe.steady.residual, tol),
        Check::new("steady-state trace", (pipe.steady.rho.trace() - re(1.0)).norm(), 1e-12),
        Check::new(
            "coherences equal K p",
            (pipe.k.matrix() * &p - pipe.steady.rho.coherences()).camax(),
            tol,
        ),
        Check::new("coherence map residual", pipe.k.residual(), tol),
        Check::new("rate matrix column sums", pipe.l.column_sum_defect(), tol),
        Check::new("rate matrix stationarity", (pipe.l.matrix() * &p).camax(), tol),
        Check::new(
            "population agreement",
            (&pipe.steady.rho.real_populations() - &pipe.populations).amax(),
            tol,
        ),
        Check::new("flux reconstruction", pipe.flux.reconstruction_error(), 1e-12),
        Check::new("flux divergence", pipe.flux.divergence(), tol),
        Check::new("split completeness", pipe.split.completeness_defect(), tol),
        Check::new(
            "response split",
            pipe.spectrum(grid)?.split_error().unwrap_or(f64::NAN),
            1e-9,
        ),
    ];
    if let Some(jm) = &pipe.junction {
        let params = &jm.params;
        let cf = closed_form::blocks(params)?;
        let block_err = [
            max_abs(&(&jm.blocks.m_p - &cf.m_p)),
            max_abs(&(&jm.blocks.m_pc - &cf.m_pc)),
            max_abs(&(&jm.blocks.m_cp - &cf.m_cp)),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        checks.push(Check::new("closed-form population blocks", block_err, 1e-12));
        checks.push(Check {
            gating: params.strict_paper_rates,
            ..Check::new(
                "closed-form coherence block",
                max_abs(&(&jm.blocks.m_c - &cf.m_c)),
                1e-12,
            )
        });
        checks.push(Check::new(
            "closed-form K",
            max_abs(&(jm.k.matrix() - closed_form::k(params)?)),
            1e-12,
        ));
        checks.push(Check::new(
            "closed-form L",
            max_abs(&(jm.l.matrix() - closed_form::l(params)?)),
            1e-12,
        ));
        let spectrum = pipe.spectrum(grid)?;
        let ne = spectrum.r_ne_term.as_ref().expect("split spectrum");
        let scale = spectrum
            .r_full
            .iter()
            .map(|z| z.im.abs())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut exact = 0.0f64;
        let mut hybrid = 0.0f64;
        for (&w, r) in grid.iter().zip(ne) {
            exact = exact.max((jm.t_ne_closed(w, FrequencyPropagators::Exact)? - r.im).abs());
            hybrid = hybrid.max((jm.t_ne_closed(w, FrequencyPropagators::Hybridized)? - r.im).abs());
        }
        checks.push(Check {
            gating: params.strict_paper_rates,
            ..Check::new("closed-form T_NE, exact propagators", exact / scale, 1e-9)
        });
        checks.push(Check {
            gating: false,
            ..Check::new("closed-form T_NE, hybridized propagators", hybrid / scale, 1e-2)
        });
    }
    Ok(checks)
}

pub fn run_validate(cfg: &RunConfig, points: &[Point]) -> Result<(), CliError> {
    let grid = cfg.grid();
    let pipes = build_all(points)?;
    let reports: Vec<Vec<Check>> = pipes
        .par_iter()
        .map(|p| invariant_checks(p, &grid, cfg.numerics.invariant_tol))
        .collect::<Result<_, _>>()?;
    let mut failures = 0;
    for (point, checks) in points.iter().zip(&reports) {
        println!("[{}]", point.tag);
        for c in checks {
            let status = match (c.passed(), c.gating) {
                (true, _) => "ok  ",
                (false, true) => "FAIL",
                (false, false) => "info",
            };
            if !c.passed() && c.gating {
                failures += 1;
            }
            println!("  {status} {:<42} {:.3e} (tol {:.1e})", c.name, c.value, c.tol);
        }
    }
    if failures > 0 {
        return Err(CliError::Invariant(format!("{failures} invariant check(s) failed")));
    }
    Ok(())
}
