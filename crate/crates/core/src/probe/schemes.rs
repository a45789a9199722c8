//! Composite measurement schemes: ladder-wide link probes, current
//! correlations, plaquette loop currents and the global chiral probe.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimators::{density_terms, fit_window, probe_link, relative_error, FirstMomentEstimator, LinkProbe, LinkProbeOptions, VarianceAux};
use super::fit::polyfit2d_monomials;
use super::{current_coefficients, AncillaCoupling, CouplingSpec, Direction, ExtractionResult, FitWindow, ProbeSetup};
use crate::basis::Statistics;
use crate::error::{Error, Result};
use crate::linalg::{assemble, dot, expectation, StateVector, C64};
use crate::models::{Boundary, Geometry, LadderSpec, Model, PlaquetteSpec, Representation};

fn ladder_spec(model: &Model) -> Result<LadderSpec> {
    match &model.geometry {
        Geometry::Ladder(s) => Ok(*s),
        _ => Err(Error::Unsupported("this scheme needs a ladder model".into())),
    }
}

/// Probes every link of `model` in both directions.
pub fn probe_all_links(model: &Model, psi: &StateVector, opts: &LinkProbeOptions) -> Result<Vec<LinkProbe>> {
    model
        .lattice
        .links()
        .par_iter()
        .map(|l| probe_link(model, psi, l.from, l.to, opts))
        .collect()
}

/// `j_c = mean j_L - mean j_R` assembled from single-link extractions.
pub fn chiral_from_links(model: &Model, probes: &[LinkProbe], estimator: FirstMomentEstimator, direction: Direction, delta_p: f64) -> Result<ExtractionResult> {
    let spec = ladder_spec(model)?;
    let mut value = 0.0;
    let mut exact = 0.0;
    let mut residual: f64 = 0.0;
    let mut caveats = Vec::new();
    let mut window: Option<FitWindow> = None;
    let mut sweeps = 0;
    for (leg, sign) in [(0usize, 1.0), (1, -1.0)] {
        let links = spec.leg_links(leg);
        let w = sign / links.len() as f64;
        for (a, b) in links {
            let p = probes
                .iter()
                .find(|p| p.from == a && p.to == b)
                .ok_or(Error::NotALink(a, b))?;
            let r = p.estimate_first_moment(estimator, direction, delta_p)?;
            value += w * r.value;
            exact += w * p.observables.current;
            residual = residual.max(r.residual);
            sweeps += r.sweeps_used;
            for c in r.caveats {
                if !caveats.contains(&c) {
                    caveats.push(c);
                }
            }
            window = Some(match window {
                None => r.window,
                Some(win) if r.window.points < win.points => r.window,
                Some(win) => win,
            });
        }
    }
    Ok(ExtractionResult {
        estimator: format!("chiral_{}", estimator.name()),
        value,
        window: window.ok_or_else(|| Error::WindowEmpty("ladder has no leg links".into()))?,
        fit_order: 1,
        residual,
        exact: None,
        relative_error: None,
        caveats,
        sweeps_used: sweeps,
    }
    .with_exact(exact))
}

/// Mean link variance `(1/links) sum (<j^2> - <j>^2) / |J|^2`.
pub fn mean_variance_from_links(probes: &[LinkProbe], order: usize, delta_p: f64, aux: VarianceAux) -> Result<ExtractionResult> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("no links to average over".into()));
    }
    let results = probes
        .iter()
        .map(|p| p.estimate_variance(order, delta_p, aux))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let value = results.iter().map(|r| r.value).sum::<f64>() / n;
    let exact = probes.iter().map(|p| p.observables.variance()).sum::<f64>() / n;
    let mut caveats: Vec<String> = Vec::new();
    for c in results.iter().flat_map(|r| r.caveats.iter()) {
        if !caveats.contains(c) {
            caveats.push(c.clone());
        }
    }
    let window = results.iter().map(|r| r.window).min_by_key(|w| w.points).unwrap();
    Ok(ExtractionResult {
        estimator: format!("mean_{}", results[0].estimator),
        value,
        window,
        fit_order: order,
        residual: results.iter().map(|r| r.residual).fold(0.0, f64::max),
        exact: None,
        relative_error: None,
        caveats,
        sweeps_used: results.iter().map(|r| r.sweeps_used).sum(),
    }
    .with_exact(exact))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Disjoint,
    Adjacent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    /// Per-ancilla coupling strengths (zero is added automatically).
    pub grid: Vec<f64>,
    /// Points are kept while every `p(0, 0)` stays within `[1 - delta_p, 1]`.
    pub delta_p: f64,
    pub mode: super::EvolutionMode,
    pub duration: f64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            grid: (0..=12).map(|i| 1e-3 * 10f64.powf(i as f64 / 6.0)).collect(),
            delta_p: 0.2,
            mode: super::EvolutionMode::Full,
            duration: super::DEFAULT_DURATION,
        }
    }
}

/// Classifies a pair of links for the correlation probe.
pub fn pair_kind(link1: (usize, usize), link2: (usize, usize)) -> Result<PairKind> {
    let (a, b) = link1;
    let (c, d) = link2;
    let shared = [c, d].iter().filter(|x| **x == a || **x == b).count();
    match shared {
        0 => Ok(PairKind::Disjoint),
        1 if b == c && a != d => Ok(PairKind::Adjacent),
        _ => Err(Error::Unsupported(format!(
            "links {link1:?} and {link2:?} must be disjoint or chained as (l1, l2), (l2, l4)"
        ))),
    }
}

/// `<j j'>` for disjoint links or `<{j, j'}>` for adjacent links, from the
/// four-direction antisymmetrized two-ancilla statistics.
pub fn correlation_probe(model: &Model, psi: &StateVector, link1: (usize, usize), link2: (usize, usize), opts: &CorrelationOptions) -> Result<ExtractionResult> {
    let kind = pair_kind(link1, link2)?;
    let grid = super::normalize_grid(&opts.grid)?;
    let dirs = [Direction::Forward, Direction::Backward];
    let combos: Vec<(Direction, Direction)> = dirs.iter().flat_map(|&a| dirs.iter().map(move |&b| (a, b))).collect();
    let surfaces = combos
        .iter()
        .map(|&(d1, d2)| {
            let c1 = current_coefficients(model, link1.0, link1.1, d1)?;
            let c2 = current_coefficients(model, link2.0, link2.1, d2)?;
            let mut spec = CouplingSpec::for_model(model, vec![AncillaCoupling::new(c1), AncillaCoupling::new(c2)]);
            spec.mode = opts.mode;
            spec.duration = opts.duration;
            let setup = ProbeSetup::new(model, &spec)?;
            setup.sweep_2d(psi, &grid, &grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut x1 = Vec::new();
    let mut x2 = Vec::new();
    let mut y = Vec::new();
    let mut idx = 0;
    for &s1 in &grid {
        for &s2 in &grid {
            let inside = surfaces.iter().all(|sf| sf[idx].p0() >= 1.0 - opts.delta_p);
            if inside {
                let mut c = 0.0;
                for (k, &(d1, d2)) in combos.iter().enumerate() {
                    let d = &surfaces[k][idx];
                    let v = match kind {
                        PairKind::Disjoint => d.p0(),
                        PairKind::Adjacent => d.p0() - d.p11(0, 1) / 3.0,
                    };
                    c += 0.25 * d1.sign() * d2.sign() * v;
                }
                x1.push(s1);
                x2.push(s2);
                y.push(c);
            }
            idx += 1;
        }
    }
    // The combination vanishes on both axes, so only mixed monomials enter.
    let monomials = [(1, 1), (2, 1), (1, 2), (3, 1), (2, 2), (1, 3)];
    let fit = polyfit2d_monomials(&x1, &x2, &y, &monomials)?;
    let m1 = model.hopping(link1.0, link1.1)?.norm();
    let m2 = model.hopping(link2.0, link2.1)?.norm();
    let j1 = model.link_current(link1.0, link1.1)?.operator;
    let j2 = model.link_current(link2.0, link2.1)?.operator;
    let a = j1.apply_to(psi)?;
    let b = j2.apply_to(psi)?;
    let (value, exact, name) = match kind {
        PairKind::Disjoint => (fit.coefficient(1, 1) * m1 * m2, dot(&a, &b).re, "correlation_disjoint"),
        PairKind::Adjacent => (3.0 * fit.coefficient(1, 1) * m1 * m2, 2.0 * dot(&a, &b).re, "anticommutator_adjacent"),
    };
    let s_max = x1.iter().chain(&x2).fold(0.0f64, |m, v| m.max(*v));
    Ok(ExtractionResult {
        estimator: name.to_string(),
        value,
        window: FitWindow {
            delta_p: opts.delta_p,
            s_min: 0.0,
            s_max,
            points: y.len(),
        },
        fit_order: 4,
        residual: fit.residual,
        exact: None,
        relative_error: None,
        caveats: Vec::new(),
        sweeps_used: 4,
    }
    .with_exact(exact))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopScheme {
    /// `Phi = +-pi/2`, one sweep.
    FluxHalfPi,
    /// `Phi = +-pi`, two sweeps.
    FullyFrustrated,
    /// Currents without Peierls phases, any flux, two sweeps.
    LabFrame,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOptions {
    pub link: LinkProbeOptions,
    pub estimator: FirstMomentEstimator,
    pub delta_p: f64,
    pub fit_order: usize,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            link: LinkProbeOptions::default(),
            estimator: FirstMomentEstimator::P0,
            delta_p: super::DEFAULT_DELTA_P,
            fit_order: 2,
        }
    }
}

const FLUX_TOL: f64 = 1e-9;

/// Equal link angle of each sweep and the weights in
/// `j_loop / J = sum_k w_k X_k - w_n n_r`.
struct LoopPlan {
    angles: Vec<f64>,
    weights: Vec<f64>,
    density_weight: f64,
    lab: bool,
}

fn loop_plan(plaq: &PlaquetteSpec, scheme: LoopScheme) -> Result<LoopPlan> {
    let flux = plaq.flux();
    let near = |target: f64| (crate::models::wrap_angle(flux - target)).abs() < FLUX_TOL;
    let incompatible = |detail: &str| Error::IncompatibleFlux {
        flux,
        detail: detail.to_string(),
    };
    let r3 = 2.0 / 3f64.sqrt();
    match scheme {
        LoopScheme::FluxHalfPi => {
            // X = n_r + sin(alpha) j / J with alpha = -+pi/2, sin(alpha) = +-1
            let alpha = if near(FRAC_PI_2) {
                -FRAC_PI_2
            } else if near(-FRAC_PI_2) {
                FRAC_PI_2
            } else {
                return Err(incompatible("one-sweep scheme needs flux +-pi/2"));
            };
            let s = alpha.sin();
            Ok(LoopPlan {
                angles: vec![alpha],
                weights: vec![s],
                density_weight: s,
                lab: false,
            })
        }
        LoopScheme::FullyFrustrated => {
            let sign = if near(PI) {
                1.0
            } else if near(-PI) {
                -1.0
            } else {
                return Err(incompatible("two-sweep scheme needs flux +-pi"));
            };
            // X1 = n + c/2J + sign sqrt3 j/2J, X2 = n - c/J
            Ok(LoopPlan {
                angles: vec![sign * PI / 3.0, sign * PI],
                weights: vec![sign * r3, sign * r3 / 2.0],
                density_weight: sign * r3 * 1.5,
                lab: false,
            })
        }
        LoopScheme::LabFrame => Ok(LoopPlan {
            // X1 = n - c/2J + sqrt3 j/2J, X2 = n + c/J
            angles: vec![2.0 * PI / 3.0, 0.0],
            weights: vec![r3, r3 / 2.0],
            density_weight: r3 * 1.5,
            lab: true,
        }),
    }
}

/// `lambda` for a loop sweep with equal link angles `alpha`.
pub fn loop_coefficients(plaq: &PlaquetteSpec, alpha: f64, lab: bool) -> Vec<(usize, C64)> {
    let z = plaq.zetas();
    let r = [(z[0] * z[2] / z[1]).sqrt(), (z[0] * z[1] / z[2]).sqrt(), (z[1] * z[2] / z[0]).sqrt()];
    let phase = |k: usize| if lab { 0.0 } else { plaq.hoppings[k].arg() };
    // theta_2 - theta_1 = phi_12 - alpha, theta_3 - theta_2 = phi_23 - alpha
    let t1 = 0.0;
    let t2 = t1 + phase(0) - alpha;
    let t3 = t2 + phase(1) - alpha;
    vec![(0, C64::from_polar(r[0], t1)), (1, C64::from_polar(r[1], t2)), (2, C64::from_polar(r[2], t3))]
}

/// Loop current of a triangular plaquette from one or two sweeps.
pub fn loop_probe(model: &Model, psi: &StateVector, scheme: LoopScheme, opts: &LoopOptions) -> Result<ExtractionResult> {
    let plaq = match &model.geometry {
        Geometry::Plaquette(p) => *p,
        _ => return Err(Error::Unsupported("loop probes need a plaquette model".into())),
    };
    if model.representation != Representation::Particle {
        return Err(Error::Unsupported("loop probes are implemented for particle models".into()));
    }
    if opts.estimator == FirstMomentEstimator::Antisym {
        return Err(Error::Unsupported("loop probes use the p0 or ptilde estimator".into()));
    }
    let plan = loop_plan(&plaq, scheme)?;
    opts.link.grid.validate()?;
    let coeffs0 = loop_coefficients(&plaq, 0.0, plan.lab);
    let n_r = {
        let d = assemble(&model.basis, &density_terms(&coeffs0, false))?;
        expectation(psi, &d)?.re
    };
    let spec_modes = model.basis.spec().ok_or_else(|| Error::InvalidModes("model basis must be a plain sector".into()))?;
    let mut value = 0.0;
    let mut residual: f64 = 0.0;
    let mut window: Option<FitWindow> = None;
    let mut caveats = Vec::new();
    for (&alpha, &w) in plan.angles.iter().zip(&plan.weights) {
        let coeffs = loop_coefficients(&plaq, alpha, plan.lab);
        let mut spec = CouplingSpec::for_model(model, vec![AncillaCoupling::new(coeffs.clone())]);
        spec.mode = opts.link.mode;
        spec.duration = opts.link.duration;
        if let Some(t) = opts.link.truncation {
            spec.truncation = t;
        }
        let setup = ProbeSetup::new(model, &spec)?;
        let mut grid = opts.link.grid.initial();
        let mut sweep = setup.sweep(psi, &grid)?;
        while sweep.distributions.last().is_some_and(|d| d.p0() >= opts.link.grid.target_p0) {
            let Some(ext) = opts.link.grid.extension(*grid.last().unwrap()) else {
                break;
            };
            grid.extend_from_slice(&ext);
            sweep = setup.sweep(psi, &grid)?;
        }
        let p0 = sweep.p0();
        let y = match opts.estimator {
            FirstMomentEstimator::P0 => p0.clone(),
            _ => {
                let kappa = crate::perturbation::CouplingOperators::commutator_constant(&coeffs, spec_modes);
                if kappa.is_none() {
                    caveats.push("[A, A†] is not a c-number; ptilde uses kappa = sum |lambda|^2".to_string());
                }
                let k = kappa.unwrap_or_else(|| coeffs.iter().map(|c| c.1.norm_sqr()).sum());
                super::estimators::ptilde(&sweep, k)
            }
        };
        let wf = fit_window(&sweep.s, &y, &[&y], opts.delta_p, opts.fit_order)?;
        if wf.exhausted {
            caveats.push("estimator did not leave its window within the s grid".to_string());
        }
        value += w * -wf.slope();
        residual = residual.max(wf.fit.residual);
        for c in sweep.warnings {
            if !caveats.contains(&c) {
                caveats.push(c);
            }
        }
        window = Some(match window {
            Some(win) if win.points <= wf.window.points => win,
            _ => wf.window,
        });
    }
    let value = (value - plan.density_weight * n_r) * plaq.scale;
    let exact_op = if plan.lab { model.lab_loop_current()? } else { model.loop_current()? };
    let exact = expectation(psi, &exact_op)?.re;
    Ok(ExtractionResult {
        estimator: format!("loop_{}", scheme_name(scheme)),
        value,
        window: window.unwrap(),
        fit_order: opts.fit_order,
        residual,
        exact: Some(exact),
        relative_error: Some(relative_error(value, exact)),
        caveats,
        sweeps_used: plan.angles.len(),
    })
}

fn scheme_name(s: LoopScheme) -> &'static str {
    match s {
        LoopScheme::FluxHalfPi => "flux_half_pi",
        LoopScheme::FullyFrustrated => "fully_frustrated",
        LoopScheme::LabFrame => "lab_frame",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalOptions {
    pub link: LinkProbeOptions,
    pub delta_p: f64,
    pub fit_order: usize,
    /// Largest composite dimension allowed.
    pub dimension_budget: usize,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        Self {
            link: LinkProbeOptions::default(),
            delta_p: 0.2,
            fit_order: 4,
            dimension_budget: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalChiralResult {
    pub current: ExtractionResult,
    pub variance: ExtractionResult,
}

/// Couples one ancilla to every leg link, with reversed phase convention on
/// the R leg, so that `sum A†A = 2N + (L/J) j_c`.
pub fn global_chiral_probe(model: &Model, psi: &StateVector, opts: &GlobalOptions) -> Result<GlobalChiralResult> {
    let spec = ladder_spec(model)?;
    if spec.boundary != Boundary::Periodic {
        return Err(Error::Unsupported("the global chiral probe needs periodic boundaries".into()));
    }
    opts.link.grid.validate()?;
    let mut ancillas = Vec::with_capacity(2 * spec.rungs);
    for (leg, d) in [(0, Direction::Forward), (1, Direction::Backward)] {
        for (a, b) in spec.leg_links(leg) {
            ancillas.push(AncillaCoupling::new(current_coefficients(model, a, b, d)?));
        }
    }
    let mut cspec = CouplingSpec::for_model(model, ancillas);
    cspec.mode = opts.link.mode;
    cspec.duration = opts.link.duration;
    cspec.truncation = opts.link.truncation.unwrap_or(if spec.hard_core() || cspec.ancilla_statistics == Statistics::Fermion {
        1
    } else {
        2
    });
    let setup = ProbeSetup::with_budget(model, &cspec, opts.dimension_budget)?;
    let mut grid = opts.link.grid.initial();
    let mut sweep = setup.sweep(psi, &grid)?;
    while sweep.distributions.last().is_some_and(|d| d.p0() >= opts.link.grid.target_p0) {
        let Some(ext) = opts.link.grid.extension(*grid.last().unwrap()) else {
            break;
        };
        grid.extend_from_slice(&ext);
        sweep = setup.sweep(psi, &grid)?;
    }
    let p0 = sweep.p0();
    let y: Vec<f64> = sweep.distributions.iter().map(|d| d.p0() - d.total_count(2) / 3.0).collect();
    let wf = fit_window(&sweep.s, &y, &[&p0], opts.delta_p, opts.fit_order)?;
    let rungs = spec.rungs as f64;
    let n = model.basis.sectors()[0] as f64;
    let x = -wf.slope();
    let q = 3.0 * wf.curvature();
    let scale = spec.j / rungs;
    let current = scale * (x - 2.0 * n);
    let variance = scale * scale * (q - x * x);
    let jc = model.chiral_current()?;
    let jpsi = jc.apply_to(psi)?;
    let mean = dot(psi.amplitudes(), &jpsi).re;
    let exact_var = crate::linalg::norm_sqr(&jpsi) - mean * mean;
    let mut caveats = sweep.warnings.clone();
    if wf.exhausted {
        caveats.push("estimator did not leave its window within the s grid".to_string());
    }
    if opts.link.near_degenerate {
        caveats.push("ground state is near-degenerate; extracted values may depend on the solver seed".to_string());
    }
    let base = ExtractionResult {
        estimator: String::new(),
        value: 0.0,
        window: wf.window,
        fit_order: opts.fit_order,
        residual: wf.fit.residual,
        exact: None,
        relative_error: None,
        caveats,
        sweeps_used: 1,
    };
    Ok(GlobalChiralResult {
        current: ExtractionResult {
            estimator: "global_chiral_current".into(),
            value: current,
            ..base.clone()
        }
        .with_exact(mean),
        variance: ExtractionResult {
            estimator: "global_chiral_variance".into(),
            value: variance,
            ..base
        }
        .with_exact(exact_var),
    })
}
