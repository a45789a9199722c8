//! Turning ancilla statistics into currents and current variances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{polyfit, prefix_window, PolyFit};
use super::{current_coefficients, Direction, EvolutionMode, ProbeSetup, ProbeSweep};
use crate::error::{Error, Result};
use crate::linalg::{assemble, dot, expectation, norm_sqr, MonomialTerm, StateVector, C64};
use crate::models::{Model, Representation};
use crate::perturbation::CouplingOperators;

/// Default window for the plain `p(0)` estimator and quadratic variance fits.
pub const DEFAULT_DELTA_P: f64 = 0.06;
/// Default window for the `p~(0)` estimator and quartic variance fits.
pub const DEFAULT_DELTA_PTILDE: f64 = 0.20;

/// Minimum number of grid points a fit window must contain.
const MIN_WINDOW_POINTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstMomentEstimator {
    P0,
    Ptilde,
    Antisym,
}

impl FirstMomentEstimator {
    pub fn name(self) -> &'static str {
        match self {
            FirstMomentEstimator::P0 => "p0",
            FirstMomentEstimator::Ptilde => "ptilde",
            FirstMomentEstimator::Antisym => "antisym",
        }
    }

    pub fn default_window(self) -> f64 {
        match self {
            FirstMomentEstimator::Ptilde => DEFAULT_DELTA_PTILDE,
            _ => DEFAULT_DELTA_P,
        }
    }
}

/// How the density contributions to the `s^2` coefficient are removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceAux {
    /// Average both probe directions; needs `<(n1 + n2)^2>`.
    Symmetrized,
    /// Against-flow sweep only; needs `<(n1 + n2)^2>` and `<{n1 + n2, j}>`.
    Anticommutator,
}

/// Which probability combination carries the `s^2` information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceRoute {
    /// Commuted form for soft-core bosons, `p(0) - p(2)/3` otherwise.
    #[default]
    Auto,
    /// `p(0)` with `[A, A†]` a c-number.
    Commuted,
    /// `p(0) - p(2)/3 = 1 - s <A†A> + s^2 <(A†A)^2> / 3`.
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub delta_p: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub estimator: String,
    pub value: f64,
    pub window: FitWindow,
    pub fit_order: usize,
    pub residual: f64,
    pub exact: Option<f64>,
    pub relative_error: Option<f64>,
    pub caveats: Vec<String>,
    pub sweeps_used: usize,
}

impl ExtractionResult {
    pub fn with_exact(mut self, exact: f64) -> Self {
        self.exact = Some(exact);
        self.relative_error = Some(relative_error(self.value, exact));
        self
    }
}

/// `|value - exact| / |exact|`, or the absolute error when `exact` vanishes.
pub fn relative_error(value: f64, exact: f64) -> f64 {
    if exact.abs() > 1e-12 {
        (value - exact).abs() / exact.abs()
    } else {
        (value - exact).abs()
    }
}

/// Result of fitting one probability series over its window.
#[derive(Clone, Debug)]
pub(crate) struct WindowFit {
    pub fit: PolyFit,
    pub window: FitWindow,
    pub exhausted: bool,
}

impl WindowFit {
    pub fn slope(&self) -> f64 {
        self.fit.coefficients[1]
    }

    pub fn curvature(&self) -> f64 {
        self.fit.coefficients.get(2).copied().unwrap_or(0.0)
    }
}

/// Fits `y` against `s` over the longest prefix on which every series in
/// `gates` stays above `1 - delta_p`. No upper bound: sampled or
/// error-corrected data may overshoot 1 at small `s`.
pub(crate) fn fit_window(s: &[f64], y: &[f64], gates: &[&[f64]], delta_p: f64, order: usize) -> Result<WindowFit> {
    if !(delta_p > 0.0 && delta_p < 1.0) {
        return Err(Error::InvalidParameter(format!("fit window must lie in (0, 1), got {delta_p}")));
    }
    let n = gates
        .iter()
        .map(|g| prefix_window(g, 1.0 - delta_p, f64::INFINITY))
        .min()
        .unwrap_or(y.len())
        .min(y.len());
    if n < MIN_WINDOW_POINTS.max(order + 1) {
        return Err(Error::WindowEmpty(format!(
            "only {n} grid points inside the {:.1}% window; refine the s grid",
            100.0 * delta_p
        )));
    }
    let fit = polyfit(&s[..n], &y[..n], order)?;
    Ok(WindowFit {
        fit,
        window: FitWindow {
            delta_p,
            s_min: s[0],
            s_max: s[n - 1],
            points: n,
        },
        exhausted: n == y.len(),
    })
}

/// `1 - (p(1) + 2 p(2)) / (1 - kappa s / 3)`.
pub fn ptilde(sweep: &ProbeSweep, kappa: f64) -> Vec<f64> {
    sweep
        .s
        .iter()
        .zip(&sweep.distributions)
        .map(|(&s, d)| {
            let den = 1.0 - kappa * s / 3.0;
            if den <= 0.0 {
                f64::NAN
            } else {
                1.0 - (d.p1(0) + 2.0 * d.p2(0)) / den
            }
        })
        .collect()
}

/// Exact single-link expectation values used as auxiliary inputs and
/// references. `D` is the density part of `A†A`, i.e. `n1 + n2` for
/// particles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkObservables {
    pub magnitude: f64,
    /// `<D>`
    pub density: f64,
    /// `<D^2>`
    pub density_sq: f64,
    /// `<{D, j}> / |J|`
    pub density_current: f64,
    /// `<j>`
    pub current: f64,
    /// `<j^2> / |J|^2`
    pub current_sq: f64,
}

impl LinkObservables {
    /// `<j^2> / |J|^2 - (<j> / |J|)^2`.
    pub fn variance(&self) -> f64 {
        let m = self.current / self.magnitude;
        self.current_sq - m * m
    }
}

/// Diagonal part `sum |lambda|^2 op† op` of `A†A`.
pub(crate) fn density_terms(coefficients: &[(usize, C64)], ladder_create: bool) -> Vec<MonomialTerm> {
    use crate::linalg::Action;
    coefficients
        .iter()
        .map(|&(l, c)| {
            let factors = if ladder_create {
                vec![(l, Action::Annihilate), (l, Action::Create)]
            } else {
                vec![(l, Action::Create), (l, Action::Annihilate)]
            };
            MonomialTerm {
                coefficient: C64::new(c.norm_sqr(), 0.0),
                factors,
            }
        })
        .collect()
}

pub fn link_observables(model: &Model, psi: &StateVector, l1: usize, l2: usize) -> Result<LinkObservables> {
    let coeffs = current_coefficients(model, l1, l2, Direction::Forward)?;
    let create = model.representation == Representation::SpinHolsteinPrimakoff;
    let d = assemble(&model.basis, &density_terms(&coeffs, create))?;
    let c = model.link_current(l1, l2)?;
    let dpsi = d.apply_to(psi)?;
    let jpsi = c.operator.apply_to(psi)?;
    let amps = psi.amplitudes();
    let mag = c.magnitude;
    Ok(LinkObservables {
        magnitude: mag,
        density: dot(amps, &dpsi).re,
        density_sq: norm_sqr(&dpsi),
        density_current: 2.0 * dot(&dpsi, &jpsi).re / mag,
        current: dot(amps, &jpsi).re,
        current_sq: norm_sqr(&jpsi) / (mag * mag),
    })
}

/// s-grid policy: geometric from `s_min`, extended by decades until `p(0)`
/// has dropped below `target_p0` in every probed direction or `s_cap` is
/// reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub s_min: f64,
    pub s_initial_max: f64,
    pub points_per_decade: usize,
    pub target_p0: f64,
    pub s_cap: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            s_min: 1e-4,
            s_initial_max: 0.1,
            points_per_decade: 20,
            target_p0: 0.7,
            s_cap: 3.0,
        }
    }
}

impl GridPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0) || !(self.s_initial_max > self.s_min) || !(self.s_cap >= self.s_initial_max) {
            return Err(Error::InvalidParameter("grid policy needs 0 < s_min < s_initial_max <= s_cap".into()));
        }
        if self.points_per_decade < 2 || !(0.0..1.0).contains(&self.target_p0) {
            return Err(Error::InvalidParameter("grid policy needs >= 2 points per decade and 0 <= target_p0 < 1".into()));
        }
        Ok(())
    }

    pub fn initial(&self) -> Vec<f64> {
        self.between(self.s_min, self.s_initial_max, true)
    }

    fn between(&self, lo: f64, hi: f64, include_lo: bool) -> Vec<f64> {
        let ratio = 10f64.powf(1.0 / self.points_per_decade as f64);
        let mut g = Vec::new();
        if include_lo {
            g.push(0.0);
        }
        let mut s = lo;
        if !include_lo {
            s *= ratio;
        }
        while s < hi * (1.0 + 1e-9) {
            g.push(s);
            s *= ratio;
        }
        g
    }

    /// Next block of points above `last`, or `None` at the cap.
    pub fn extension(&self, last: f64) -> Option<Vec<f64>> {
        if last >= self.s_cap * (1.0 - 1e-9) {
            return None;
        }
        let hi = (last * 10.0).min(self.s_cap);
        let mut g = self.between(last, hi, false);
        if g.last().is_none_or(|&x| x < hi * (1.0 - 1e-9)) {
            g.push(hi);
        }
        Some(g)
    }
}

/// Options shared by the single-link probes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkProbeOptions {
    pub grid: GridPolicy,
    pub mode: EvolutionMode,
    pub duration: f64,
    /// Ancilla truncation; `None` picks the statistics-dependent default.
    pub truncation: Option<u32>,
    pub near_degenerate: bool,
}

impl Default for LinkProbeOptions {
    fn default() -> Self {
        Self {
            grid: GridPolicy::default(),
            mode: EvolutionMode::Full,
            duration: super::DEFAULT_DURATION,
            truncation: None,
            near_degenerate: false,
        }
    }
}

/// Sweeps of one link in both probe directions plus exact references.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkProbe {
    pub from: usize,
    pub to: usize,
    pub forward: ProbeSweep,
    pub backward: ProbeSweep,
    pub observables: LinkObservables,
    /// `[A, A†]` when it is a c-number.
    pub commutator: Option<f64>,
    pub near_degenerate: bool,
}

/// Sweeps the link `(l1, l2)` in both directions on a shared, auto-extended
/// grid.
pub fn probe_link(model: &Model, psi: &StateVector, l1: usize, l2: usize, opts: &LinkProbeOptions) -> Result<LinkProbe> {
    opts.grid.validate()?;
    let setups = [Direction::Forward, Direction::Backward]
        .iter()
        .map(|&d| {
            let mut spec = super::current_coupling(model, l1, l2, d)?;
            spec.mode = opts.mode;
            spec.duration = opts.duration;
            if let Some(t) = opts.truncation {
                spec.truncation = t;
            }
            ProbeSetup::new(model, &spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grid = opts.grid.initial();
    let mut sweeps = setups
        .par_iter()
        .map(|s| s.sweep(psi, &grid))
        .collect::<Result<Vec<_>>>()?;
    loop {
        let done = sweeps
            .iter()
            .all(|sw| sw.distributions.last().is_some_and(|d| d.p0() < opts.grid.target_p0));
        if done {
            break;
        }
        let Some(ext) = opts.grid.extension(*grid.last().unwrap()) else {
            break;
        };
        let more = setups
            .par_iter()
            .map(|s| {
                ext.iter()
                    .map(|&x| {
                        let w = s.spec().ancillas[0].weight;
                        s.simulate(psi, &[w * x])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (sw, m) in sweeps.iter_mut().zip(more) {
            sw.s.extend_from_slice(&ext);
            if m.iter().any(|d| d.leakage_warning) && sw.warnings.is_empty() {
                sw.warnings.push(format!(
                    "ancilla truncation carries more than {:e} probability at its boundary",
                    super::LEAKAGE_THRESHOLD
                ));
            }
            sw.distributions.extend(m);
        }
        grid.extend_from_slice(&ext);
    }
    let j = model.hopping(l1, l2)?;
    let mut it = sweeps.into_iter();
    let mut forward = it.next().unwrap();
    let mut backward = it.next().unwrap();
    for (sw, d) in [(&mut forward, Direction::Forward), (&mut backward, Direction::Backward)] {
        sw.link = Some(super::LinkMeta {
            from: l1,
            to: l2,
            magnitude: j.norm(),
            phase: j.arg(),
            direction: d,
        });
        sw.near_degenerate = opts.near_degenerate;
    }
    let spec = model.basis.spec().ok_or_else(|| Error::InvalidModes("model basis must be a plain sector".into()))?;
    let coeffs = current_coefficients(model, l1, l2, Direction::Forward)?;
    let commutator = if model.representation == Representation::Particle {
        CouplingOperators::commutator_constant(&coeffs, spec)
    } else {
        None
    };
    Ok(LinkProbe {
        from: l1,
        to: l2,
        forward,
        backward,
        observables: link_observables(model, psi, l1, l2)?,
        commutator,
        near_degenerate: opts.near_degenerate,
    })
}

fn base_caveats(probe: &LinkProbe) -> Vec<String> {
    let mut c = Vec::new();
    if probe.near_degenerate {
        c.push("ground state is near-degenerate; extracted values may depend on the solver seed".to_string());
    }
    for w in probe.forward.warnings.iter().chain(&probe.backward.warnings) {
        if !c.contains(w) {
            c.push(w.clone());
        }
    }
    c
}

impl LinkProbe {
    pub fn sweep(&self, d: Direction) -> &ProbeSweep {
        match d {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    /// `<j_{from,to}>` from a linear fit. `direction` selects the sweep for
    /// `p0` and `ptilde`; `antisym` uses both.
    pub fn estimate_first_moment(&self, estimator: FirstMomentEstimator, direction: Direction, delta_p: f64) -> Result<ExtractionResult> {
        let o = &self.observables;
        let mut caveats = base_caveats(self);
        let (wf, value, sweeps) = match estimator {
            FirstMomentEstimator::P0 | FirstMomentEstimator::Ptilde => {
                let sw = self.sweep(direction);
                let p0 = sw.p0();
                let y = if estimator == FirstMomentEstimator::P0 {
                    p0.clone()
                } else {
                    let kappa = match self.commutator {
                        Some(k) => k,
                        None => {
                            caveats.push(
                                "[A, A†] is not a c-number for this system; ptilde uses kappa = sum |lambda|^2 and its leading error term is not fully cancelled"
                                    .to_string(),
                            );
                            2.0
                        }
                    };
                    ptilde(sw, kappa)
                };
                let wf = fit_window(&sw.s, &y, &[&y], delta_p, 1)?;
                let x = -wf.slope();
                (wf, direction.sign() * o.magnitude * (x - o.density), 1)
            }
            FirstMomentEstimator::Antisym => {
                let (pf, pb) = (self.forward.p0(), self.backward.p0());
                let n = pf.len().min(pb.len());
                let y: Vec<f64> = (0..n).map(|i| 0.5 * (pf[i] - pb[i])).collect();
                let wf = fit_window(&self.forward.s[..n], &y, &[&pf[..n], &pb[..n]], delta_p, 1)?;
                (wf.clone(), -wf.slope() * o.magnitude, 2)
            }
        };
        if wf.exhausted {
            caveats.push("estimator did not leave its window within the s grid".to_string());
        }
        Ok(ExtractionResult {
            estimator: estimator.name().to_string(),
            value,
            window: wf.window,
            fit_order: 1,
            residual: wf.fit.residual,
            exact: None,
            relative_error: None,
            caveats,
            sweeps_used: sweeps,
        }
        .with_exact(o.current))
    }

    /// `<X>` and `<(A†A)^2>` from a polynomial fit of one sweep.
    fn moments_from(&self, d: Direction, order: usize, delta_p: f64, route: VarianceRoute) -> Result<(f64, f64, WindowFit)> {
        let sw = self.sweep(d);
        let p0 = sw.p0();
        let commuted = match route {
            VarianceRoute::Auto => self.commutator,
            VarianceRoute::Commuted => Some(
                self.commutator
                    .ok_or_else(|| Error::Unsupported("[A, A†] is not a c-number for this system".into()))?,
            ),
            VarianceRoute::General => None,
        };
        match commuted {
            Some(kappa) => {
                let wf = fit_window(&sw.s, &p0, &[&p0], delta_p, order)?;
                let x = -wf.slope();
                Ok((x, 2.0 * (wf.curvature() + kappa * x / 6.0), wf))
            }
            None => {
                let y: Vec<f64> = sw.distributions.iter().map(|d| d.p0() - d.p2(0) / 3.0).collect();
                let wf = fit_window(&sw.s, &y, &[&p0], delta_p, order)?;
                Ok((-wf.slope(), 3.0 * wf.curvature(), wf))
            }
        }
    }

    /// Sweep with the smaller `<A†A>`, i.e. probing against the flow.
    pub fn against_flow(&self, delta_p: f64) -> Result<Direction> {
        let xf = self.moments_from(Direction::Forward, 1, delta_p, VarianceRoute::General)?.0;
        let xb = self.moments_from(Direction::Backward, 1, delta_p, VarianceRoute::General)?.0;
        Ok(if xf <= xb { Direction::Forward } else { Direction::Backward })
    }

    /// `(<j^2> - <j>^2) / |J|^2` from the `s^2` coefficient of `p(0)`.
    pub fn estimate_variance(&self, order: usize, delta_p: f64, aux: VarianceAux) -> Result<ExtractionResult> {
        self.estimate_variance_with(order, delta_p, aux, VarianceRoute::Auto)
    }

    pub fn estimate_variance_with(&self, order: usize, delta_p: f64, aux: VarianceAux, route: VarianceRoute) -> Result<ExtractionResult> {
        if order < 2 {
            return Err(Error::InvalidParameter("variance fits need order >= 2".into()));
        }
        let o = &self.observables;
        let mut caveats = base_caveats(self);
        let (mean, second, wf, sweeps) = match aux {
            VarianceAux::Symmetrized => {
                let (xf, qf, wff) = self.moments_from(Direction::Forward, order, delta_p, route)?;
                let (xb, qb, wfb) = self.moments_from(Direction::Backward, order, delta_p, route)?;
                let wf = if wff.window.points <= wfb.window.points { wff } else { wfb };
                (0.5 * (xf - xb), 0.5 * (qf + qb) - o.density_sq, wf, 2)
            }
            VarianceAux::Anticommutator => {
                let d = self.against_flow(delta_p)?;
                let (x, q, wf) = self.moments_from(d, order, delta_p, route)?;
                let sg = d.sign();
                (sg * (x - o.density), q - o.density_sq - sg * o.density_current, wf, 1)
            }
        };
        if wf.exhausted {
            caveats.push("estimator did not leave its window within the s grid".to_string());
        }
        Ok(ExtractionResult {
            estimator: format!("variance_order{order}_{}", aux_name(aux)),
            value: second - mean * mean,
            window: wf.window,
            fit_order: order,
            residual: wf.fit.residual,
            exact: None,
            relative_error: None,
            caveats,
            sweeps_used: sweeps,
        }
        .with_exact(o.variance()))
    }
}

fn aux_name(aux: VarianceAux) -> &'static str {
    match aux {
        VarianceAux::Symmetrized => "symmetrized",
        VarianceAux::Anticommutator => "anticommutator",
    }
}

/// Exact `<O>` for an observable given as terms.
pub fn exact_expectation(model: &Model, psi: &StateVector, terms: &[MonomialTerm]) -> Result<f64> {
    let op = assemble(&model.basis, terms)?;
    Ok(expectation(psi, &op)?.re)
}
