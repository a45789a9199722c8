//! The subcommands. Each builds a [`Report`]; writing it is left to the
//! caller so that tests can inspect results directly.

use std::error::Error as StdError;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use weakprobe_core::basis::ModeSpec;
use weakprobe_core::linalg::{expectation, ground_state, GroundState, LanczosOptions, StateVector, C64};
use weakprobe_core::models::{build_hh_ladder, build_plaquette, build_spin_xy, build_tight_binding, Geometry, LadderSpec, Lattice, Link, Model, PlaquetteSpec, Representation, SpinCoupling};
use weakprobe_core::perturbation::{p0_coefficients, CouplingLadder, CouplingOperators};
use weakprobe_core::probe::*;
use weakprobe_core::trapped_ion::*;

use crate::config::{ModelConfig, ProbeConfig, RunConfig, Scheme, Statistics};
use crate::report::{Cell, Report, Table};

pub type CmdResult<T> = Result<T, Box<dyn StdError + Send + Sync>>;

/// Environment variable capping the Hilbert-space dimension of any single
/// simulation.
pub const MAX_DIM_VAR: &str = "WEAKPROBE_MAX_DIM";
pub const DEFAULT_MAX_DIM: usize = 20_000_000;

pub fn max_dim() -> CmdResult<usize> {
    match std::env::var(MAX_DIM_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{MAX_DIM_VAR} must be a positive integer, got {v:?}").into()),
        Err(_) => Ok(DEFAULT_MAX_DIM),
    }
}

fn check_dim(what: &str, dim: usize, cap: usize) -> CmdResult<()> {
    if dim > cap {
        return Err(format!("{what} has dimension {dim}, above the cap of {cap} ({MAX_DIM_VAR})").into());
    }
    Ok(())
}

fn modes(stats: Statistics, sites: usize) -> CmdResult<ModeSpec> {
    Ok(match stats {
        Statistics::Boson => ModeSpec::bosons(sites)?,
        Statistics::HardCore => ModeSpec::hard_core(sites)?,
        Statistics::Fermion => ModeSpec::fermions(sites)?,
    })
}

/// Builds the configured model; `ladder_override` replaces `(K, U)` of a
/// ladder.
pub fn build_model(cfg: &ModelConfig, ladder_override: Option<(f64, f64)>) -> CmdResult<Model> {
    Ok(match cfg {
        ModelConfig::Ladder {
            rungs,
            particles,
            j,
            k,
            flux,
            u,
            boundary,
            max_occupancy,
            ..
        } => {
            let (k, u) = ladder_override.unwrap_or((*k, u.unwrap_or(f64::INFINITY)));
            let mut spec = LadderSpec::new(*rungs, *j, k, *flux, u);
            spec.boundary = *boundary;
            spec.max_occupancy = *max_occupancy;
            build_hh_ladder(&spec, *particles)?
        }
        ModelConfig::Triangle {
            particles,
            statistics,
            flux,
            magnitudes,
            u,
        } => {
            let h = magnitudes.map(|m| C64::from_polar(m, flux / 3.0));
            build_plaquette(&PlaquetteSpec::new(h, 1.0)?, modes(*statistics, 3)?, *particles, *u)?
        }
        ModelConfig::Lattice {
            sites,
            particles,
            statistics,
            hoppings,
            u,
        } => {
            let links = hoppings
                .iter()
                .map(|h| Link {
                    from: h.from,
                    to: h.to,
                    amplitude: C64::from_polar(h.magnitude, h.phase),
                })
                .collect();
            build_tight_binding(Lattice::new(*sites, links)?, modes(*statistics, *sites)?, *particles, *u)?
        }
        ModelConfig::Spins { sites, down, couplings, zz } => {
            let c: Vec<SpinCoupling> = couplings
                .iter()
                .map(|h| SpinCoupling {
                    i: h.from,
                    j: h.to,
                    value: C64::from_polar(h.magnitude, h.phase),
                })
                .collect();
            let z: Vec<(usize, usize, f64)> = zz.iter().map(|z| (z.from, z.to, z.value)).collect();
            build_spin_xy(*sites, &c, &z, *down)?
        }
    })
}

fn solve(model: &Model, cfg: &RunConfig) -> CmdResult<GroundState> {
    let opts = LanczosOptions {
        tol: cfg.solver.tol,
        seed: cfg.seed,
        krylov_dim: cfg.solver.krylov_dim,
        max_restarts: cfg.solver.max_restarts,
    };
    Ok(ground_state(&model.hamiltonian, &opts)?)
}

fn prepare(cfg: &RunConfig, ladder_override: Option<(f64, f64)>) -> CmdResult<(Model, GroundState)> {
    let model = build_model(&cfg.model, ladder_override)?;
    check_dim("system sector", model.basis.dim(), max_dim()?)?;
    let gs = solve(&model, cfg)?;
    Ok((model, gs))
}

fn is_ladder(m: &Model) -> bool {
    matches!(m.geometry, Geometry::Ladder(_))
}

fn chiral_exact(m: &Model, psi: &StateVector) -> CmdResult<f64> {
    Ok(expectation(psi, &m.chiral_current()?)?.re)
}

pub fn cmd_ground_state(cfg: &RunConfig) -> CmdResult<Report> {
    let (model, gs) = prepare(cfg, None)?;
    let psi = &gs.state;
    let mut r = Report::new("ground_state", cfg.seed);
    r.scalar("dimension", model.basis.dim());
    r.scalar("energy", gs.energy);
    r.scalar("gap", gs.gap);
    r.scalar("near_degenerate", gs.near_degenerate);
    r.scalar("residual", gs.residual);
    if is_ladder(&model) {
        r.scalar("chiral_current", chiral_exact(&model, psi)?);
    }
    if matches!(model.geometry, Geometry::Plaquette(_)) {
        r.scalar("loop_current", expectation(psi, &model.loop_current()?)?.re);
    }
    let currents = model.link_currents(psi)?;
    let variances = model.link_variances(psi)?;
    if !currents.is_empty() {
        r.scalar("mean_current_variance", model.mean_current_variance(psi)?);
    }
    let mut t = Table::new("links", &["from", "to", "magnitude", "current", "variance"]);
    for ((a, b, j), v) in currents.into_iter().zip(variances) {
        t.push(vec![a.into(), b.into(), model.hopping(a, b)?.norm().into(), j.into(), v.into()]);
    }
    r.tables.push(t);
    if gs.near_degenerate {
        r.messages.push(format!("ground state is near-degenerate (gap {:.3e})", gs.gap));
    }
    Ok(r)
}

fn link_options(p: &ProbeConfig) -> LinkProbeOptions {
    LinkProbeOptions {
        grid: p.grid.into(),
        mode: p.mode,
        truncation: p.truncation,
        ..Default::default()
    }
}

/// Readout errors and shot noise applied to every distribution of a probe.
fn degrade(probe: &mut LinkProbe, p: &ProbeConfig, seed: u64) -> CmdResult<()> {
    let det = p.detection.map(|d| DetectionErrorModel::new(d.alpha, d.beta)).transpose()?;
    if det.is_none() && p.shots.is_none() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for sweep in [&mut probe.forward, &mut probe.backward] {
        for d in &mut sweep.distributions {
            let mut x = d.clone();
            if let Some(det) = &det {
                x = det.apply(&x)?;
            }
            if let Some(n) = p.shots {
                x = x.sample_shots(n, &mut rng)?;
            }
            if let (Some(det), Some(true)) = (&det, p.detection.map(|d| d.correct)) {
                x = det.invert(&x)?;
            }
            *d = x;
        }
    }
    Ok(())
}

fn extraction_columns() -> Vec<&'static str> {
    vec![
        "from",
        "to",
        "quantity",
        "estimator",
        "direction",
        "value",
        "exact",
        "relative_error",
        "s_min",
        "s_max",
        "points",
        "fit_order",
        "residual",
        "status",
    ]
}

fn extraction_row(from: Cell, to: Cell, quantity: &str, estimator: &str, direction: &str, r: Result<ExtractionResult, String>) -> Vec<Cell> {
    let mut row = vec![from, to, quantity.into(), estimator.into(), direction.into()];
    match r {
        Ok(e) => {
            let status = if e.caveats.is_empty() { "ok".to_string() } else { e.caveats.join("; ") };
            row.extend([
                e.value.into(),
                e.exact.into(),
                e.relative_error.into(),
                e.window.s_min.into(),
                e.window.s_max.into(),
                e.window.points.into(),
                e.fit_order.into(),
                e.residual.into(),
                status.into(),
            ]);
        }
        Err(msg) => {
            row.extend(std::iter::repeat(Cell::Missing).take(8));
            row.push(format!("error: {msg}").into());
        }
    }
    row
}

fn dir_name(d: Direction) -> &'static str {
    match d {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    }
}

fn ladder_of(m: &Model) -> CouplingLadder {
    match m.representation {
        Representation::Particle => CouplingLadder::Annihilate,
        Representation::SpinHolsteinPrimakoff => CouplingLadder::Create,
    }
}

fn sweep_rows(model: &Model, psi: &StateVector, probe: &LinkProbe, t: &mut Table) -> CmdResult<()> {
    let kappa = probe.commutator.unwrap_or(2.0);
    for d in [Direction::Forward, Direction::Backward] {
        let coeffs = current_coefficients(model, probe.from, probe.to, d)?;
        let mo = CouplingOperators::new(&model.basis, &[coeffs], ladder_of(model))?.moments(psi)?;
        let (x, c2) = p0_coefficients(&mo);
        let sw = probe.sweep(d);
        let pt = ptilde(sw, kappa);
        for (i, (&s, dist)) in sw.s.iter().zip(&sw.distributions).enumerate() {
            t.push(vec![
                probe.from.into(),
                probe.to.into(),
                dir_name(d).into(),
                s.into(),
                dist.p0().into(),
                dist.p1(0).into(),
                dist.p2(0).into(),
                pt[i].into(),
                (1.0 - x * s).into(),
                (1.0 - x * s + c2 * s * s).into(),
            ]);
        }
    }
    Ok(())
}

pub fn cmd_probe(cfg: &RunConfig) -> CmdResult<Report> {
    let (model, gs) = prepare(cfg, None)?;
    let psi = &gs.state;
    let p = &cfg.probe;
    let mut r = Report::new("probe", cfg.seed);
    r.scalar("dimension", model.basis.dim());
    r.scalar("energy", gs.energy);
    match p.scheme {
        Scheme::Links => probe_links(&model, psi, cfg, &mut r)?,
        Scheme::Global => {
            let opts = GlobalOptions {
                link: link_options(p),
                delta_p: p.global_delta_p,
                fit_order: p.global_fit_order,
                dimension_budget: max_dim()?,
            };
            let g = global_chiral_probe(&model, psi, &opts)?;
            let mut t = Table::new("extraction", &extraction_columns());
            t.push(extraction_row(Cell::Missing, Cell::Missing, "chiral_current", "global", "", Ok(g.current)));
            t.push(extraction_row(Cell::Missing, Cell::Missing, "chiral_variance", "global", "", Ok(g.variance)));
            r.tables.push(t);
        }
        Scheme::Loop => {
            let opts = LoopOptions {
                link: link_options(p),
                estimator: p.estimators[0],
                delta_p: p.window(p.estimators[0]),
                fit_order: p.loop_fit_order,
            };
            let res = loop_probe(&model, psi, p.loop_scheme, &opts)?;
            r.scalar("sweeps_used", res.sweeps_used);
            let mut t = Table::new("extraction", &extraction_columns());
            t.push(extraction_row(Cell::Missing, Cell::Missing, "loop_current", &res.estimator.clone(), "", Ok(res)));
            r.tables.push(t);
        }
        Scheme::Correlation => {
            let [a, b] = p.pair.expect("validated");
            let opts = CorrelationOptions {
                mode: p.mode,
                ..Default::default()
            };
            let res = correlation_probe(&model, psi, (a[0], a[1]), (b[0], b[1]), &opts)?;
            let kind = format!("{:?}", pair_kind((a[0], a[1]), (b[0], b[1]))?).to_lowercase();
            let mut t = Table::new("extraction", &extraction_columns());
            t.push(extraction_row(
                Cell::Text(format!("{}-{}", a[0], a[1])),
                Cell::Text(format!("{}-{}", b[0], b[1])),
                &format!("correlation_{kind}"),
                &res.estimator.clone(),
                "",
                Ok(res),
            ));
            r.tables.push(t);
        }
    }
    Ok(r)
}

fn probe_links(model: &Model, psi: &StateVector, cfg: &RunConfig, r: &mut Report) -> CmdResult<()> {
    let p = &cfg.probe;
    let links: Vec<(usize, usize)> = match &p.links {
        Some(l) => l.iter().map(|l| (l[0], l[1])).collect(),
        None => model.lattice.links().iter().map(|l| (l.from, l.to)).collect(),
    };
    let truncation = p.truncation.unwrap_or(2) as usize;
    check_dim("probe", model.basis.dim() * (truncation + 1), max_dim()?)?;
    let opts = link_options(p);
    let probes: Vec<Result<LinkProbe, String>> = links
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let mut probe = probe_link(model, psi, a, b, &opts).map_err(|e| e.to_string())?;
            degrade(&mut probe, p, cfg.seed.wrapping_add(i as u64)).map_err(|e| e.to_string())?;
            Ok(probe)
        })
        .collect();
    let mut sweeps = Table::new(
        "sweeps",
        &["from", "to", "direction", "s", "p0", "p1", "p2", "ptilde0", "linear_prediction", "quadratic_prediction"],
    );
    let mut ext = Table::new("extraction", &extraction_columns());
    let mut ok = Vec::new();
    for (&(a, b), probe) in links.iter().zip(probes) {
        let probe = match probe {
            Ok(probe) => probe,
            Err(msg) => {
                r.messages.push(format!("link {a}-{b}: {msg}"));
                ext.push(extraction_row(a.into(), b.into(), "current", "", "", Err(msg)));
                continue;
            }
        };
        sweep_rows(model, psi, &probe, &mut sweeps)?;
        for &e in &p.estimators {
            let d = if e == FirstMomentEstimator::Antisym { "both" } else { dir_name(p.direction) };
            let res = probe.estimate_first_moment(e, p.direction, p.window(e)).map_err(|e| e.to_string());
            ext.push(extraction_row(a.into(), b.into(), "current", e.name(), d, res));
        }
        let res = probe
            .estimate_variance(p.variance_order, p.variance_delta_p, p.variance_aux)
            .map_err(|e| e.to_string());
        let name = format!("order{}_{:?}", p.variance_order, p.variance_aux).to_lowercase();
        ext.push(extraction_row(a.into(), b.into(), "variance", &name, "", res));
        ok.push(probe);
    }
    if is_ladder(model) && ok.len() == links.len() && p.links.is_none() {
        for &e in &p.estimators {
            match chiral_from_links(model, &ok, e, p.direction, p.window(e)) {
                Ok(c) => {
                    r.scalar(&format!("chiral_current_{}", e.name()), c.value);
                    r.scalar("chiral_current_exact", c.exact);
                }
                Err(err) => r.messages.push(format!("chiral current from {}: {err}", e.name())),
            }
        }
        match mean_variance_from_links(&ok, p.variance_order, p.variance_delta_p, p.variance_aux) {
            Ok(v) => {
                r.scalar("mean_current_variance", v.value);
                r.scalar("mean_current_variance_exact", v.exact);
            }
            Err(err) => r.messages.push(format!("mean current variance: {err}")),
        }
    }
    r.scalars.dedup_by(|a, b| a.0 == b.0);
    r.tables.push(sweeps);
    r.tables.push(ext);
    Ok(())
}

pub fn cmd_phase_scan(cfg: &RunConfig) -> CmdResult<Report> {
    let scan = cfg.scan.as_ref().ok_or("phase-scan needs a [scan] section")?;
    let ModelConfig::Ladder { u, .. } = &cfg.model else {
        return Err("phase-scan needs a ladder model".into());
    };
    let us = scan.u.clone().unwrap_or_else(|| vec![u.unwrap_or(f64::INFINITY)]);
    let cells: Vec<(f64, f64)> = us.iter().flat_map(|&u| scan.k.iter().map(move |&k| (k, u))).collect();
    let p = &cfg.probe;
    let rows: Vec<Vec<Cell>> = cells
        .par_iter()
        .map(|&(k, u)| {
            let mut row: Vec<Cell> = vec![k.into(), u.into()];
            let cell = || -> CmdResult<Vec<Cell>> {
                let (model, gs) = prepare(cfg, Some((k, u)))?;
                let psi = &gs.state;
                let jc = chiral_exact(&model, psi)?;
                let var = model.mean_current_variance(psi)?;
                let mut out: Vec<Cell> = vec![gs.energy.into(), gs.gap.into(), jc.into(), Cell::Missing, var.into(), Cell::Missing];
                if scan.extract {
                    let probes = probe_all_links(&model, psi, &link_options(p))?;
                    let c = chiral_from_links(&model, &probes, scan.estimator, p.direction, p.window(scan.estimator))?;
                    out[3] = c.value.into();
                    let v = mean_variance_from_links(&probes, p.variance_order, p.variance_delta_p, p.variance_aux)?;
                    out[5] = v.value.into();
                }
                Ok(out)
            };
            match cell() {
                Ok(c) => {
                    row.extend(c);
                    row.push("ok".into());
                }
                Err(e) => {
                    row.extend(std::iter::repeat(Cell::Missing).take(6));
                    row.push(format!("error: {e}").into());
                }
            }
            row
        })
        .collect();
    let mut t = Table::new(
        "phase_scan",
        &[
            "k",
            "u",
            "energy",
            "gap",
            "chiral_current_exact",
            "chiral_current_extracted",
            "mean_variance_exact",
            "mean_variance_extracted",
            "status",
        ],
    );
    let mut r = Report::new("phase_scan", cfg.seed);
    r.scalar("cells", rows.len());
    r.scalar("estimator", scan.estimator.name());
    for row in rows {
        if let Cell::Text(s) = &row[8] {
            if s != "ok" {
                r.messages.push(format!("cell K={:?} U={:?}: {s}", row[0], row[1]));
            }
        }
        t.push(row);
    }
    r.tables.push(t);
    Ok(r)
}

pub fn cmd_trapped_ion(cfg: &RunConfig) -> CmdResult<Report> {
    let ion = cfg.ion.as_ref().ok_or("trapped-ion needs an [ion] section")?;
    if !matches!(cfg.model, ModelConfig::Spins { .. }) {
        return Err("trapped-ion needs a spins model".into());
    }
    let (model, gs) = prepare(cfg, None)?;
    let psi = &gs.state;
    let anc = thermal_distribution(ion.omega, ion.temperature, ion.n_max)?;
    let [l1, l2] = ion.link;
    let mut r = Report::new("trapped_ion", cfg.seed);
    r.scalar("energy", gs.energy);
    r.scalar("n_max", anc.n_max);
    r.scalar("tail_mass", anc.tail_mass);
    r.scalar("exact_current", model.link_current(l1, l2).and_then(|c| expectation(psi, &c.operator)).map(|v| v.re)?);
    r.messages.extend(anc.warnings.iter().cloned());

    let mut ab = Table::new("alpha_beta", &["n", "p_n", "alpha_n", "beta_n", "a_n", "b_n"]);
    for n in 0..=anc.n_max {
        let (a, b) = anc.rate_coefficients(n);
        ab.push(vec![n.into(), anc.p(n as isize).into(), anc.alpha(n).into(), anc.beta(n).into(), a.into(), b.into()]);
    }
    r.tables.push(ab);

    let mut ext = Table::new(
        "extraction",
        &["channel", "value", "exact", "relative_error", "s_min", "s_max", "points", "fit_order", "estimator", "status"],
    );
    for &n in &ion.channels {
        let mut row: Vec<Cell> = vec![n.into()];
        match extract_spin_current(&model, psi, l1, l2, &anc, &ion.options(n)) {
            Ok(e) => {
                let status = if e.caveats.is_empty() { "ok".to_string() } else { e.caveats.join("; ") };
                row.extend([
                    e.value.into(),
                    e.exact.into(),
                    e.relative_error.into(),
                    e.window.s_min.into(),
                    e.window.s_max.into(),
                    e.window.points.into(),
                    e.fit_order.into(),
                    e.estimator.into(),
                    status.into(),
                ]);
            }
            Err(e) => {
                r.messages.push(format!("channel {n}: {e}"));
                row.extend(std::iter::repeat(Cell::Missing).take(8));
                row.push(format!("error: {e}").into());
            }
        }
        ext.push(row);
    }
    r.tables.push(ext);

    // raw phonon statistics with both expansions next to them
    let opts = ion.options(0);
    let grid = opts.grid.initial();
    let top = ion.channels.iter().copied().max().unwrap_or(0);
    let mut dist = Table::new("distributions", &["direction", "s", "n", "simulated", "first_order", "second_order"]);
    for d in [Direction::Forward, Direction::Backward] {
        let sb = ion_current_coupling(&model, l1, l2, opts.drives, d)?;
        let probe = ThermalProbe::new(&model, &sideband_spec(&sb, &anc, opts.mode), &anc)?;
        let mo = CouplingOperators::new(&model.basis, &[sb.coefficients()], CouplingLadder::Create)?.fock_moments(psi, 0)?;
        let sims = probe.sweep(psi, &grid)?;
        for (&s, sim) in grid.iter().zip(&sims) {
            let first = predict_thermal_probabilities(&anc, mo.x, mo.xr, s);
            let second = predict_thermal_second_order(&anc, &mo, s)?;
            for n in 0..=top {
                let at = |v: &[f64]| v.get(n).copied().unwrap_or(0.0);
                dist.push(vec![dir_name(d).into(), s.into(), n.into(), at(sim).into(), at(&first).into(), at(&second).into()]);
            }
        }
    }
    r.tables.push(dist);
    Ok(r)
}

/// Parses and checks the config, and reports the model dimension.
pub fn cmd_validate(cfg: &RunConfig) -> CmdResult<Report> {
    let model = build_model(&cfg.model, None)?;
    let mut r = Report::new("validate_config", cfg.seed);
    r.scalar("schema_version", crate::config::SCHEMA_VERSION as usize);
    r.scalar("dimension", model.basis.dim());
    r.scalar("links", model.lattice.links().len());
    check_dim("system sector", model.basis.dim(), max_dim()?)?;
    Ok(r)
}
