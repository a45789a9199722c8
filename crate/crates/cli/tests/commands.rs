use std::path::PathBuf;

use weakprobe_cli::commands::*;
use weakprobe_cli::config::RunConfig;
use weakprobe_cli::report::{Cell, Format, Report, Table};
use weakprobe_core::linalg::{ground_state, LanczosOptions};
use weakprobe_core::probe::{probe_link, Direction, EvolutionMode, FirstMomentEstimator, LinkProbeOptions};
use weakprobe_core::trapped_ion::{map_state_to_particles, mapped_particle_model};

fn shipped(name: &str) -> RunConfig {
    RunConfig::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn float(c: &Cell) -> f64 {
    match c {
        Cell::Float(v) => *v,
        other => panic!("expected a number, got {other:?}"),
    }
}

fn col(t: &Table, name: &str) -> Vec<Cell> {
    let i = t.column(name).unwrap();
    t.rows.iter().map(|r| r[i].clone()).collect()
}

fn rows_where<'a>(t: &'a Table, name: &str, value: &str) -> Vec<&'a Vec<Cell>> {
    let i = t.column(name).unwrap();
    t.rows.iter().filter(|r| r[i] == Cell::Text(value.into())).collect()
}

#[test]
fn zero_flux_has_no_currents() {
    let mut cfg = shipped("ladder_ground_state.toml");
    if let weakprobe_cli::config::ModelConfig::Ladder { flux, .. } = &mut cfg.model {
        *flux = 0.0;
    }
    let r = cmd_ground_state(&cfg).unwrap();
    for j in col(r.table("links").unwrap(), "current") {
        assert!(float(&j).abs() < 1e-10);
    }
    assert!(float(r.get("chiral_current").unwrap()).abs() < 1e-10);
}

#[test]
fn ground_state_is_deterministic() {
    let cfg = shipped("ladder_ground_state.toml");
    let a = cmd_ground_state(&cfg).unwrap();
    let b = cmd_ground_state(&cfg).unwrap();
    assert_eq!(a.render(Format::Csv), b.render(Format::Csv));
    assert_eq!(a.render(Format::Json), b.render(Format::Json));
}

#[test]
fn probe_sweep_starts_at_the_undisturbed_ancilla() {
    let cfg = shipped("ladder_ground_state.toml");
    let r = cmd_probe(&cfg).unwrap();
    let sweeps = r.table("sweeps").unwrap();
    let first = &sweeps.rows[0];
    assert_eq!(float(&first[sweeps.column("s").unwrap()]), 0.0);
    assert_eq!(float(&first[sweeps.column("p0").unwrap()]), 1.0);
    assert_eq!(float(&first[sweeps.column("linear_prediction").unwrap()]), 1.0);
    // the linear prediction leaves p0 before the quadratic one does
    let i = sweeps.column("s").unwrap();
    for row in sweeps.rows.iter().filter(|r| (1e-4..1e-2).contains(&float(&r[i]))) {
        let p0 = float(&row[sweeps.column("p0").unwrap()]);
        let l = float(&row[sweeps.column("linear_prediction").unwrap()]);
        let q = float(&row[sweeps.column("quadratic_prediction").unwrap()]);
        assert!((p0 - q).abs() <= (p0 - l).abs() + 1e-12);
    }
}

#[test]
fn antisymmetric_estimate_flips_with_the_link_orientation() {
    let mut cfg = shipped("ladder_ground_state.toml");
    let value = |cfg: &RunConfig| {
        let r = cmd_probe(cfg).unwrap();
        let t = r.table("extraction").unwrap();
        let row = rows_where(t, "estimator", "antisym")[0].clone();
        float(&row[t.column("value").unwrap()])
    };
    cfg.probe.links = Some(vec![[0, 3]]);
    let a = value(&cfg);
    cfg.probe.links = Some(vec![[3, 0]]);
    let b = value(&cfg);
    assert!(a.abs() > 0.1);
    assert!((a + b).abs() < 1e-10 * a.abs(), "{a} vs {b}");
}

#[test]
fn failing_links_do_not_abort_the_others() {
    let mut cfg = shipped("ladder_ground_state.toml");
    cfg.probe.links = Some(vec![[0, 1], [0, 5], [1, 2]]);
    let r = cmd_probe(&cfg).unwrap();
    let t = r.table("extraction").unwrap();
    let status = col(t, "status");
    assert!(status.iter().any(|s| matches!(s, Cell::Text(m) if m.starts_with("error"))));
    assert_eq!(rows_where(t, "quantity", "variance").len(), 2);
    assert!(r.messages.iter().any(|m| m.contains("0-5")));
}

#[test]
fn single_cell_scan_composes_ground_state_and_probe() {
    let mut cfg = shipped("phase_scan_l3.toml");
    let k = 1.5;
    cfg.scan.as_mut().unwrap().k = vec![k];
    if let weakprobe_cli::config::ModelConfig::Ladder { k: mk, .. } = &mut cfg.model {
        *mk = k;
    }
    let scan = cmd_phase_scan(&cfg).unwrap();
    let row = &scan.table("phase_scan").unwrap().rows[0];
    let gs = cmd_ground_state(&cfg).unwrap();
    let probe = cmd_probe(&cfg).unwrap();
    assert_eq!(row[4], *gs.get("chiral_current").unwrap());
    assert_eq!(row[5], *probe.get("chiral_current_ptilde").unwrap());
    assert_eq!(row[6], *gs.get("mean_current_variance").unwrap());
    assert_eq!(row[7], *probe.get("mean_current_variance").unwrap());
}

#[test]
fn scan_records_failed_cells_in_place() {
    let mut cfg = shipped("phase_scan_l3.toml");
    cfg.scan.as_mut().unwrap().k = vec![1.0, -1.0];
    cfg.scan.as_mut().unwrap().extract = false;
    let r = cmd_phase_scan(&cfg).unwrap();
    let t = r.table("phase_scan").unwrap();
    assert_eq!(t.rows.len(), 2);
    let status = col(t, "status");
    assert_eq!(status[0], Cell::Text("ok".into()));
    assert!(matches!(&status[1], Cell::Text(m) if m.contains("rung hopping")));
    assert_eq!(t.rows[1][4], Cell::Missing);
    assert_eq!(r.messages.len(), 1);
}

#[test]
fn zero_temperature_ion_run_equals_particle_pipeline() {
    let mut cfg = shipped("ion_ring.toml");
    let ion = cfg.ion.as_mut().unwrap();
    ion.temperature = 0.0;
    ion.channels = vec![0];
    ion.fit_order = Some(1);
    let r = cmd_trapped_ion(&cfg).unwrap();
    let t = r.table("extraction").unwrap();
    let value = float(&t.rows[0][t.column("value").unwrap()]);

    let model = build_model(&cfg.model, None).unwrap();
    let opts = LanczosOptions {
        seed: cfg.seed,
        ..Default::default()
    };
    let psi = ground_state(&model.hamiltonian, &opts).unwrap().state;
    let pm = mapped_particle_model(&model).unwrap();
    let pp = map_state_to_particles(&model, &pm, &psi).unwrap();
    let o = cfg.ion.as_ref().unwrap().options(0);
    let lp = probe_link(
        &pm,
        &pp,
        0,
        1,
        &LinkProbeOptions {
            grid: o.grid,
            ..Default::default()
        },
    )
    .unwrap();
    let particle = lp.estimate_first_moment(FirstMomentEstimator::Antisym, Direction::Forward, o.delta_p).unwrap();
    assert!((value - particle.value).abs() < 1e-10, "{value} vs {}", particle.value);
}

#[test]
fn thermal_ion_run_reports_every_channel() {
    let mut cfg = shipped("ion_ring.toml");
    let ion = cfg.ion.as_mut().unwrap();
    ion.channels = vec![0, 1, 2];
    // without the spin Hamiltonian the expansions are complete at each order
    ion.mode = Some(EvolutionMode::PulseOnly);
    let r = cmd_trapped_ion(&cfg).unwrap();
    let t = r.table("extraction").unwrap();
    for e in col(t, "relative_error") {
        assert!(float(&e) < 0.05);
    }
    let Some(Cell::Int(n_max)) = r.get("n_max") else { panic!("n_max missing") };
    assert_eq!(r.table("alpha_beta").unwrap().rows.len(), *n_max as usize + 1);
    // P(n) against the expansions: first order is off by O(s^2)
    let d = r.table("distributions").unwrap();
    let (s, sim, first, second) = (col(d, "s"), col(d, "simulated"), col(d, "first_order"), col(d, "second_order"));
    for i in 0..d.rows.len() {
        let v = float(&s[i]);
        if v > 0.0 && v <= 0.01 {
            let e1 = (float(&sim[i]) - float(&first[i])).abs();
            let e2 = (float(&sim[i]) - float(&second[i])).abs();
            assert!(e1 < 10.0 * v * v, "s = {v}: {e1}");
            assert!(e2 < 10.0 * v * v * v, "s = {v}: {e2}");
        }
    }
}

#[test]
fn degenerate_channel_is_listed_not_fatal() {
    let mut cfg = shipped("ion_ring.toml");
    let ion = cfg.ion.as_mut().unwrap();
    ion.temperature = 0.0;
    ion.channels = vec![0, 2];
    let r = cmd_trapped_ion(&cfg).unwrap();
    let status = col(r.table("extraction").unwrap(), "status");
    assert_eq!(status[0], Cell::Text("ok".into()));
    assert!(matches!(&status[1], Cell::Text(m) if m.starts_with("error")));
    assert!(r.messages.iter().any(|m| m.starts_with("channel 2")));
}

#[test]
fn csv_floats_round_trip() {
    let mut r = Report::new("x", 0);
    let v = 0.1 + 0.2;
    r.scalar("v", v);
    r.scalar("tiny", -1.234e-300);
    let csv = r.summary_table().to_csv();
    let line = csv.lines().nth(1).unwrap();
    assert_eq!(line, "v,3.0000000000000004e-1");
    assert_eq!(line.split(',').nth(1).unwrap().parse::<f64>().unwrap(), v);
    let tiny = csv.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    assert_eq!(tiny.parse::<f64>().unwrap(), -1.234e-300);
}
