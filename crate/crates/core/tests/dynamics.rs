use acmob::config::preset_experiment;
use acmob::diagnostics::count_components;
use acmob::physics::Mobility;
use acmob::timestepping::run_simulation;

struct Relaxation {
    reached_pure_phase: Option<f64>,
    final_max_norm: f64,
    final_energy: f64,
    components: usize,
}

fn relax_flower(mobility: Mobility) -> Relaxation {
    let mut cfg = preset_experiment("mobility_effect_2d").unwrap();
    cfg.physics.mobility = mobility;
    let out = run_simulation(&cfg.simulation().unwrap(), cfg.initial_field().unwrap()).unwrap();
    assert_eq!(out.warnings, 0);
    let last = out.records.last().unwrap();
    assert_eq!(last.t, 200.0);
    Relaxation {
        reached_pure_phase: out.records.iter().find(|r| r.max_norm >= 1.0 - 1e-3).map(|r| r.t),
        final_max_norm: last.max_norm,
        final_energy: last.energy,
        components: count_components(&out.field, 0.0),
    }
}

#[test]
fn stronger_degeneracy_slows_relaxation() {
    let runs: Vec<Relaxation> = [0.0, 1.0, 3.0, 5.0]
        .into_iter()
        .map(|m| {
            relax_flower(if m == 0.0 {
                Mobility::Constant { value: 1.0 }
            } else {
                Mobility::TwoSided { exponent: m }
            })
        })
        .collect();

    assert!(runs[0].reached_pure_phase.is_some());
    for r in &runs {
        assert_eq!(r.components, 1);
    }
    for w in runs.windows(2) {
        assert!(w[0].final_max_norm > w[1].final_max_norm);
        assert!(w[0].final_energy < w[1].final_energy);
    }
}

#[test]
fn one_sided_mobility_stays_bounded() {
    let r = relax_flower(Mobility::OneSided);
    assert!(r.final_max_norm <= 1.0 + 1e-8);
    assert_eq!(r.components, 1);
}
