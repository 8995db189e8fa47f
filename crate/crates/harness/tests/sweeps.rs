//! Sweep tables: schema, completeness and the qualitative trends.

use dspl_harness::config::{ExperimentFile, Mode, SolverKind};
use dspl_harness::{run_sweep_batches, run_sweep_corruption, run_sweep_lambda, ExperimentConfig};

fn config(mode: Mode, extra: &str) -> ExperimentConfig {
    let file: ExperimentFile = toml::from_str(extra).unwrap();
    file.resolve(mode).unwrap()
}

#[test]
fn corruption_rows_and_means() {
    let c = config(
        Mode::SweepCorruption,
        "seeds = [0, 1, 2]\nratios = [0.1, 0.4, 0.5, 0.9]\n[synthetic]\np = 5\nn = 400\nbatches = 4\n",
    );
    let t = run_sweep_corruption(&c).unwrap();
    assert!(t.all_ok());
    assert_eq!(t.rows.len(), 4 * 3 * 3);
    let at_04: Vec<_> = t.rows.iter().filter(|r| r.key == 0.4).collect();
    assert_eq!(at_04.len(), 9);
    for s in [SolverKind::Dspl, SolverKind::Spl, SolverKind::Ols] {
        assert!(t.mean_error(0.4, s).is_some());
    }
    // unbounded corruption biases least squares more as the ratio grows
    let ols: Vec<f64> = [0.1, 0.5, 0.9]
        .iter()
        .map(|r| t.mean_error(*r, SolverKind::Ols).unwrap())
        .collect();
    assert!(ols[0] < ols[1] && ols[1] < ols[2], "{ols:?}");
}

#[test]
fn batch_grid_is_complete_and_light_corruption_is_easy() {
    let c = config(Mode::SweepBatches, "solvers = [\"dspl\", \"spl\"]");
    let t = run_sweep_batches(&c).unwrap();
    assert!(t.all_ok());
    assert_eq!(t.rows.len(), 6 * 2 * 10);
    assert_eq!(t.keys(), vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    for s in [SolverKind::Dspl, SolverKind::Spl] {
        let e = t.mean_error(4.0, s).unwrap();
        assert!(e <= 0.2, "{s}: {e}");
    }
    assert!(t.mean_error(9.0, SolverKind::Dspl) < t.mean_error(9.0, SolverKind::Spl));
}

#[test]
fn lambda_grid_present_with_lagrangians() {
    let c = config(
        Mode::SweepLambda,
        "seeds = [3]\ntaus = [0.05, 0.2, 1.0, 5.0]\n[synthetic]\np = 5\nn = 500\nbatches = 5\n",
    );
    let t = run_sweep_lambda(&c).unwrap();
    assert!(t.all_ok());
    assert_eq!(t.keys(), vec![0.05, 0.2, 1.0, 5.0]);
    assert!(t
        .rows
        .iter()
        .all(|r| r.solver == SolverKind::Dspl && r.lagrangian.is_some()));
    let l: Vec<f64> = t.rows.iter().map(|r| r.lagrangian.unwrap()).collect();
    assert!(l.windows(2).all(|w| w[1] <= w[0] + 1e-8), "{l:?}");
}
