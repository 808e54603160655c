use comac_core::experiments::{run_sweep, Figure, OptimalRow, ResultRow, SweepSpec};
use comac_core::io::{read_csv, write_csv};
use comac_core::rates::RateFamily;

#[test]
fn fig4_sweep_round_trips_through_csv() {
    let spec = SweepSpec {
        ks: vec![32],
        ns: vec![1, 16],
        trials: 1_000,
        ..SweepSpec::new(Figure::Fig4)
    };
    let out = run_sweep(&spec).unwrap();
    assert_eq!(out.rows.len(), 6 * 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig4.csv");
    write_csv(&out.rows, &path).unwrap();
    assert_eq!(read_csv::<ResultRow>(&path).unwrap(), out.rows);

    let again = dir.path().join("again.csv");
    write_csv(&run_sweep(&spec).unwrap().rows, &again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn fig5_summary_round_trips() {
    let spec = SweepSpec {
        ks: vec![4, 8],
        ns: vec![4],
        trials: 1_000,
        ..SweepSpec::new(Figure::Fig5)
    };
    let out = run_sweep(&spec).unwrap();
    assert_eq!(out.optimal.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig5.csv");
    write_csv(&out.optimal, &path).unwrap();
    assert_eq!(read_csv::<OptimalRow>(&path).unwrap(), out.optimal);
}

#[test]
fn fig6_conventional_rate_falls_with_k() {
    let spec = SweepSpec {
        ks: vec![8, 32, 128],
        families: vec![RateFamily::Conventional, RateFamily::SfaAvg],
        trials: 2_000,
        ..SweepSpec::new(Figure::Fig6)
    };
    let out = run_sweep(&spec).unwrap();
    let conventional: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.family == RateFamily::Conventional)
        .map(|r| r.rate().unwrap())
        .collect();
    assert!(conventional.windows(2).all(|w| w[1] < w[0]));
    for k in [8, 32, 128] {
        let rate = |f: RateFamily| {
            out.rows
                .iter()
                .find(|r| r.family == f && r.k == k)
                .unwrap()
                .rate()
                .unwrap()
        };
        assert!(rate(RateFamily::SfaAvg) > rate(RateFamily::Conventional));
    }
}
