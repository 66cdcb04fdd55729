//! Cell CSV schema, resampling, normalization and the synthetic generator.

use sdgl::data::{
    fit_normalization, generate_synthetic_cell, generate_synthetic_raw, make_split, parse_cell_csv, read_cell_csv,
    write_cell_csv, CellDataset, CycleProfile, RawCycle, SyntheticSpec,
};
use sdgl::emf::{emf_eval, EmfParams};

fn raw_cell(cycles: usize) -> Vec<RawCycle> {
    generate_synthetic_raw(&SyntheticSpec { n_cycles: cycles, n_train: cycles - 1, ..Default::default() }).unwrap()
}

#[test]
fn cycle_group_counts_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (n, n_train, test) in [(168usize, 125usize, 43usize), (132, 110, 22)] {
        let path = dir.path().join(format!("cell{n}.csv"));
        write_cell_csv(std::fs::File::create(&path).unwrap(), &raw_cell(n)).unwrap();
        let parsed = parse_cell_csv(&path).unwrap();
        assert_eq!(parsed.len(), n);
        let cell = CellDataset::from_raw("c", &parsed, n_train).unwrap();
        let (tr, te) = make_split(&cell, n_train).unwrap();
        assert_eq!((tr.len(), te.len()), (n_train, test));
        assert_eq!(tr.len() + te.len(), n);
        assert!(make_split(&cell, n).is_err());
        assert!(make_split(&cell, 0).is_err());
    }
}

#[test]
fn short_series_error_names_its_cycle() {
    let mut raw = raw_cell(20);
    raw[6].voltage.truncate(50);
    raw[6].current.truncate(50);
    raw[6].temperature.truncate(50);
    let mut buf = Vec::new();
    write_cell_csv(&mut buf, &raw).unwrap();
    let err = read_cell_csv(buf.as_slice()).unwrap_err().to_string();
    assert!(err.contains("cycle 7"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn normalization_ignores_appended_test_cycles() {
    let cell = generate_synthetic_cell(&SyntheticSpec { n_cycles: 60, n_train: 40, ..Default::default() }).unwrap();
    let train: Vec<CycleProfile> = cell.train().iter().map(|c| c.profile.clone()).collect();
    let stats = fit_normalization(&train).unwrap();
    let longer = generate_synthetic_cell(&SyntheticSpec { n_cycles: 90, n_train: 40, ..Default::default() }).unwrap();
    let train2: Vec<CycleProfile> = longer.train().iter().map(|c| c.profile.clone()).collect();
    assert_eq!(fit_normalization(&train2).unwrap(), stats);
}

#[test]
fn normalizing_twice_changes_nothing_after_the_first() {
    // The extractor consumes normalized data as given; the documented
    // pipeline applies the train statistics exactly once.
    let cell = generate_synthetic_cell(&SyntheticSpec { n_cycles: 30, n_train: 20, ..Default::default() }).unwrap();
    let train: Vec<CycleProfile> = cell.train().iter().map(|c| c.profile.clone()).collect();
    let stats = fit_normalization(&train).unwrap();
    let once: Vec<CycleProfile> = train.iter().map(|p| stats.normalize(p)).collect();
    let again = fit_normalization(&once).unwrap();
    for c in 0..3 {
        assert!(again.mean[c].abs() < 1e-12);
        assert!((again.std[c] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn generator_passes_trend_through_without_residual_or_noise() {
    let theta = EmfParams::new(2.0, -0.1, 0.01);
    assert!((emf_eval(&theta, 0.0).unwrap() - 1.9).abs() < 1e-15);
    let spec = SyntheticSpec {
        theta,
        residual_amplitude: 0.0,
        noise_std: 0.0,
        n_cycles: 50,
        n_train: 40,
        ..Default::default()
    };
    for c in generate_synthetic_raw(&spec).unwrap() {
        assert_eq!(c.capacity, emf_eval(&theta, c.cycle_index as f64).unwrap());
    }
}

#[test]
fn profiles_drift_with_cycle_index() {
    // Mean voltage over the resampled window falls as the cell ages.
    let cell =
        generate_synthetic_cell(&SyntheticSpec { residual_amplitude: 0.0, noise_std: 0.0, ..Default::default() })
            .unwrap();
    let v: Vec<f64> = cell.cycles().iter().map(|c| c.profile.matrix().column(0).mean()).collect();
    assert!(v.windows(10).all(|w| w[9] < w[0]), "voltage does not drift down");
}
