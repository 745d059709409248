use fracmag_web::{energies, operator_profile, sigma_curve, MAX_NODES_PER_AXIS};

#[test]
fn field_raises_energy_and_zero_field_matches() {
    let with = energies(0.5, 2.0, 16, 12.0, 1.0).unwrap();
    let without = energies(0.5, 0.0, 16, 12.0, 1.0).unwrap();
    assert!(with[0] > with[1]);
    assert_eq!(without[0], without[1]);
    // seminorm^2 of exp(-|x|^2/2) on all of R^3 is 2 pi Gamma(2) = 2 pi at s = 1/2
    assert!((without[0] - 2.0 * std::f64::consts::PI).abs() < 0.02 * 2.0 * std::f64::consts::PI, "{}", without[0]);
}

#[test]
fn sigma_curve_is_flat_without_field() {
    let c = sigma_curve(0.5, 0.0, 12, 12.0, 1.0, &[1.0, 0.5, 0.25]).unwrap();
    assert_eq!(c.len(), 6);
    assert_eq!(c[1], c[3]);
    assert_eq!(c[3], c[5]);
    assert!(sigma_curve(0.5, 1.0, 12, 12.0, 1.0, &[1.5]).is_err());
}

#[test]
fn operator_profile_is_symmetric_and_peaks_at_centre() {
    let n = 16;
    let rows = operator_profile(0.5, 0.0, n, 12.0, 1.0).unwrap();
    assert_eq!(rows.len(), 4 * n);
    let re: Vec<f64> = rows.chunks(4).map(|r| r[2]).collect();
    for i in 0..n {
        assert!((re[i] - re[n - 1 - i]).abs() < 1e-12 * re[n / 2].abs());
    }
    let peak = re.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(peak == re[n / 2 - 1] || peak == re[n / 2]);
    assert!(operator_profile(0.5, 0.0, MAX_NODES_PER_AXIS + 1, 12.0, 1.0).is_err());
}
