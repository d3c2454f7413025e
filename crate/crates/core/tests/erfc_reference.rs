//! Accuracy of `erfc` against a 50-digit mpmath table
//! (regenerate with `scripts/gen_erfc_reference.py`).

use qrng_audit::erfc;

fn table() -> Vec<(f64, f64)> {
    include_str!("data/erfc_reference.csv")
        .lines()
        .skip(1)
        .map(|l| {
            let (x, v) = l.split_once(',').unwrap();
            (x.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn table_has_two_hundred_points_on_the_interval() {
    let t = table();
    assert_eq!(t.len(), 200);
    assert!(t.iter().all(|(x, _)| (-10.0..=10.0).contains(x)));
}

#[test]
fn max_absolute_error_is_below_1e_12() {
    let worst = table()
        .into_iter()
        .map(|(x, want)| ((erfc(x).unwrap() - want).abs(), x))
        .fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    assert!(worst.0 <= 1e-12, "error {} at x = {}", worst.0, worst.1);
    // Much tighter in practice.
    assert!(worst.0 <= 1e-15, "error {} at x = {}", worst.0, worst.1);
}

#[test]
fn relative_error_in_the_upper_tail() {
    for (x, want) in table().into_iter().filter(|(x, _)| *x > 0.0) {
        let got = erfc(x).unwrap();
        assert!(((got - want) / want).abs() < 1e-13, "x = {x}: {got} vs {want}");
    }
}

#[test]
fn erfc_of_one() {
    assert!((erfc(1.0).unwrap() - 0.157_299_207_050).abs() < 1e-12);
}
