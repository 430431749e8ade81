//! Qualitative landscape claims over the 3-class simplex at full
//! resolution: valley geometry, minimum placement, profile ordering.

use gce_lab::landscape::{self, LandscapeLoss};

const RESOLUTION: usize = 201;

#[test]
fn complement_entropy_is_constant_along_the_valley() {
    let check =
        landscape::valley_flatness_check(LandscapeLoss::ComplementEntropy, 1.0, RESOLUTION)
            .unwrap();
    assert!(
        check.max_deviation <= 1e-12,
        "valley deviation {:.3e}",
        check.max_deviation
    );
}

#[test]
fn normalized_gce_minimum_lies_in_the_correct_prediction_region() {
    for &alpha in &[1.0, 1.0 / 3.0, 0.1] {
        let sheet =
            landscape::evaluate_sheet(LandscapeLoss::NormalizedGce, alpha, RESOLUTION).unwrap();
        let (value, i1, i2) = sheet.minimum();
        assert!(
            sheet.shaded[i2 * RESOLUTION + i1],
            "alpha={alpha}: minimum {value} at grid ({i1},{i2}) is outside the shaded region"
        );
    }
}

#[test]
fn complement_entropy_minimum_set_contains_the_whole_valley() {
    // The set of grid points within 1e-9 of the minimum must cover every
    // diagonal point: the flat valley is the defect being demonstrated.
    let sheet =
        landscape::evaluate_sheet(LandscapeLoss::ComplementEntropy, 1.0, RESOLUTION).unwrap();
    let (min_value, _, _) = sheet.minimum();
    let mut diagonal_points = 0;
    for i in 0..RESOLUTION {
        let t = sheet.coords[i];
        if 2.0 * t > 1.0 + 1e-12 {
            break;
        }
        let v = sheet.at(i, i).expect("diagonal point inside simplex");
        assert!(
            v <= min_value + 1e-9,
            "diagonal point t={t} has loss {v}, min {min_value}"
        );
        diagonal_points += 1;
    }
    assert!(diagonal_points >= RESOLUTION / 2);
}

#[test]
fn profile_ordering_at_low_ground_truth_probability() {
    // At p0 = 0.01 a smaller exponent has already dropped further.
    let v10 = landscape::profile_value(LandscapeLoss::NormalizedGce, 0.1, 0.01).unwrap();
    let v3 = landscape::profile_value(LandscapeLoss::NormalizedGce, 1.0 / 3.0, 0.01).unwrap();
    let v1 = landscape::profile_value(LandscapeLoss::NormalizedGce, 1.0, 0.01).unwrap();
    assert!(v10 < v3 && v3 < v1, "{v10} < {v3} < {v1} violated");
    // Numerical values reduce to -p0^alpha on this line.
    assert!((v10 + 0.01f64.powf(0.1)).abs() < 1e-9);
    assert!((v3 + 0.01f64.powf(1.0 / 3.0)).abs() < 1e-9);
    assert!((v1 + 0.01).abs() < 1e-9);
}

#[test]
fn near_optimum_slope_is_shallower_for_small_alpha() {
    let slope = |alpha: f64| {
        let h = 1e-4;
        let hi = landscape::profile_value(LandscapeLoss::NormalizedGce, alpha, 0.95 + h).unwrap();
        let lo = landscape::profile_value(LandscapeLoss::NormalizedGce, alpha, 0.95 - h).unwrap();
        ((hi - lo) / (2.0 * h)).abs()
    };
    let shallow = slope(0.1);
    let steep = slope(1.0);
    assert!(
        shallow < steep,
        "slope(alpha=0.1) = {shallow} should be below slope(alpha=1) = {steep}"
    );
    // Analytic values: alpha * p0^(alpha-1) at p0 = 0.95.
    assert!((shallow - 0.1 * 0.95f64.powf(-0.9)).abs() < 1e-3);
    assert!((steep - 1.0).abs() < 1e-3);
}

#[test]
fn guided_valley_strictly_decreases_toward_origin() {
    for &alpha in &[1.0, 1.0 / 3.0, 0.1] {
        let check =
            landscape::valley_flatness_check(LandscapeLoss::NormalizedGce, alpha, RESOLUTION)
                .unwrap();
        assert!(
            check.strictly_decreasing_toward_origin,
            "alpha={alpha}: valley is not strictly decreasing"
        );
    }
    let xe = landscape::valley_flatness_check(LandscapeLoss::Xe, 1.0, RESOLUTION).unwrap();
    assert!(xe.strictly_decreasing_toward_origin);
}

#[test]
fn basin_grows_as_alpha_shrinks() {
    // The low-alpha sheets drop quickly near the optimum, producing a
    // larger near-minimal basin; reported, not pinned to a paper number.
    let fraction = |alpha: f64| {
        landscape::evaluate_sheet(LandscapeLoss::NormalizedGce, alpha, 101)
            .unwrap()
            .basin_fraction(0.05)
    };
    let f1 = fraction(1.0);
    let f3 = fraction(1.0 / 3.0);
    let f10 = fraction(0.1);
    assert!(f1 < f3 && f3 < f10, "{f1} < {f3} < {f10} violated");
}
