//! Precision, recall and F1 in percent, as published in the method
//! comparison tables.

use rflcd_core::metrics::f1_score;

pub const METHODS: [&str; 10] = [
    "FC-EF", "FC-Siam-conc", "FC-Siam-diff", "STANet", "DASNet", "SNUNet", "BIT", "FTN", "VcT", "RFL-CDNet",
];

/// `(P, R, F1)` in percent, rows in `METHODS` order.
pub const WHU_CULTIVATED: [(f64, f64, f64); 10] = [
    (60.29, 62.98, 61.61),
    (62.51, 65.24, 63.85),
    (64.81, 56.42, 60.33),
    (62.75, 69.47, 65.94),
    (60.58, 77.00, 67.81),
    (68.88, 72.09, 70.45),
    (70.84, 70.11, 70.48),
    (75.54, 63.20, 68.82),
    (65.90, 66.74, 66.32),
    (70.87, 73.75, 72.28),
];

pub const CDD: [(f64, f64, f64); 10] = [
    (84.68, 65.13, 73.63),
    (88.81, 62.20, 73.16),
    (87.57, 66.69, 75.72),
    (83.17, 92.76, 87.70),
    (93.28, 89.91, 91.57),
    (92.40, 90.13, 91.25),
    (94.86, 95.32, 95.09),
    (91.77, 89.56, 90.65),
    (94.21, 92.56, 93.38),
    (96.09, 96.16, 96.12),
];

pub const WHU_BUILDING: [(f64, f64, f64); 10] = [
    (80.75, 67.29, 73.40),
    (54.20, 81.34, 65.05),
    (48.84, 88.96, 63.06),
    (77.40, 90.30, 83.35),
    (83.77, 91.02, 87.24),
    (91.28, 87.25, 89.22),
    (91.56, 87.84, 89.66),
    (94.73, 89.83, 92.21),
    (93.24, 76.58, 84.09),
    (91.33, 91.46, 91.39),
];

/// Panics unless every row's F1 equals 2PR/(P+R) within 0.01 points.
pub fn check(dataset: &str, rows: &[(f64, f64, f64); 10]) {
    for (method, &(p, r, f1)) in METHODS.iter().zip(rows) {
        let recomputed = 100.0 * f1_score(p / 100.0, r / 100.0);
        assert!(
            (recomputed - f1).abs() <= 0.01,
            "{dataset} {method}: 2PR/(P+R) = {recomputed:.4}, published {f1}"
        );
    }
}

