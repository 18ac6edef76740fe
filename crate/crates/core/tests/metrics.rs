use nalgebra::{DMatrix, DVector};

use walldiff_core::drawing::{Class, SemanticDrawing};
use walldiff_core::metrics::{
    confusion, eta_sw, fit_feature_cloud, frechet_distance, score_iou, weighted_iou, FeatureCloud,
    FeatureExtractor, CLASS_WEIGHTS,
};

fn draw(rows: &[&str]) -> SemanticDrawing {
    SemanticDrawing::from_ascii(rows).unwrap()
}

#[test]
fn hand_computed_pair() {
    let pred = draw(&["SSII", "..WW", "GG..", "...."]);
    let label = draw(&["SIII", "..W.", "G...", "...S"]);
    let p = confusion(&pred, &label).unwrap();
    assert_eq!(p[Class::ShearWall.index()], [1, 1, 0, 0, 0]);
    assert_eq!(p[Class::InfillWall.index()], [0, 1, 2, 0, 0]);
    assert_eq!(p[Class::Background.index()], [7, 0, 0, 1, 1]);
    let r = score_iou(&pred, &label).unwrap();
    // shear: inter 1, union 2 + 2 - 1; infill: inter 2, union 3 + 2 - 2
    assert!((r.siou - 1.0 / 3.0).abs() < 1e-15);
    let wiou = 0.4 / 3.0 + 0.4 * 2.0 / 3.0 + 0.1 * 1.0 / 2.0 + 0.1 * 1.0 / 2.0;
    assert!((r.wiou - wiou).abs() < 1e-15);
    assert!((r.sw_ratio_pred - 0.5).abs() < 1e-15);
    assert!((r.sw_ratio_label - 0.4).abs() < 1e-15);
    assert!((r.eta_sw - 0.8).abs() < 1e-15);
}

#[test]
fn perfect_prediction_scores_one() {
    let d = draw(&["SSII", "WWGG", "...."]);
    let r = score_iou(&d, &d).unwrap();
    assert_eq!((r.siou, r.wiou, r.eta_sw, r.score), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn overlap_scores_are_symmetric_but_eta_is_not() {
    let a = draw(&["SSSS", "IIII", "...."]);
    let b = draw(&["SIII", "IIII", "...."]);
    let (ab, ba) = (score_iou(&a, &b).unwrap(), score_iou(&b, &a).unwrap());
    assert_eq!(ab.siou, ba.siou);
    assert!((ab.wiou - ba.wiou).abs() < 1e-15);
    assert_ne!(ab.eta_sw, ba.eta_sw);
}

#[test]
fn eta_is_clamped_and_flagged_without_walls() {
    assert_eq!(eta_sw(0.1, 0.9), 0.0);
    let pred = draw(&["WW..", "...."]);
    let label = draw(&["SI..", "...."]);
    let r = score_iou(&pred, &label).unwrap();
    assert!(r.eta_undefined);
    assert_eq!(r.score, 0.0);
}

#[test]
fn wiou_reaches_one_only_on_a_diagonal_confusion() {
    let mut p = [[0; Class::COUNT]; Class::COUNT];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = 5 + i;
    }
    assert!((weighted_iou(&p, &CLASS_WEIGHTS) - 1.0).abs() < 1e-15);
    p[1][2] = 1;
    assert!(weighted_iou(&p, &CLASS_WEIGHTS) < 1.0);
    p = [[0; Class::COUNT]; Class::COUNT];
    assert_eq!(weighted_iou(&p, &CLASS_WEIGHTS), 0.0);
}

#[test]
fn mismatched_extents_are_rejected() {
    assert!(score_iou(&draw(&["SS"]), &draw(&["S", "S"])).is_err());
}

#[test]
fn frechet_of_diagonal_gaussians_has_a_closed_form() {
    let m1 = DVector::from_vec(vec![0.0, 1.0, -2.0]);
    let m2 = DVector::from_vec(vec![1.0, 1.0, 0.5]);
    let v1 = [1.0, 4.0, 0.25];
    let v2 = [9.0, 1.0, 0.25];
    let c = |m: &DVector<f64>, v: &[f64; 3]| {
        FeatureCloud::from_moments(
            5,
            m.clone(),
            DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        )
        .unwrap()
    };
    let fd = frechet_distance(&c(&m1, &v1), &c(&m2, &v2)).unwrap();
    // 1 + 0 + 6.25 mean terms; (1-3)^2 + (2-1)^2 + 0 covariance terms
    assert!((fd - (7.25 + 5.0)).abs() < 1e-9);
}

#[test]
fn frechet_properties_on_fitted_clouds() {
    let a: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01])
        .collect();
    let b: Vec<Vec<f64>> = a
        .iter()
        .map(|v| v.iter().map(|x| x + 0.5).collect())
        .collect();
    let (ca, cb) = (
        fit_feature_cloud(&a).unwrap(),
        fit_feature_cloud(&b).unwrap(),
    );
    assert!(frechet_distance(&ca, &ca).unwrap() < 1e-10);
    let fd = frechet_distance(&ca, &cb).unwrap();
    assert!(
        (fd - 0.75).abs() < 1e-8,
        "translation changes only the mean term: {fd}"
    );
    assert!((fd - frechet_distance(&cb, &ca).unwrap()).abs() < 1e-9);
    assert!(fit_feature_cloud(&a[..1]).is_err());
}

#[test]
fn default_extractor_reports_class_fractions() {
    let e = FeatureExtractor::by_name("default").unwrap();
    let d = draw(&["SSII", "...."]);
    let f = e.extract(&d);
    assert_eq!(f.len(), e.dim());
    assert!((f[..Class::COUNT].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(FeatureExtractor::by_name("inception").is_err());
}
