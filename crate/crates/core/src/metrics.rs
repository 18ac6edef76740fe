//! Pixel-overlap scores between predicted and labeled structural drawings,
//! and the Fréchet distance between Gaussian fits of feature clouds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::drawing::{Class, SemanticDrawing};
use crate::error::{dim_err, Error, Result};

/// Per-class weights of the weighted IoU, indexed by [`Class::index`].
pub const CLASS_WEIGHTS: [f64; Class::COUNT] = [0.0, 0.4, 0.4, 0.1, 0.1];
pub const SIOU_WEIGHT: f64 = 0.5;
pub const WIOU_WEIGHT: f64 = 0.5;

/// `p[i][j]`: pixels labeled `i` and predicted `j`.
pub type Confusion = [[usize; Class::COUNT]; Class::COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub siou: f64,
    pub wiou: f64,
    pub sw_ratio_pred: f64,
    pub sw_ratio_label: f64,
    pub eta_sw: f64,
    pub score: f64,
    /// The prediction had no wall pixels, so `eta_sw` was set to 0.
    pub eta_undefined: bool,
}

pub fn confusion(pred: &SemanticDrawing, label: &SemanticDrawing) -> Result<Confusion> {
    pred.same_extent(label)?;
    let mut p = [[0; Class::COUNT]; Class::COUNT];
    for (l, q) in label.classes().iter().zip(pred.classes()) {
        p[l.index()][q.index()] += 1;
    }
    Ok(p)
}

/// `Σ_i w_i p_ii / (Σ_j p_ij + Σ_j p_ji − p_ii)`; a class present in neither
/// image contributes 0.
pub fn weighted_iou(p: &Confusion, weights: &[f64; Class::COUNT]) -> f64 {
    (0..Class::COUNT)
        .map(|i| {
            let row: usize = p[i].iter().sum();
            let col: usize = p.iter().map(|r| r[i]).sum();
            let union = row + col - p[i][i];
            if union == 0 {
                0.0
            } else {
                weights[i] * p[i][i] as f64 / union as f64
            }
        })
        .sum()
}

/// `A_SW / (A_SW + A_infill)`, or `None` without walls.
pub fn shear_ratio(d: &SemanticDrawing) -> Option<f64> {
    let n = d.class_counts();
    let sw = n[Class::ShearWall.index()];
    let walls = sw + n[Class::InfillWall.index()];
    (walls > 0).then(|| sw as f64 / walls as f64)
}

/// `max(0, 1 − |r_pred − r_label| / r_pred)`.
pub fn eta_sw(ratio_pred: f64, ratio_label: f64) -> f64 {
    if ratio_pred <= 0.0 {
        return 0.0;
    }
    (1.0 - (ratio_pred - ratio_label).abs() / ratio_pred).max(0.0)
}

pub fn score_iou(pred: &SemanticDrawing, label: &SemanticDrawing) -> Result<IoUReport> {
    let p = confusion(pred, label)?;
    let s = Class::ShearWall.index();
    let inter = p[s][s];
    let union = p[s].iter().sum::<usize>() + p.iter().map(|r| r[s]).sum::<usize>() - inter;
    let siou = if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    };
    let wiou = weighted_iou(&p, &CLASS_WEIGHTS);
    let r_pred = shear_ratio(pred);
    let r_label = shear_ratio(label).unwrap_or(0.0);
    let eta = r_pred.map_or(0.0, |r| eta_sw(r, r_label));
    Ok(IoUReport {
        siou,
        wiou,
        sw_ratio_pred: r_pred.unwrap_or(0.0),
        sw_ratio_label: r_label,
        eta_sw: eta,
        score: eta * (SIOU_WEIGHT * siou + WIOU_WEIGHT * wiou),
        eta_undefined: r_pred.is_none(),
    })
}

/// Sample mean and unbiased covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    pub n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureCloud {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_moments(n: usize, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return dim_err(format!(
                "covariance {}x{} for a {}-dim mean",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            ));
        }
        Ok(Self { n, mean, cov })
    }
}

pub fn fit_feature_cloud(features: &[Vec<f64>]) -> Result<FeatureCloud> {
    if features.len() < 2 {
        return Err(Error::Data(format!(
            "a feature cloud needs at least 2 samples, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return dim_err("feature vectors must share one positive dimension");
    }
    let n = features.len();
    let mut mean = DVector::zeros(dim);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(FeatureCloud { n, mean, cov })
}

const EIGEN_CLAMP: f64 = -1e-10;

/// Symmetric PSD square root; eigenvalues in `(−1e-10, 0)` are clamped.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new(m.clone());
    let mut vals = e.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < EIGEN_CLAMP {
            return Err(Error::Numeric(format!(
                "{what} has eigenvalue {v:e}, not positive semidefinite"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
}

/// `‖μ_r − μ_g‖² + tr Σ_r + tr Σ_g − 2 tr √(Σ_g^½ Σ_r Σ_g^½)`.
pub fn frechet_distance(r: &FeatureCloud, g: &FeatureCloud) -> Result<f64> {
    if r.dim() != g.dim() {
        return dim_err(format!("feature dims differ: {} vs {}", r.dim(), g.dim()));
    }
    let dm = (&r.mean - &g.mean).norm_squared();
    let sg = psd_sqrt(&g.cov, "generated covariance")?;
    psd_sqrt(&r.cov, "reference covariance")?;
    let inner = &sg * &r.cov * &sg;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    Ok((dm + r.cov.trace() + g.cov.trace() - 2.0 * cross).max(0.0))
}

pub const DEFAULT_EXTRACTOR: &str = "class-moments";

/// Feature extractor by name. The default yields the 5 class fractions
/// followed by, per class, the centroid `(x̄, ȳ)` and the second central
/// moments `(σ_xx, σ_yy)` in unit coordinates (25 values).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureExtractor {
    ClassMoments,
}

impl FeatureExtractor {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            DEFAULT_EXTRACTOR | "default" => Ok(Self::ClassMoments),
            other => Err(Error::Config(format!(
                "unknown feature extractor {other:?} (available: {DEFAULT_EXTRACTOR})"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ClassMoments => DEFAULT_EXTRACTOR,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::ClassMoments => 5 * Class::COUNT,
        }
    }

    pub fn extract(self, d: &SemanticDrawing) -> Vec<f64> {
        match self {
            Self::ClassMoments => class_moments(d),
        }
    }
}

fn class_moments(d: &SemanticDrawing) -> Vec<f64> {
    let (w, h) = (d.width(), d.height());
    let mut n = [0.0; Class::COUNT];
    let mut s = [[0.0; 4]; Class::COUNT];
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let i = d.get(x, y).index();
            n[i] += 1.0;
            s[i][0] += u;
            s[i][1] += v;
            s[i][2] += u * u;
            s[i][3] += v * v;
        }
    }
    let total = (w * h) as f64;
    let mut f: Vec<f64> = n.iter().map(|k| k / total).collect();
    for i in 0..Class::COUNT {
        if n[i] == 0.0 {
            f.extend([0.0; 4]);
            continue;
        }
        let (mu, mv) = (s[i][0] / n[i], s[i][1] / n[i]);
        f.extend([
            mu,
            mv,
            (s[i][2] / n[i] - mu * mu).max(0.0),
            (s[i][3] / n[i] - mv * mv).max(0.0),
        ]);
    }
    f
}
