//! SSIM, PSNR and MAE on normalized slices, plus per-route aggregation.

use crate::domain::Image2D;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("image dims differ: {a:?} vs {b:?}")]
    DimMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("image {dims:?} smaller than the {window}x{window} window")]
    TooSmall { dims: (usize, usize), window: usize },
    #[error("{pred} predicted slices vs {gt} ground-truth slices")]
    CountMismatch { pred: usize, gt: usize },
    #[error("invalid SSIM params: {0}")]
    InvalidParams(String),
    #[error("slice {index}: {source}")]
    Slice { index: usize, source: Box<MetricsError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

impl SsimParams {
    /// Window 5 for 32x32 toy slices.
    pub fn toy() -> Self {
        Self { window: 5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(MetricsError::InvalidParams(format!("window must be odd and >= 3, got {}", self.window)));
        }
        if !(self.sigma > 0.0) || !(self.dynamic_range > 0.0) || self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(MetricsError::InvalidParams("sigma and dynamic_range must be positive, k1/k2 non-negative".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let raw: Vec<f64> =
            (0..self.window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

fn check_dims(a: &Image2D, b: &Image2D) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimMismatch { a: a.dims(), b: b.dims() });
    }
    Ok(())
}

fn check_ssim_inputs(a: &Image2D, b: &Image2D, p: &SsimParams) -> Result<(), MetricsError> {
    p.validate()?;
    check_dims(a, b)?;
    if a.width() < p.window || a.height() < p.window {
        return Err(MetricsError::TooSmall { dims: a.dims(), window: p.window });
    }
    Ok(())
}

/// Local SSIM from window statistics, written so that swapping `a` and `b`
/// gives bit-identical results and `a == b` gives exactly 1.
#[inline]
fn local_ssim(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64, c1: f64, c2: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    num / den
}

/// Valid-mode separable filtering: rows first, then columns.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut s = 0.0;
            for (i, t) in taps.iter().enumerate() {
                s += t * line[x + i];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, t) in taps.iter().enumerate() {
                s += t * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean local SSIM over all fully interior window placements.
pub fn ssim(a: &Image2D, b: &Image2D, p: &SsimParams) -> Result<f64, MetricsError> {
    check_ssim_inputs(a, b, p)?;
    let (w, h) = a.dims();
    let taps = p.gaussian_taps();
    let (ad, bd) = (a.data(), b.data());
    let aa: Vec<f64> = ad.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bd.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(ad, w, h, &taps);
    let mu_b = filter_valid(bd, w, h, &taps);
    let e_aa = filter_valid(&aa, w, h, &taps);
    let e_bb = filter_valid(&bb, w, h, &taps);
    let e_ab = filter_valid(&ab, w, h, &taps);
    let (c1, c2) = (p.c1(), p.c2());
    let total: f64 = (0..mu_a.len())
        .map(|i| local_ssim(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2))
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Brute-force reference: explicit 2-D weighted sums for every window
/// placement. Quadratic in window size; used to check [`ssim`].
pub fn ssim_reference(a: &Image2D, b: &Image2D, p: &SsimParams) -> Result<f64, MetricsError> {
    check_ssim_inputs(a, b, p)?;
    let (w, h) = a.dims();
    let n = p.window;
    let g = p.gaussian_taps();
    let (c1, c2) = (p.c1(), p.c2());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ma, mut mb, mut eaa, mut ebb, mut eab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let wt = g[dy] * g[dx];
                    let va = a.get(x0 + dx, y0 + dy);
                    let vb = b.get(x0 + dx, y0 + dy);
                    ma += wt * va;
                    mb += wt * vb;
                    eaa += wt * va * va;
                    ebb += wt * vb * vb;
                    eab += wt * va * vb;
                }
            }
            let var_a = eaa - ma * ma;
            let var_b = ebb - mb * mb;
            let cov = eab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// PSNR in dB, or `Identical` when the images agree to within 1e-12 MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Identical => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Identical),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {t:?}"))),
        }
    }
}

const IDENTICAL_MSE: f64 = 1e-12;

pub fn mse(a: &Image2D, b: &Image2D) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

pub fn psnr(a: &Image2D, b: &Image2D) -> Result<Psnr, MetricsError> {
    let m = mse(a, b)?;
    Ok(if m < IDENTICAL_MSE { Psnr::Identical } else { Psnr::Db(10.0 * (1.0 / m).log10()) })
}

/// Mean absolute difference on the 0-255 scale.
pub fn mae(a: &Image2D, b: &Image2D) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(255.0 * s / a.data().len() as f64)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// PSNR summary over the non-identical slices; `mean` is `Identical` only if
/// every slice was identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrStat {
    pub mean: Psnr,
    pub std: f64,
    pub n_identical: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub ssim: f64,
    pub psnr: Psnr,
    pub mae: f64,
}

pub fn slice_metrics(pred: &Image2D, gt: &Image2D, p: &SsimParams) -> Result<SliceMetrics, MetricsError> {
    Ok(SliceMetrics { ssim: ssim(pred, gt, p)?, psnr: psnr(pred, gt)?, mae: mae(pred, gt)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMetricsReport {
    pub route_id: String,
    pub n: usize,
    /// SSIM x 100.
    pub ssim: Stat,
    pub psnr: PsnrStat,
    /// 0-255 scale.
    pub mae: Stat,
}

impl RouteMetricsReport {
    pub fn from_slices(route_id: &str, per_slice: &[SliceMetrics]) -> Self {
        let ssim: Vec<f64> = per_slice.iter().map(|m| 100.0 * m.ssim).collect();
        let mae: Vec<f64> = per_slice.iter().map(|m| m.mae).collect();
        let db: Vec<f64> = per_slice.iter().filter_map(|m| m.psnr.db()).collect();
        let psnr = if db.is_empty() {
            PsnrStat { mean: Psnr::Identical, std: 0.0, n_identical: per_slice.len() }
        } else {
            let s = Stat::of(&db);
            PsnrStat { mean: Psnr::Db(s.mean), std: s.std, n_identical: per_slice.len() - db.len() }
        };
        Self { route_id: route_id.to_owned(), n: per_slice.len(), ssim: Stat::of(&ssim), psnr, mae: Stat::of(&mae) }
    }
}

/// Per-slice metrics (computed in parallel), aggregated in slice order.
pub fn evaluate_route(
    route_id: &str,
    pred: &[Image2D],
    gt: &[Image2D],
    p: &SsimParams,
) -> Result<RouteMetricsReport, MetricsError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(MetricsError::CountMismatch { pred: pred.len(), gt: gt.len() });
    }
    let per_slice: Vec<SliceMetrics> = pred
        .par_iter()
        .zip(gt)
        .enumerate()
        .map(|(index, (a, b))| slice_metrics(a, b, p).map_err(|e| MetricsError::Slice { index, source: Box::new(e) }))
        .collect::<Result<_, _>>()?;
    Ok(RouteMetricsReport::from_slices(route_id, &per_slice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::stream;
    use proptest::prelude::*;

    fn random(w: usize, h: usize, seed: u64) -> Image2D {
        let mut r = stream(seed, &["img"]);
        Image2D::new(w, h, (0..w * h).map(|_| r.next_f64()).collect()).unwrap()
    }

    #[test]
    fn ssim_identity_exact() {
        for seed in 0..5 {
            let x = random(24, 20, seed);
            assert_eq!(ssim(&x, &x, &SsimParams::default()).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_constant_images() {
        let a = Image2D::filled(16, 16, 0.0).unwrap();
        let b = Image2D::filled(16, 16, 1.0).unwrap();
        let p = SsimParams::default();
        let c1 = p.c1();
        assert!((ssim(&a, &b, &p).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_reference() {
        for seed in 0..10 {
            let a = random(64, 64, seed);
            let b = random(64, 64, seed + 1000);
            let p = SsimParams::default();
            let fast = ssim(&a, &b, &p).unwrap();
            let slow = ssim_reference(&a, &b, &p).unwrap();
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_errors() {
        let p = SsimParams::default();
        let a = Image2D::filled(8, 8, 0.5).unwrap();
        assert!(matches!(ssim(&a, &a, &p), Err(MetricsError::TooSmall { .. })));
        let b = Image2D::filled(12, 11, 0.5).unwrap();
        let c = Image2D::filled(11, 12, 0.5).unwrap();
        assert!(matches!(ssim(&b, &c, &p), Err(MetricsError::DimMismatch { .. })));
        assert!(matches!(ssim(&b, &b, &SsimParams { window: 4, ..p }), Err(MetricsError::InvalidParams(_))));
    }

    #[test]
    fn psnr_cases() {
        let x = random(8, 8, 1);
        assert_eq!(psnr(&x, &x).unwrap(), Psnr::Identical);
        let a = Image2D::filled(8, 8, 0.25).unwrap();
        let b = Image2D::filled(8, 8, 0.75).unwrap();
        assert!((psnr(&a, &b).unwrap().db().unwrap() - 6.0206).abs() < 1e-4);
        let z = Image2D::filled(4, 4, 0.0).unwrap();
        let o = Image2D::filled(4, 4, 1.0).unwrap();
        assert_eq!(psnr(&z, &o).unwrap(), Psnr::Db(0.0));
        assert_eq!(serde_json::to_string(&Psnr::Identical).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Psnr>("\"inf\"").unwrap(), Psnr::Identical);
    }

    #[test]
    fn mae_cases() {
        let z = Image2D::filled(4, 4, 0.0).unwrap();
        let o = Image2D::filled(4, 4, 1.0).unwrap();
        assert_eq!(mae(&z, &o).unwrap(), 255.0);
        assert_eq!(mae(&z, &z).unwrap(), 0.0);
        let a = Image2D::new(2, 1, vec![0.5, 0.5]).unwrap();
        let b = Image2D::new(2, 1, vec![0.7, 0.5]).unwrap();
        assert!((mae(&a, &b).unwrap() - 25.5).abs() < 1e-12);
    }

    #[test]
    fn route_identical() {
        let xs: Vec<Image2D> = (0..3).map(|s| random(16, 16, s)).collect();
        let r = evaluate_route("brats/t1_to_t2", &xs, &xs, &SsimParams::default()).unwrap();
        assert_eq!(r.ssim.mean, 100.0);
        assert_eq!(r.mae.mean, 0.0);
        assert_eq!(r.psnr.mean, Psnr::Identical);
        assert_eq!(r.psnr.n_identical, 3);
    }

    #[test]
    fn route_aggregation_arithmetic() {
        let mk = |s: f64| SliceMetrics { ssim: s, psnr: Psnr::Db(20.0), mae: 1.0 };
        let r = RouteMetricsReport::from_slices("r", &[mk(0.8), mk(0.9)]);
        assert!((r.ssim.mean - 85.0).abs() < 1e-9);
        assert!((r.ssim.std - 5.0).abs() < 1e-9);
        let one = RouteMetricsReport::from_slices("r", &[mk(0.8)]);
        assert_eq!(one.ssim.std, 0.0);
    }

    #[test]
    fn route_count_mismatch() {
        let x = vec![Image2D::filled(16, 16, 0.1).unwrap()];
        assert!(matches!(
            evaluate_route("r", &x, &[], &SsimParams::default()),
            Err(MetricsError::CountMismatch { pred: 1, gt: 0 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ssim_symmetric_and_bounded(seed in any::<u64>(), w in 11usize..20, h in 11usize..20) {
            let a = random(w, h, seed);
            let b = random(w, h, seed ^ 0x55);
            let p = SsimParams::default();
            let ab = ssim(&a, &b, &p).unwrap();
            prop_assert_eq!(ab, ssim(&b, &a, &p).unwrap());
            prop_assert!(ab <= 1.0);
        }

        #[test]
        fn shift_invariance(seed in any::<u64>(), c in 0.0f64..0.5) {
            let mut r = stream(seed, &["shift"]);
            let a: Vec<f64> = (0..64).map(|_| 0.5 * r.next_f64()).collect();
            let b: Vec<f64> = (0..64).map(|_| 0.5 * r.next_f64()).collect();
            let ia = Image2D::new(8, 8, a.clone()).unwrap();
            let ib = Image2D::new(8, 8, b.clone()).unwrap();
            let sa = Image2D::new(8, 8, a.iter().map(|v| v + c).collect()).unwrap();
            let sb = Image2D::new(8, 8, b.iter().map(|v| v + c).collect()).unwrap();
            prop_assert!((mae(&ia, &ib).unwrap() - mae(&sa, &sb).unwrap()).abs() < 1e-9);
            let (p0, p1) = (psnr(&ia, &ib).unwrap().db().unwrap(), psnr(&sa, &sb).unwrap().db().unwrap());
            prop_assert!((p0 - p1).abs() < 1e-9);
        }
    }
}
