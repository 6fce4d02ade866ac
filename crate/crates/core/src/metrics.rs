//! Full-reference quality metrics on luminance planes, per-item reports and
//! normalised cross-run comparison tables.

use serde::{Deserialize, Serialize};

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::image::{FusedImage, Plane};
use crate::losses::intensity_bin;

/// Value reported by [`psnr`] when the images are (numerically) identical.
pub const PSNR_CAP_DB: f64 = 120.0;
const PSNR_MSE_FLOOR: f64 = 1e-12;
/// A UQI denominator factor below this is treated as zero.
pub const UQI_VANISH: f64 = 1e-12;
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const NMI_CONVENTION: &str = "2*I(A;B)/(H(A)+H(B)), natural log, 1 when both entropies are 0";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    pub data_range: f64,
    pub uqi_window: usize,
    pub msssim_scales: usize,
    pub msssim_window: usize,
    pub msssim_sigma: f64,
    pub nmi_bins: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            data_range: 1.0,
            uqi_window: 8,
            msssim_scales: 5,
            msssim_window: 11,
            msssim_sigma: 1.5,
            nmi_bins: 64,
        }
    }
}

fn same_shape(a: &Plane, b: &Plane) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "images differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data.len() as f64)
}

/// `10·log10(range² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane, data_range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / m).log10()).min(PSNR_CAP_DB))
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Self {
        let mut s = vec![0.0; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut row = 0.0;
            for c in 0..w {
                row += f(r * w + c);
                s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
            }
        }
        Self { w, s }
    }

    fn window(&self, r: usize, c: usize, k: usize) -> f64 {
        let w = self.w + 1;
        self.s[(r + k) * w + c + k] - self.s[r * w + c + k] - self.s[(r + k) * w + c] + self.s[r * w + c]
    }
}

/// Quality index of one window from its first and second moments.
///
/// When the variance factor vanishes only the luminance term remains; when
/// both vanish the windows are identical flat zero patches and score 1.
pub fn uqi_window_score(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let d_sigma = var_a + var_b;
    let d_mu = mu_a * mu_a + mu_b * mu_b;
    let sigma_gone = d_sigma.abs() < UQI_VANISH;
    let mu_gone = d_mu.abs() < UQI_VANISH;
    match (sigma_gone, mu_gone) {
        (true, true) => 1.0,
        (true, false) => 2.0 * mu_a * mu_b / d_mu,
        (false, true) => 0.0,
        (false, false) => (2.0 * cov / d_sigma) * (2.0 * mu_a * mu_b / d_mu),
    }
}

/// Mean of the windowed quality index over all `window`×`window` positions.
pub fn uqi(a: &Plane, b: &Plane, window: usize) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dims();
    if window == 0 || window > h.min(w) {
        return Err(Error::Validation(format!(
            "UQI window {window} does not fit a {h}x{w} image"
        )));
    }
    let ia = Integral::new(h, w, |i| a.data[i]);
    let ib = Integral::new(h, w, |i| b.data[i]);
    let iaa = Integral::new(h, w, |i| a.data[i] * a.data[i]);
    let ibb = Integral::new(h, w, |i| b.data[i] * b.data[i]);
    let iab = Integral::new(h, w, |i| a.data[i] * b.data[i]);
    let n = (window * window) as f64;
    let mut total = 0.0;
    for r in 0..=h - window {
        for c in 0..=w - window {
            let ma = ia.window(r, c, window) / n;
            let mb = ib.window(r, c, window) / n;
            let va = iaa.window(r, c, window) / n - ma * ma;
            let vb = ibb.window(r, c, window) / n - mb * mb;
            let cov = iab.window(r, c, window) / n - ma * mb;
            total += uqi_window_score(ma, mb, va, vb, cov);
        }
    }
    Ok(total / ((h - window + 1) * (w - window + 1)) as f64)
}

/// Scales and window actually used for an image of the given size.
#[derive(Debug, Clone, PartialEq)]
pub struct MsssimPlan {
    pub scales: usize,
    pub window: usize,
    pub weights: Vec<f64>,
    pub warning: Option<String>,
}

pub fn msssim_plan(size: (usize, usize), scales: usize, window: usize) -> Result<MsssimPlan> {
    if !(1..=MSSSIM_WEIGHTS.len()).contains(&scales) {
        return Err(Error::Validation(format!("MS-SSIM supports 1 to 5 scales, got {scales}")));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::Validation(format!("MS-SSIM window must be odd, got {window}")));
    }
    let side = size.0.min(size.1);
    if side == 0 {
        return Err(Error::Validation("empty image".into()));
    }
    let mut used = scales;
    while used > 1 && window << (used - 1) > side {
        used -= 1;
    }
    let mut win = window;
    if win > side {
        win = if side % 2 == 1 { side } else { side - 1 };
    }
    let warning = (used != scales || win != window).then(|| {
        format!(
            "{}x{} is too small for {scales} scales with window {window}; using {used} scale(s) with window {win}",
            size.0, size.1
        )
    });
    let w = &MSSSIM_WEIGHTS[..used];
    let z: f64 = w.iter().sum();
    Ok(MsssimPlan {
        scales: used,
        window: win,
        weights: w.iter().map(|x| x / z).collect(),
        warning,
    })
}

pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = g.iter().sum();
    g.into_iter().map(|x| x / z).collect()
}

/// Valid-mode separable filtering with a symmetric 1-D kernel.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..n).map(|j| k[j] * x[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

fn mean_pool2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) / 4.0);
        }
    }
    (out, oh, ow)
}

/// Mean contrast-structure term and mean SSIM at one scale.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64], range: f64) -> (f64, f64) {
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let prod = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<Vec<f64>>();
    let (mu_a, _, _) = filter_valid(a, h, w, k);
    let (mu_b, _, _) = filter_valid(b, h, w, k);
    let (saa, _, _) = filter_valid(&prod(&|i| a[i] * a[i]), h, w, k);
    let (sbb, _, _) = filter_valid(&prod(&|i| b[i] * b[i]), h, w, k);
    let (sab, _, _) = filter_valid(&prod(&|i| a[i] * b[i]), h, w, k);
    let n = mu_a.len() as f64;
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = saa[i] - ma * ma;
        let vb = sbb[i] - mb * mb;
        let cov = sab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (cs_sum / n, ssim_sum / n)
}

/// Multi-scale SSIM; scale count and window shrink automatically for small
/// images (see [`msssim_plan`]).
pub fn msssim(a: &Plane, b: &Plane, scales: usize, window: usize, sigma: f64, data_range: f64) -> Result<f64> {
    same_shape(a, b)?;
    let plan = msssim_plan(a.dims(), scales, window)?;
    if let Some(w) = &plan.warning {
        log::debug!("{w}");
    }
    let k = gaussian_kernel(plan.window, sigma);
    let (mut h, mut w) = a.dims();
    let (mut xa, mut xb) = (a.data.clone(), b.data.clone());
    let mut value = 1.0;
    for (j, &weight) in plan.weights.iter().enumerate() {
        let (cs, ssim) = ssim_terms(&xa, &xb, h, w, &k, data_range);
        let term = if j + 1 == plan.scales { ssim } else { cs };
        value *= term.max(0.0).powf(weight);
        if j + 1 < plan.scales {
            let (pa, nh, nw) = mean_pool2(&xa, h, w);
            let (pb, _, _) = mean_pool2(&xb, h, w);
            xa = pa;
            xb = pb;
            h = nh;
            w = nw;
        }
    }
    Ok(value)
}

fn entropy(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `2·I(A;B) / (H(A) + H(B))` over a `bins`×`bins` joint histogram.
pub fn nmi(a: &Plane, b: &Plane, bins: usize) -> Result<f64> {
    same_shape(a, b)?;
    if bins < 2 {
        return Err(Error::Validation(format!("NMI needs at least 2 bins, got {bins}")));
    }
    let mut joint = vec![0.0; bins * bins];
    for (&x, &y) in a.data.iter().zip(&b.data) {
        joint[intensity_bin(x, bins) * bins + intensity_bin(y, bins)] += 1.0;
    }
    let n = a.data.len() as f64;
    joint.iter_mut().for_each(|v| *v /= n);
    let pa: Vec<f64> = (0..bins).map(|i| joint[i * bins..(i + 1) * bins].iter().sum()).collect();
    let pb: Vec<f64> = (0..bins).map(|j| (0..bins).map(|i| joint[i * bins + j]).sum()).collect();
    let ha = entropy(pa.into_iter());
    let hb = entropy(pb.into_iter());
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let hab = entropy(joint.into_iter());
    let mi = (ha + hb) - hab;
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Uqi,
    Msssim,
    Nmi,
    Psnr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mse, Metric::Uqi, Metric::Msssim, Metric::Nmi, Metric::Psnr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Uqi => "uqi",
            Metric::Msssim => "msssim",
            Metric::Nmi => "nmi",
            Metric::Psnr => "psnr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Mse => "MSE",
            Metric::Uqi => "UQI",
            Metric::Msssim => "MS-SSIM",
            Metric::Nmi => "NMI",
            Metric::Psnr => "PSNR (dB)",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != Metric::Mse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityPair {
    pub vs_thermal: f64,
    pub vs_visual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub run_id: String,
    pub checkpoint_step: Option<u64>,
    pub dataset_id: String,
    pub items: usize,
    pub params: MetricParams,
    pub nmi_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: ModalityPair,
    pub uqi: ModalityPair,
    pub msssim: ModalityPair,
    pub nmi: ModalityPair,
    pub psnr: ModalityPair,
    pub meta: ReportMeta,
}

impl MetricReport {
    pub fn get(&self, m: Metric) -> ModalityPair {
        match m {
            Metric::Mse => self.mse,
            Metric::Uqi => self.uqi,
            Metric::Msssim => self.msssim,
            Metric::Nmi => self.nmi,
            Metric::Psnr => self.psnr,
        }
    }

    fn slot(&mut self, m: Metric) -> &mut ModalityPair {
        match m {
            Metric::Mse => &mut self.mse,
            Metric::Uqi => &mut self.uqi,
            Metric::Msssim => &mut self.msssim,
            Metric::Nmi => &mut self.nmi,
            Metric::Psnr => &mut self.psnr,
        }
    }

    /// The ten values in column order: each metric vs thermal, then vs visual.
    pub fn values(&self) -> Vec<(Metric, &'static str, f64)> {
        Metric::ALL
            .iter()
            .flat_map(|&m| {
                let p = self.get(m);
                [(m, "thermal", p.vs_thermal), (m, "visual", p.vs_visual)]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|(_, _, v)| v.is_finite())
    }

    pub fn with_meta(mut self, meta: ReportMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,vs_thermal,vs_visual\n");
        for m in Metric::ALL {
            let p = self.get(m);
            s.push_str(&format!("{},{},{}\n", m.name(), p.vs_thermal, p.vs_visual));
        }
        s
    }
}

fn pair_metrics(fused: &Plane, other: &Plane, p: &MetricParams) -> Result<[f64; 5]> {
    Ok([
        mse(fused, other)?,
        uqi(fused, other, p.uqi_window)?,
        msssim(fused, other, p.msssim_scales, p.msssim_window, p.msssim_sigma, p.data_range)?,
        nmi(fused, other, p.nmi_bins)?,
        psnr(fused, other, p.data_range)?,
    ])
}

/// All five metrics of the fused image against each source image.
pub fn evaluate_fusion(fused: &FusedImage, pair: &ImagePair, params: &MetricParams) -> Result<MetricReport> {
    if fused.dims() != pair.visual.dims() || fused.dims() != pair.thermal.dims() {
        return Err(Error::Shape(format!(
            "fused image {:?} does not match the pair ({:?} visual, {:?} thermal)",
            fused.dims(),
            pair.visual.dims(),
            pair.thermal.dims()
        )));
    }
    let f = fused.luminance();
    let t = pair_metrics(&f, &pair.thermal.luminance(), params)?;
    let v = pair_metrics(&f, &pair.visual.luminance(), params)?;
    let mp = |i: usize| ModalityPair {
        vs_thermal: t[i],
        vs_visual: v[i],
    };
    Ok(MetricReport {
        mse: mp(0),
        uqi: mp(1),
        msssim: mp(2),
        nmi: mp(3),
        psnr: mp(4),
        meta: ReportMeta {
            items: 1,
            params: *params,
            nmi_convention: NMI_CONVENTION.into(),
            ..Default::default()
        },
    })
}

/// Element-wise mean, summed in input order.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no reports to average".into()))?;
    let mut out = first.clone();
    let n = reports.len() as f64;
    for m in Metric::ALL {
        let (t, v) = reports.iter().fold((0.0, 0.0), |(t, v), r| {
            let p = r.get(m);
            (t + p.vs_thermal, v + p.vs_visual)
        });
        *out.slot(m) = ModalityPair {
            vs_thermal: t / n,
            vs_visual: v / n,
        };
    }
    out.meta.items = reports.iter().map(|r| r.meta.items).sum();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonColumn {
    pub metric: Metric,
    pub modality: String,
    pub higher_is_better: bool,
}

impl ComparisonColumn {
    pub fn key(&self) -> String {
        format!("{}_vs_{}", self.metric.name(), self.modality)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<String>,
    pub columns: Vec<ComparisonColumn>,
    /// `values[row][column]`.
    pub values: Vec<Vec<f64>>,
    pub normalized: bool,
}

impl ComparisonTable {
    pub fn column(&self, metric: Metric, modality: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.metric == metric && c.modality == modality)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run");
        for c in &self.columns {
            s.push(',');
            s.push_str(&c.key());
        }
        s.push('\n');
        for (label, row) in self.rows.iter().zip(&self.values) {
            s.push_str(label);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// One row per report (labelled by run id). With `normalize`, each column is
/// divided by its largest absolute value; an all-zero column becomes all 1.
pub fn build_comparison(reports: &[MetricReport], normalize: bool) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Validation("nothing to compare".into()));
    }
    let columns: Vec<ComparisonColumn> = reports[0]
        .values()
        .iter()
        .map(|&(metric, modality, _)| ComparisonColumn {
            metric,
            modality: modality.into(),
            higher_is_better: metric.higher_is_better(),
        })
        .collect();
    let mut values: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| r.values().iter().map(|v| v.2).collect())
        .collect();
    if normalize {
        for j in 0..columns.len() {
            let max = values.iter().map(|row| row[j].abs()).fold(0.0, f64::max);
            for row in values.iter_mut() {
                row[j] = if max > 0.0 { row[j] / max } else { 1.0 };
            }
        }
    }
    Ok(ComparisonTable {
        rows: reports.iter().map(|r| r.meta.run_id.clone()).collect(),
        columns,
        values,
        normalized: normalize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RawImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::new(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn constant(h: usize, w: usize, v: f64) -> Plane {
        Plane::new(h, w, vec![v; h * w]).unwrap()
    }

    #[test]
    fn mse_and_psnr_conventions() {
        let a = noise(8, 8, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&constant(4, 4, 0.0), &constant(4, 4, 0.5)).unwrap(), 0.25);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr(&constant(4, 4, 0.0), &constant(4, 4, 1.0), 1.0).unwrap(), 0.0);
        let b = Plane::new(1, 1, vec![0.1]).unwrap();
        let z = Plane::new(1, 1, vec![0.0]).unwrap();
        assert!((psnr(&b, &z, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(mse(&a, &noise(8, 9, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn uqi_identity_range_and_window() {
        let a = noise(16, 16, 2);
        assert_eq!(uqi(&a, &a, 8).unwrap(), 1.0);
        let inv = Plane::new(16, 16, a.data.iter().map(|x| 1.0 - x).collect()).unwrap();
        let q = uqi(&a, &inv, 8).unwrap();
        assert!((-1.0..=1.0).contains(&q));
        assert!(uqi(&a, &a, 17).is_err());
        assert_eq!(uqi(&constant(9, 9, 0.0), &constant(9, 9, 0.0), 8).unwrap(), 1.0);
        assert_eq!(uqi(&constant(9, 9, 0.4), &constant(9, 9, 0.4), 8).unwrap(), 1.0);
    }

    #[test]
    fn msssim_identity_and_bounds() {
        let a = noise(64, 64, 3);
        assert_eq!(msssim(&a, &a, 5, 11, 1.5, 1.0).unwrap(), 1.0);
        let shifted = Plane::new(64, 64, a.data.iter().map(|x| x + 0.001).collect()).unwrap();
        assert!(msssim(&a, &shifted, 5, 11, 1.5, 1.0).unwrap() > 0.99);
        let mean: f64 = (0..10)
            .map(|s| msssim(&noise(64, 64, 100 + s), &noise(64, 64, 200 + s), 5, 11, 1.5, 1.0).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!(mean < 0.3, "{mean}");
    }

    #[test]
    fn msssim_plan_reduces() {
        let p = msssim_plan((64, 64), 5, 11).unwrap();
        assert_eq!(p.scales, 3);
        assert!(p.warning.is_some());
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = msssim_plan((8, 6), 5, 11).unwrap();
        assert_eq!((p.scales, p.window), (1, 5));
        assert!(msssim_plan((256, 256), 5, 11).unwrap().warning.is_none());
    }

    #[test]
    fn nmi_conventions() {
        let a = noise(32, 32, 4);
        assert_eq!(nmi(&a, &a, 64).unwrap(), 1.0);
        assert_eq!(nmi(&constant(4, 4, 0.2), &constant(4, 4, 0.7), 64).unwrap(), 1.0);
        let inv = Plane::new(32, 32, a.data.iter().map(|x| 1.0 - x).collect()).unwrap();
        assert!((nmi(&a, &inv, 64).unwrap() - 1.0).abs() < 1e-9);
        assert!(nmi(&noise(128, 128, 5), &noise(128, 128, 6), 64).unwrap() < 0.05);
    }

    #[test]
    fn symmetry() {
        let (a, b) = (noise(16, 16, 7), noise(16, 16, 8));
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!((uqi(&a, &b, 8).unwrap() - uqi(&b, &a, 8).unwrap()).abs() < 1e-9);
        assert!((nmi(&a, &b, 64).unwrap() - nmi(&b, &a, 64).unwrap()).abs() < 1e-9);
        let s = |x: &Plane, y: &Plane| msssim(x, y, 5, 11, 1.5, 1.0).unwrap();
        assert!((s(&a, &b) - s(&b, &a)).abs() < 1e-9);
    }

    fn pair_and_images() -> (ImagePair, FusedImage, FusedImage) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let visual = RawImage::from_fn(32, 32, 3, |_, _, _| rng.gen()).unwrap();
        let thermal = RawImage::from_fn(32, 32, 1, |_, _, _| rng.gen()).unwrap();
        let fv = FusedImage::new(visual.clone()).unwrap();
        let ft = FusedImage::new(thermal.replicate3()).unwrap();
        (ImagePair::new(visual, thermal, true).unwrap(), fv, ft)
    }

    #[test]
    fn evaluate_identity_columns() {
        let (pair, fv, ft) = pair_and_images();
        let p = MetricParams::default();
        let r = evaluate_fusion(&fv, &pair, &p).unwrap();
        assert_eq!(r.values().len(), 10);
        assert_eq!(
            (r.mse.vs_visual, r.uqi.vs_visual, r.msssim.vs_visual, r.nmi.vs_visual, r.psnr.vs_visual),
            (0.0, 1.0, 1.0, 1.0, PSNR_CAP_DB)
        );
        let r = evaluate_fusion(&ft, &pair, &p).unwrap();
        assert_eq!(r.mse.vs_thermal, 0.0);
        assert_eq!(r.psnr.vs_thermal, PSNR_CAP_DB);
        assert!((r.uqi.vs_thermal - 1.0).abs() < 1e-12);
        assert!((r.nmi.vs_thermal - 1.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_normalisation() {
        let (pair, fv, ft) = pair_and_images();
        let p = MetricParams::default();
        let a = evaluate_fusion(&fv, &pair, &p).unwrap();
        let t = build_comparison(std::slice::from_ref(&a), true).unwrap();
        assert!(t.values[0].iter().all(|&v| v.abs() == 1.0));
        let b = evaluate_fusion(&ft, &pair, &p).unwrap();
        let raw = build_comparison(&[a.clone(), b.clone()], false).unwrap();
        assert_eq!(raw.values[1], b.values().iter().map(|v| v.2).collect::<Vec<_>>());
        let norm = build_comparison(&[a, b], true).unwrap();
        assert_eq!(norm.values.len(), 2);
        assert_eq!(norm.columns.len(), 10);
        for j in 0..10 {
            let max = norm.values.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
        assert!(build_comparison(&[], true).is_err());
    }

    #[test]
    fn dominated_row_below_one() {
        let (pair, _, _) = pair_and_images();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fused = RawImage::from_fn(32, 32, 3, |r, c, ch| {
            0.5 * pair.visual.get(r, c, ch) + 0.5 * rng.gen::<f32>()
        })
        .unwrap();
        let fused = FusedImage::new(fused).unwrap();
        let larger = evaluate_fusion(&fused, &pair, &MetricParams::default()).unwrap();
        let mut smaller = larger.clone();
        for m in Metric::ALL {
            let p = smaller.slot(m);
            p.vs_thermal *= 0.5;
            p.vs_visual *= 0.5;
        }
        let t = build_comparison(&[larger, smaller], true).unwrap();
        assert!(t.values[0].iter().all(|&v| v.abs() == 1.0));
        assert!(t.values[1].iter().all(|&v| v.abs() < 1.0), "{:?}", t.values);
    }
}
