//! Direct-formula reference implementations for the test suites.
//!
//! Everything here works on plain row-major `f64` slices and is written for
//! clarity, not speed: windows are re-summed from scratch, filters are full
//! 2-D sums, histograms are counted in nested loops. Nothing is shared with
//! the production crate.

/// Mean squared difference.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s / a.len() as f64
}

/// PSNR in dB with a 120 dB ceiling for MSE below 1e-12.
pub fn psnr(a: &[f64], b: &[f64], range: f64) -> f64 {
    let m = mse(a, b);
    if m < 1e-12 {
        return 120.0;
    }
    let v = 10.0 * (range * range / m).log10();
    if v > 120.0 { 120.0 } else { v }
}

/// Universal quality index: mean over every `k`×`k` window of
/// `4·cov·μa·μb / ((σa²+σb²)(μa²+μb²))`, with two-pass window statistics.
///
/// Vanishing factors (< 1e-12): both → 1, variance only → luminance term,
/// mean only → 0.
pub fn uqi(a: &[f64], b: &[f64], h: usize, w: usize, k: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=(h - k) {
        for c in 0..=(w - k) {
            let n = (k * k) as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in r..r + k {
                for j in c..c + k {
                    ma += a[i * w + j];
                    mb += b[i * w + j];
                }
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in r..r + k {
                for j in c..c + k {
                    let da = a[i * w + j] - ma;
                    let db = b[i * w + j] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            let sig = va + vb;
            let mu = ma * ma + mb * mb;
            let q = if sig < 1e-12 && mu < 1e-12 {
                1.0
            } else if sig < 1e-12 {
                2.0 * ma * mb / mu
            } else if mu < 1e-12 {
                0.0
            } else {
                4.0 * cov * ma * mb / (sig * mu)
            };
            total += q;
            count += 1;
        }
    }
    total / count as f64
}

const MS_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Multi-scale SSIM with a full 2-D Gaussian window evaluated at every valid
/// position. Scale count drops while `window·2^(s−1)` exceeds the shorter
/// side, and the window shrinks to the largest odd size that fits.
/// Contrast-structure terms are used below the last scale and full SSIM at
/// it, each clamped at zero.
pub fn msssim(a: &[f64], b: &[f64], h: usize, w: usize, scales: usize, window: usize, sigma: f64, range: f64) -> f64 {
    let side = h.min(w);
    let mut s = scales;
    while s > 1 && window * (1 << (s - 1)) > side {
        s -= 1;
    }
    let win = if window > side {
        if side % 2 == 1 { side } else { side - 1 }
    } else {
        window
    };
    let wsum: f64 = MS_WEIGHTS[..s].iter().sum();

    // 2-D Gaussian weights, normalised as a whole.
    let centre = (win as f64 - 1.0) / 2.0;
    let mut g = vec![0.0; win * win];
    let mut z = 0.0;
    for i in 0..win {
        for j in 0..win {
            let d2 = (i as f64 - centre).powi(2) + (j as f64 - centre).powi(2);
            g[i * win + j] = (-d2 / (2.0 * sigma * sigma)).exp();
            z += g[i * win + j];
        }
    }
    for x in &mut g {
        *x /= z;
    }

    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let (mut xa, mut xb, mut hh, mut ww) = (a.to_vec(), b.to_vec(), h, w);
    let mut result = 1.0;
    for scale in 0..s {
        let (mut cs_sum, mut ssim_sum, mut n) = (0.0, 0.0, 0.0);
        for r in 0..=(hh - win) {
            for c in 0..=(ww - win) {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let gw = g[i * win + j];
                        let pa = xa[(r + i) * ww + c + j];
                        let pb = xb[(r + i) * ww + c + j];
                        ma += gw * pa;
                        mb += gw * pb;
                        saa += gw * pa * pa;
                        sbb += gw * pb * pb;
                        sab += gw * pa * pb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let cs = (2.0 * cov + c2) / (va + vb + c2);
                let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                cs_sum += cs;
                ssim_sum += l * cs;
                n += 1.0;
            }
        }
        let term = if scale + 1 == s { ssim_sum / n } else { cs_sum / n };
        result *= term.max(0.0).powf(MS_WEIGHTS[scale] / wsum);
        if scale + 1 < s {
            let (nh, nw) = (hh / 2, ww / 2);
            let mut pa = vec![0.0; nh * nw];
            let mut pb = vec![0.0; nh * nw];
            for r in 0..nh {
                for c in 0..nw {
                    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        pa[r * nw + c] += xa[(2 * r + dr) * ww + 2 * c + dc] / 4.0;
                        pb[r * nw + c] += xb[(2 * r + dr) * ww + 2 * c + dc] / 4.0;
                    }
                }
            }
            xa = pa;
            xb = pb;
            hh = nh;
            ww = nw;
        }
    }
    result
}

/// Bin of `v` among `bins` equal slices of `[0, 1]`; 1.0 lands in the last.
pub fn bin_of(v: f64, bins: usize) -> usize {
    let mut k = 0;
    while k + 1 < bins && v >= (k + 1) as f64 / bins as f64 {
        k += 1;
    }
    k
}

/// `2·I(A;B)/(H(A)+H(B))` in nats from a counted joint histogram; 1 when
/// both marginals are degenerate.
pub fn nmi(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let n = a.len() as f64;
    let mut joint = vec![vec![0.0; bins]; bins];
    for i in 0..a.len() {
        joint[bin_of(a[i], bins)][bin_of(b[i], bins)] += 1.0 / n;
    }
    let mut ha = 0.0;
    let mut hb = 0.0;
    let mut hab = 0.0;
    for i in 0..bins {
        let pa: f64 = (0..bins).map(|j| joint[i][j]).sum();
        let pb: f64 = (0..bins).map(|j| joint[j][i]).sum();
        if pa > 0.0 {
            ha -= pa * pa.ln();
        }
        if pb > 0.0 {
            hb -= pb * pb.ln();
        }
        for j in 0..bins {
            let p = joint[i][j];
            if p > 0.0 {
                hab -= p * p.ln();
            }
        }
    }
    if ha + hb == 0.0 {
        return 1.0;
    }
    (2.0 * (ha + hb - hab) / (ha + hb)).clamp(0.0, 1.0)
}

/// Luminance of an interleaved RGB buffer with Rec. 601 weights; gray
/// pixels return their value unchanged.
pub fn luminance(rgb: &[f64]) -> Vec<f64> {
    rgb.chunks(3)
        .map(|p| {
            if p[0] == p[1] && p[1] == p[2] {
                p[0]
            } else {
                0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
            }
        })
        .collect()
}

/// Hard histogram of `values`, normalised, then `+ε` per bin and
/// renormalised.
pub fn histogram(values: &[f64], bins: usize, eps: f64) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &v in values {
        counts[bin_of(v, bins)] += 1.0;
    }
    smooth(&counts, values.len() as f64, eps)
}

fn smooth(counts: &[f64], n: f64, eps: f64) -> Vec<f64> {
    let p: Vec<f64> = counts.iter().map(|c| c / n + eps).collect();
    let z: f64 = p.iter().sum();
    p.iter().map(|x| x / z).collect()
}

/// Gaussian soft histogram: each value spreads unit mass over the bin
/// centres with width `sigma_fraction` bin widths.
pub fn soft_histogram(values: &[f64], bins: usize, sigma_fraction: f64, eps: f64) -> Vec<f64> {
    let width = 1.0 / bins as f64;
    let sigma = sigma_fraction * width;
    let mut mass = vec![0.0; bins];
    for &v in values {
        let k: Vec<f64> = (0..bins)
            .map(|i| {
                let d = v - (i as f64 + 0.5) * width;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let z: f64 = k.iter().sum();
        for i in 0..bins {
            mass[i] += k[i] / z;
        }
    }
    smooth(&mass, values.len() as f64, eps)
}

/// `Σ p ln(p/q)`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += p[i] * (p[i] / q[i]).ln();
    }
    s
}

fn clamp_prob(p: f64) -> f64 {
    p.max(1e-7).min(1.0 - 1e-7)
}

/// `−ln D(real) − ln(1 − D(fused))`.
pub fn discriminator_loss(d_real: f64, d_fused: f64) -> f64 {
    -clamp_prob(d_real).ln() - (1.0 - clamp_prob(d_fused)).ln()
}

/// `λ_ir·(−ln D_ir) + λ_rgb·(−ln D_rgb)`.
pub fn generator_loss(d_ir: f64, d_rgb: f64, lambda_ir: f64, lambda_rgb: f64) -> f64 {
    lambda_ir * -clamp_prob(d_ir).ln() + lambda_rgb * -clamp_prob(d_rgb).ln()
}

/// `mean|F − rep3(T)| + mean|F − V|` for interleaved RGB `fused`/`visual`.
pub fn l1(fused: &[f64], thermal: &[f64], visual: &[f64]) -> f64 {
    let n = fused.len() as f64;
    let mut to_t = 0.0;
    let mut to_v = 0.0;
    for i in 0..fused.len() {
        to_t += (fused[i] - thermal[i / 3]).abs();
        to_v += (fused[i] - visual[i]).abs();
    }
    to_t / n + to_v / n
}

/// Multi-head attention by explicit loops. `q` is `n × dm`, `k` and `v` are
/// `m × dm`, all row-major. Returns the attended rows (`n × dm`) and the
/// head-averaged `n × m` map.
pub fn attention(q: &[f64], k: &[f64], v: &[f64], n: usize, m: usize, dm: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dk = dm / heads;
    let mut out = vec![0.0; n * dm];
    let mut map = vec![0.0; n * m];
    for hd in 0..heads {
        let off = hd * dk;
        for i in 0..n {
            let mut logits = vec![0.0; m];
            for j in 0..m {
                let mut dot = 0.0;
                for t in 0..dk {
                    dot += q[i * dm + off + t] * k[j * dm + off + t];
                }
                logits[j] = dot / (dk as f64).sqrt();
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|x| (x - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..m {
                let p = e[j] / z;
                map[i * m + j] += p / heads as f64;
                for t in 0..dk {
                    out[i * dm + off + t] += p * v[j * dm + off + t];
                }
            }
        }
    }
    (out, map)
}

/// `x · Wᵀ (+ b)` for row-major `x` (`rows × d_in`) and `w` (`d_out × d_in`).
pub fn linear(x: &[f64], w: &[f64], b: Option<&[f64]>, rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * d_out];
    for r in 0..rows {
        for o in 0..d_out {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..d_in {
                s += x[r * d_in + i] * w[o * d_in + i];
            }
            y[r * d_out + o] = s;
        }
    }
    y
}
