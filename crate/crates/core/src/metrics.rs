//! Image and mask metrics, high-frequency analysis and the pooled t-test.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::io::image::RgbImage;
use crate::parts::{Part, NUM_PARTS};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const CANNY_SIGMA: f64 = 1.4;
pub const CANNY_LOW: f64 = 0.1;
pub const CANNY_HIGH: f64 = 0.2;
pub const HIGH_PASS_RADIUS: f64 = 0.1;

fn same_size(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument(format!(
            "image sizes {}x{} and {}x{} differ",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels; identical images
/// give `+inf`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable windowed sum over the valid region.
fn filter_valid(img: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|k| taps[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads valid-region values back over the
/// full image.
fn filter_valid_transpose(values: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = values[y * ow + x];
            for k in 0..n {
                rows[(y + k) * ow + x] += taps[k] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for k in 0..n {
                out[y * w + x + k] += taps[k] * v;
            }
        }
    }
    out
}

struct SsimStats {
    mx: Vec<f64>,
    my: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_stats(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimStats {
    let taps = ssim_taps();
    let mx = filter_valid(x, w, h, &taps);
    let my = filter_valid(y, w, h, &taps);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let sxx = filter_valid(&xx, w, h, &taps);
    let syy = filter_valid(&yy, w, h, &taps);
    let sxy = filter_valid(&xy, w, h, &taps);
    let n = mx.len();
    let mut s = SsimStats {
        a1: vec![0.0; n],
        a2: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        mx,
        my,
    };
    for i in 0..n {
        let (mx, my) = (s.mx[i], s.my[i]);
        let vx = sxx[i] - mx * mx;
        let vy = syy[i] - my * my;
        let cov = sxy[i] - mx * my;
        s.a1[i] = 2.0 * mx * my + SSIM_C1;
        s.a2[i] = 2.0 * cov + SSIM_C2;
        s.b1[i] = mx * mx + my * my + SSIM_C1;
        s.b2[i] = vx + vy + SSIM_C2;
    }
    s
}

fn check_ssim_size(w: usize, h: usize) -> Result<()> {
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    Ok(())
}

/// Mean structural similarity of two luminance planes.
pub fn ssim_luminance(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<f64> {
    check_ssim_size(w, h)?;
    let s = ssim_stats(x, y, w, h);
    let n = s.mx.len();
    Ok((0..n)
        .map(|i| (s.a1[i] * s.a2[i]) / (s.b1[i] * s.b2[i]))
        .sum::<f64>()
        / n as f64)
}

/// Structural similarity on luminance.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    ssim_luminance(&a.luminance(), &b.luminance(), a.width, a.height)
}

/// SSIM and its gradient with respect to every RGB value of `a`.
pub fn ssim_with_grad(a: &RgbImage, b: &RgbImage) -> Result<(f64, Vec<f64>)> {
    same_size(a, b)?;
    let (w, h) = (a.width, a.height);
    check_ssim_size(w, h)?;
    let x = a.luminance();
    let y = b.luminance();
    let s = ssim_stats(&x, &y, w, h);
    let n = s.mx.len();
    let inv = 1.0 / n as f64;
    let mut c0 = vec![0.0; n];
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        let den = s.b1[i] * s.b2[i];
        let ssim = s.a1[i] * s.a2[i] / den;
        value += ssim;
        let (mx, my) = (s.mx[i], s.my[i]);
        c1[i] = inv * 2.0 * s.a1[i] / den;
        c2[i] = -inv * 2.0 * ssim / s.b2[i];
        c0[i] = inv
            * (2.0 * my * s.a2[i] / den - 2.0 * mx * ssim / s.b1[i] - 2.0 * my * s.a1[i] / den
                + 2.0 * mx * ssim / s.b2[i]);
    }
    let taps = ssim_taps();
    let t0 = filter_valid_transpose(&c0, w, h, &taps);
    let t1 = filter_valid_transpose(&c1, w, h, &taps);
    let t2 = filter_valid_transpose(&c2, w, h, &taps);
    let mut grad = vec![0.0; 3 * w * h];
    for k in 0..w * h {
        let g = t0[k] + y[k] * t1[k] + x[k] * t2[k];
        for c in 0..3 {
            grad[3 * k + c] = g * LUMA[c];
        }
    }
    Ok((value * inv, grad))
}

/// Per-part and mean IoU over labels 1..=15; parts absent from both masks
/// are skipped. With no part present anywhere the mean is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskIou {
    pub per_part: [Option<f64>; NUM_PARTS],
    pub mean: f64,
}

pub fn mask_iou(pred: &[u8], gt: &[u8]) -> Result<MaskIou> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "mask sizes {} and {} differ",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = [0usize; NUM_PARTS + 1];
    let mut union = [0usize; NUM_PARTS + 1];
    for (&p, &g) in pred.iter().zip(gt) {
        if p as usize > NUM_PARTS || g as usize > NUM_PARTS {
            return Err(Error::InvalidArgument("mask label outside 0..=15".into()));
        }
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    let mut per_part = [None; NUM_PARTS];
    let mut total = 0.0;
    let mut defined = 0;
    for l in 1..=NUM_PARTS {
        if union[l] > 0 {
            let iou = inter[l] as f64 / union[l] as f64;
            per_part[l - 1] = Some(iou);
            total += iou;
            defined += 1;
        }
    }
    let mean = if defined == 0 {
        1.0
    } else {
        total / defined as f64
    };
    Ok(MaskIou { per_part, mean })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HighFreqMaps {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
    pub high_pass: Vec<f64>,
}

fn gaussian_blur(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|d| taps[(d + r) as usize] * img[y * w + clamp(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| taps[(d + r) as usize] * tmp[clamp(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edges: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression and hysteresis with thresholds relative to the peak
/// gradient. The outermost pixel ring is never an edge.
pub fn canny(img: &[f64], w: usize, h: usize) -> Vec<bool> {
    let mut edges = vec![false; w * h];
    if w < 3 || h < 3 {
        return edges;
    }
    let s = gaussian_blur(img, w, h, CANNY_SIGMA);
    let at = |x: usize, y: usize| s[y * w + x];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let dy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y * w + x;
            gx[i] = dx;
            gy[i] = dy;
            mag[i] = dx.hypot(dy);
        }
    }
    let peak = mag.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return edges;
    }
    let mut thin = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (ox, oy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let fwd = mag[(y as isize + oy) as usize * w + (x as isize + ox) as usize];
            let back = mag[(y as isize - oy) as usize * w + (x as isize - ox) as usize];
            // Strict on one side so plateaus of equal magnitude keep one pixel.
            if m > back && m >= fwd {
                thin[i] = m;
            }
        }
    }
    let (low, high) = (CANNY_LOW * peak, CANNY_HIGH * peak);
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= high).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] >= low {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edges
}

/// Row-then-column 2D DFT in place.
pub fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
    if inverse {
        let s = 1.0 / (w * h) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Magnitude of the inverse transform after zeroing every frequency within
/// `radius` of DC (in cycles per image, wrapped to the centered range). A
/// negative radius keeps the spectrum intact.
pub fn fourier_high_pass(img: &[f64], w: usize, h: usize, radius: f64) -> Vec<f64> {
    let mut data: Vec<Complex<f64>> = img.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut data, w, h, false);
    let centered = |k: usize, n: usize| {
        if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    for y in 0..h {
        for x in 0..w {
            if centered(x, w).hypot(centered(y, h)) <= radius {
                data[y * w + x] = Complex::new(0.0, 0.0);
            }
        }
    }
    fft2(&mut data, w, h, true);
    data.iter().map(|c| c.norm()).collect()
}

pub fn high_freq_maps(image: &RgbImage) -> HighFreqMaps {
    let (w, h) = (image.width, image.height);
    let lum = image.luminance();
    HighFreqMaps {
        width: w,
        height: h,
        edges: canny(&lum, w, h),
        high_pass: fourier_high_pass(&lum, w, h, HIGH_PASS_RADIUS * w.min(h) as f64),
    }
}

impl HighFreqMaps {
    /// Fraction of pixels marked as edges.
    pub fn edge_density(&self) -> f64 {
        self.edges.iter().filter(|&&e| e).count() as f64 / self.edges.len().max(1) as f64
    }

    /// Mean squared high-pass magnitude.
    pub fn high_pass_energy(&self) -> f64 {
        self.high_pass.iter().map(|v| v * v).sum::<f64>() / self.high_pass.len().max(1) as f64
    }
}

/// One row per image: the image, its Canny edges and its high-pass
/// magnitude (normalized by the largest magnitude across all rows), with a
/// one-pixel white separator.
pub fn high_freq_figure(images: &[RgbImage]) -> Result<RgbImage> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidArgument("no images to compare".into()));
    };
    for img in images {
        same_size(first, img)?;
    }
    let (w, h) = (first.width, first.height);
    let maps: Vec<HighFreqMaps> = images.iter().map(high_freq_maps).collect();
    let peak = maps
        .iter()
        .flat_map(|m| m.high_pass.iter().copied())
        .fold(0.0f64, f64::max);
    let (fw, fh) = (3 * w + 2, images.len() * (h + 1) - 1);
    let mut out = RgbImage::constant(fw, fh, 1.0);
    for (row, (img, m)) in images.iter().zip(&maps).enumerate() {
        let y0 = row * (h + 1);
        for y in 0..h {
            for x in 0..w {
                let src = y * w + x;
                let dst = |col: usize| 3 * ((y0 + y) * fw + col * (w + 1) + x);
                let (d0, d1, d2) = (dst(0), dst(1), dst(2));
                out.data[d0..d0 + 3].copy_from_slice(&img.data[3 * src..3 * src + 3]);
                let e = if m.edges[src] { 1.0 } else { 0.0 };
                out.data[d1..d1 + 3].fill(e);
                let hp = if peak > 0.0 {
                    m.high_pass[src] / peak
                } else {
                    0.0
                };
                out.data[d2..d2 + 3].fill(hp);
            }
        }
    }
    Ok(out)
}

/// `name,edge_density,high_pass_energy` rows.
pub fn high_freq_csv(names: &[String], images: &[RgbImage]) -> String {
    let mut s = String::from("image,edge_density,high_pass_energy\n");
    for (name, img) in names.iter().zip(images) {
        let m = high_freq_maps(img);
        let _ = writeln!(
            s,
            "{name},{:.6},{:.6e}",
            m.edge_density(),
            m.high_pass_energy()
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TTestResult {
    pub mean_x: f64,
    pub sd_x: f64,
    pub mean_y: f64,
    pub sd_y: f64,
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Pooled-variance Student's t-test.
pub fn two_sample_t_test(xs: &[f64], ys: &[f64]) -> Result<TTestResult> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::InvalidArgument(
            "each sample needs at least two values".into(),
        ));
    }
    let (mean_x, sd_x) = mean_sd(xs);
    let (mean_y, sd_y) = mean_sd(ys);
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let df = n1 + n2 - 2.0;
    let pooled = ((n1 - 1.0) * sd_x * sd_x + (n2 - 1.0) * sd_y * sd_y) / df;
    let diff = mean_x - mean_y;
    let (t, p) = if pooled == 0.0 {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(diff), 0.0)
        }
    } else {
        let t = diff / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
        (t, beta_reg(df / 2.0, 0.5, df / (df + t * t)))
    };
    Ok(TTestResult {
        mean_x,
        sd_x,
        mean_y,
        sd_y,
        t,
        df,
        p,
    })
}

/// Two-tailed critical value of Student's t at significance `alpha`.
pub fn t_critical(df: f64, alpha: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    pub iou: MaskIou,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricReport {
    pub views: Vec<ViewMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, view: ViewMetrics) {
        self.views.push(view);
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.views.iter().map(|v| v.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.views.iter().map(|v| v.ssim))
    }

    pub fn mean_iou(&self) -> f64 {
        mean(self.views.iter().map(|v| v.iou.mean))
    }

    /// Mean IoU of each part over the views where it is defined.
    pub fn part_iou(&self) -> [Option<f64>; NUM_PARTS] {
        let mut out = [None; NUM_PARTS];
        for (p, slot) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = self
                .views
                .iter()
                .filter_map(|v| v.iou.per_part[p])
                .collect();
            if !vals.is_empty() {
                *slot = Some(mean(vals.into_iter()));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim,iou\n");
        for v in &self.views {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6}",
                v.view, v.psnr, v.ssim, v.iou.mean
            );
        }
        let _ = writeln!(
            s,
            "mean,{:.6},{:.6},{:.6}",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_iou()
        );
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>9} {:>8} {:>8}", "view", "PSNR", "SSIM", "IoU");
        for v in &self.views {
            let _ = writeln!(
                s,
                "{:<24} {:>9.3} {:>8.4} {:>8.4}",
                v.view, v.psnr, v.ssim, v.iou.mean
            );
        }
        let _ = writeln!(
            s,
            "{:<24} {:>9.3} {:>8.4} {:>8.4}",
            "mean",
            self.mean_psnr(),
            self.mean_ssim(),
            self.mean_iou()
        );
        for (p, iou) in self.part_iou().iter().enumerate() {
            if let Some(iou) = iou {
                let _ = writeln!(s, "  {:<22} IoU {:.4}", Part::ALL[p].name(), iou);
            }
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
