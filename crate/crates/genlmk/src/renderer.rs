//! Differentiable soft renderer: composites the deformed template onto an
//! image as Gaussian strokes so image-space losses yield exact gradients
//! w.r.t. the deformation.
//!
//! Strokes have smooth, untruncated support. Overlapping coverage combines
//! order-independently as `1 - prod(1 - w_k)`; stroke colors are mixed by
//! coverage weight. Per pixel the output is a convex combination of the
//! input and the stroke color, so values stay in `[-1, 1]`.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::template::{apply_deformation, Template};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Ix3, Ix4};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    /// Lines densified into evenly spaced point splats per segment.
    Points,
    /// Distance-to-segment field per line segment.
    Polylines,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Gaussian falloff in pixels.
    pub sigma_px: f64,
    /// Stroke opacity in (0, 1].
    pub alpha: f64,
    pub mode: RenderMode,
    /// Point-mode densification per line segment (endpoints included).
    pub samples_per_segment: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            sigma_px: 1.5,
            alpha: 0.9,
            mode: RenderMode::Points,
            samples_per_segment: 8,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px.is_finite() && self.sigma_px > 0.0) {
            return Err(Error::Param(format!("sigma_px must be > 0, got {}", self.sigma_px)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Param(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if self.samples_per_segment < 2 {
            return Err(Error::Param(format!(
                "samples_per_segment must be >= 2, got {}",
                self.samples_per_segment
            )));
        }
        Ok(())
    }
}

/// Gaussian splat kernel `exp(-d^2 / (2 sigma^2))`, smooth everywhere.
pub fn splat_weight<F: Scalar>(d: F, sigma_px: F) -> Result<F> {
    if sigma_px <= F::zero() {
        return Err(Error::Param(format!("sigma_px must be > 0, got {sigma_px}")));
    }
    let two = F::from_f64(2.0);
    Ok((-(d * d) / (two * sigma_px * sigma_px)).exp())
}

/// Checks the ImageArray contract: 3 channels, H and W at least 8, finite.
pub fn validate_image<F: Scalar>(image: &ArrayView3<'_, F>) -> Result<()> {
    let (c, h, w) = image.dim();
    if c != 3 || h < 8 || w < 8 {
        return Err(Error::Shape(format!(
            "image must be 3xHxW with H, W >= 8, got {c}x{h}x{w}"
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input image".into()));
    }
    Ok(())
}

/// A stroke primitive in deformed-position space. Point samples interpolate
/// two landmark positions (`pos = ca * P[a] + cb * P[b]`); segments span them.
#[derive(Debug, Clone)]
enum Prim<F> {
    Point { a: usize, b: usize, ca: F, cb: F, color: [F; 3] },
    Segment { a: usize, b: usize, color: [F; 3] },
}

/// Stroke primitives for a template under the given settings, independent of
/// the deformation. Landmarks on no line splat as single white points.
fn build_prims<F: Scalar>(t: &Template, s: &RenderSettings) -> Vec<Prim<F>> {
    let to_signed = |c: [f64; 3]| {
        [
            F::from_f64(2.0 * c[0] - 1.0),
            F::from_f64(2.0 * c[1] - 1.0),
            F::from_f64(2.0 * c[2] - 1.0),
        ]
    };
    let mut prims = Vec::new();
    let mut on_line = vec![false; t.n_landmarks];
    for line in &t.lines {
        let color = to_signed(line.color);
        for &i in &line.indices {
            on_line[i] = true;
        }
        for seg in line.indices.windows(2) {
            match s.mode {
                RenderMode::Points => {
                    let n = s.samples_per_segment;
                    for k in 0..n {
                        let tpar = F::from_f64(k as f64 / (n - 1) as f64);
                        prims.push(Prim::Point {
                            a: seg[0],
                            b: seg[1],
                            ca: F::one() - tpar,
                            cb: tpar,
                            color,
                        });
                    }
                }
                RenderMode::Polylines => {
                    prims.push(Prim::Segment { a: seg[0], b: seg[1], color });
                }
            }
        }
    }
    let white = to_signed([1.0, 1.0, 1.0]);
    for (i, covered) in on_line.iter().enumerate() {
        if !covered {
            prims.push(Prim::Point { a: i, b: i, ca: F::one(), cb: F::zero(), color: white });
        }
    }
    prims
}

/// Squared distance from a pixel center to a primitive, plus the projection
/// parameter needed for the adjoint.
fn prim_dist2<F: Scalar>(prim: &Prim<F>, pos: &Array2<F>, cx: F, cy: F) -> (F, F, F, F) {
    // Returns (d2, mx, my, t_hat) where (mx, my) is the closest stroke point.
    match *prim {
        Prim::Point { a, b, ca, cb, .. } => {
            let px = ca * pos[[a, 0]] + cb * pos[[b, 0]];
            let py = ca * pos[[a, 1]] + cb * pos[[b, 1]];
            let dx = cx - px;
            let dy = cy - py;
            (dx * dx + dy * dy, px, py, F::zero())
        }
        Prim::Segment { a, b, .. } => {
            let ax = pos[[a, 0]];
            let ay = pos[[a, 1]];
            let bx = pos[[b, 0]];
            let by = pos[[b, 1]];
            let vx = bx - ax;
            let vy = by - ay;
            let len2 = vx * vx + vy * vy;
            let t_hat = if len2 > F::from_f64(1e-20) {
                (((cx - ax) * vx + (cy - ay) * vy) / len2)
                    .max(F::zero())
                    .min(F::one())
            } else {
                F::zero()
            };
            let mx = ax + t_hat * vx;
            let my = ay + t_hat * vy;
            let dx = cx - mx;
            let dy = cy - my;
            (dx * dx + dy * dy, mx, my, t_hat)
        }
    }
}

/// Renderer core bound to one template/settings/resolution triple.
pub struct SoftRenderer<F: Scalar> {
    prims: Vec<Prim<F>>,
    sigma: F,
    alpha: F,
    width: usize,
    height: usize,
    template_points: Array2<F>,
}

// Below this total coverage the color-mix ratio is taken at its limit 1.
fn coverage_floor<F: Scalar>() -> F {
    F::from_f64(1e-20)
}

impl<F: Scalar> SoftRenderer<F> {
    pub fn new(t: &Template, s: &RenderSettings, width: usize, height: usize) -> Result<Self> {
        s.validate()?;
        Ok(SoftRenderer {
            prims: build_prims(t, s),
            sigma: F::from_f64(s.sigma_px),
            alpha: F::from_f64(s.alpha),
            width,
            height,
            template_points: t.points_array(),
        })
    }

    pub fn n_landmarks(&self) -> usize {
        self.template_points.nrows()
    }

    /// Deformed landmark positions in pixel space.
    pub fn positions_px(&self, delta: &ArrayView2<'_, F>) -> Result<Array2<F>> {
        let n = self.n_landmarks();
        if delta.dim() != (n, 2) {
            return Err(Error::Shape(format!(
                "delta must be {}x2, got {}x{}",
                n,
                delta.dim().0,
                delta.dim().1
            )));
        }
        let mut pos = &self.template_points + delta;
        let sx = F::from_f64(self.width as f64);
        let sy = F::from_f64(self.height as f64);
        for mut row in pos.rows_mut() {
            row[0] = row[0] * sx;
            row[1] = row[1] * sy;
        }
        Ok(pos)
    }

    /// Forward composite of the deformed template over `image`.
    pub fn forward(&self, delta: &ArrayView2<'_, F>, image: &ArrayView3<'_, F>) -> Result<Array3<F>> {
        validate_image(image)?;
        let (_, h, w) = image.dim();
        if (h, w) != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "image is {h}x{w} but renderer was built for {}x{}",
                self.height, self.width
            )));
        }
        let pos = self.positions_px(delta)?;
        let mut out = image.to_owned();
        let half = F::from_f64(0.5);
        let ns = self.prims.len();
        let mut weights = vec![F::zero(); ns];
        for iy in 0..h {
            let cy = F::from_f64(iy as f64) + half;
            for ix in 0..w {
                let cx = F::from_f64(ix as f64) + half;
                let mut s_w = F::zero();
                let mut acc = [F::zero(); 3];
                let mut prod = F::one();
                for (k, prim) in self.prims.iter().enumerate() {
                    let (d2, ..) = prim_dist2(prim, &pos, cx, cy);
                    let wk = (-d2 / (F::from_f64(2.0) * self.sigma * self.sigma)).exp();
                    weights[k] = wk;
                    s_w += wk;
                    prod = prod * (F::one() - wk);
                    let color = prim_color(prim);
                    for c in 0..3 {
                        acc[c] += wk * color[c];
                    }
                }
                let total = F::one() - prod;
                let mix = if s_w > coverage_floor() { total / s_w } else { F::one() };
                for c in 0..3 {
                    let i_c = out[[c, iy, ix]];
                    out[[c, iy, ix]] =
                        (F::one() - self.alpha * total) * i_c + self.alpha * mix * acc[c];
                }
            }
        }
        Ok(out)
    }

    /// Adjoint: gradients of a scalar loss w.r.t. `delta` (normalized units)
    /// and the input image, given the loss gradient w.r.t. the output.
    pub fn backward(
        &self,
        delta: &ArrayView2<'_, F>,
        image: &ArrayView3<'_, F>,
        grad_out: &ArrayView3<'_, F>,
    ) -> Result<(Array2<F>, Array3<F>)> {
        let (_, h, w) = image.dim();
        let pos = self.positions_px(delta)?;
        let mut d_pos = Array2::<F>::zeros(pos.raw_dim());
        let mut d_img = Array3::<F>::zeros(image.raw_dim());
        let half = F::from_f64(0.5);
        let two = F::from_f64(2.0);
        let inv_2s2 = F::one() / (two * self.sigma * self.sigma);
        let ns = self.prims.len();
        let mut weights = vec![F::zero(); ns];
        let mut prefix = vec![F::one(); ns + 1];
        let mut suffix = vec![F::one(); ns + 1];
        for iy in 0..h {
            let cy = F::from_f64(iy as f64) + half;
            for ix in 0..w {
                let cx = F::from_f64(ix as f64) + half;
                let mut s_w = F::zero();
                let mut acc = [F::zero(); 3];
                for (k, prim) in self.prims.iter().enumerate() {
                    let (d2, ..) = prim_dist2(prim, &pos, cx, cy);
                    let wk = (-d2 * inv_2s2).exp();
                    weights[k] = wk;
                    s_w += wk;
                    let color = prim_color(prim);
                    for c in 0..3 {
                        acc[c] += wk * color[c];
                    }
                }
                for k in 0..ns {
                    prefix[k + 1] = prefix[k] * (F::one() - weights[k]);
                }
                for k in (0..ns).rev() {
                    suffix[k] = suffix[k + 1] * (F::one() - weights[k]);
                }
                let total = F::one() - prefix[ns];
                let g = [
                    grad_out[[0, iy, ix]],
                    grad_out[[1, iy, ix]],
                    grad_out[[2, iy, ix]],
                ];
                // d(out)/d(input pixel) is the transparency factor.
                for c in 0..3 {
                    d_img[[c, iy, ix]] = g[c] * (F::one() - self.alpha * total);
                }
                let covered = s_w > coverage_floor();
                // Partials of the compositing w.r.t. total coverage W, the
                // weight sum S, and the color accumulator A.
                let (d_total, d_sum, d_acc_scale) = if covered {
                    let mut d_total = F::zero();
                    let mut d_sum = F::zero();
                    for c in 0..3 {
                        let i_c = image[[c, iy, ix]];
                        d_total += g[c] * self.alpha * (acc[c] / s_w - i_c);
                        d_sum += g[c] * (-self.alpha * total * acc[c] / (s_w * s_w));
                    }
                    (d_total, d_sum, self.alpha * total / s_w)
                } else {
                    let mut d_total = F::zero();
                    for c in 0..3 {
                        d_total += g[c] * (-self.alpha * image[[c, iy, ix]]);
                    }
                    (d_total, F::zero(), self.alpha)
                };
                for (k, prim) in self.prims.iter().enumerate() {
                    let color = prim_color(prim);
                    let mut d_wk = d_total * prefix[k] * suffix[k + 1] + d_sum;
                    for c in 0..3 {
                        d_wk += g[c] * d_acc_scale * color[c];
                    }
                    if d_wk == F::zero() {
                        continue;
                    }
                    let (d2, mx, my, t_hat) = prim_dist2(prim, &pos, cx, cy);
                    let wk = (-d2 * inv_2s2).exp();
                    let d_d2 = -d_wk * wk * inv_2s2;
                    // d(d2)/d(closest point) = -2 (c - m), split onto the two
                    // endpoint landmarks by their interpolation coefficients.
                    let gx = -two * (cx - mx) * d_d2;
                    let gy = -two * (cy - my) * d_d2;
                    let (a, b, ca, cb) = match *prim {
                        Prim::Point { a, b, ca, cb, .. } => (a, b, ca, cb),
                        Prim::Segment { a, b, .. } => (a, b, F::one() - t_hat, t_hat),
                    };
                    d_pos[[a, 0]] += ca * gx;
                    d_pos[[a, 1]] += ca * gy;
                    d_pos[[b, 0]] += cb * gx;
                    d_pos[[b, 1]] += cb * gy;
                }
            }
        }
        // Chain pixel-space position gradients back to normalized delta.
        let sx = F::from_f64(self.width as f64);
        let sy = F::from_f64(self.height as f64);
        for mut row in d_pos.rows_mut() {
            row[0] = row[0] * sx;
            row[1] = row[1] * sy;
        }
        Ok((d_pos, d_img))
    }
}

fn prim_color<F: Scalar>(p: &Prim<F>) -> [F; 3] {
    match p {
        Prim::Point { color, .. } | Prim::Segment { color, .. } => *color,
    }
}

/// One-shot render of a single image (no graph involvement).
pub fn render<F: Scalar>(
    delta: &ArrayView2<'_, F>,
    t: &Template,
    image: &ArrayView3<'_, F>,
    s: &RenderSettings,
) -> Result<Array3<F>> {
    let (_, h, w) = image.dim();
    SoftRenderer::new(t, s, w, h)?.forward(delta, image)
}

/// Autodiff node: renders a batch `[b, n, 2]` of deformations onto a batch
/// `[b, 3, h, w]` of images, differentiable w.r.t. both inputs.
pub fn render_batch<F: Scalar>(
    delta: &Tensor<F>,
    image: &Tensor<F>,
    t: &Template,
    s: &RenderSettings,
) -> Result<Tensor<F>> {
    let dshape = delta.shape();
    let ishape = image.shape();
    if dshape.len() != 3 || dshape[1] != t.n_landmarks || dshape[2] != 2 {
        return Err(Error::Shape(format!(
            "delta batch must be Bx{}x2, got {:?}",
            t.n_landmarks, dshape
        )));
    }
    if ishape.len() != 4 || ishape[0] != dshape[0] {
        return Err(Error::Shape(format!(
            "image batch must be Bx3xHxW with matching batch, got {:?}",
            ishape
        )));
    }
    let (h, w) = (ishape[2], ishape[3]);
    let core = SoftRenderer::<F>::new(t, s, w, h)?;
    let dv = delta.data().clone().into_dimensionality::<Ix3>().unwrap();
    let iv = image.data().clone().into_dimensionality::<Ix4>().unwrap();
    let b = dshape[0];
    let mut out = iv.clone();
    for bi in 0..b {
        let rendered = core.forward(
            &dv.index_axis(ndarray::Axis(0), bi),
            &iv.index_axis(ndarray::Axis(0), bi),
        )?;
        out.index_axis_mut(ndarray::Axis(0), bi).assign(&rendered);
    }
    Ok(Tensor::from_op(
        out.into_dyn(),
        vec![delta.clone(), image.clone()],
        Box::new(move |node| {
            let g = node.out_grad().into_dimensionality::<Ix4>().unwrap();
            let dv = node
                .parent(0)
                .data()
                .clone()
                .into_dimensionality::<Ix3>()
                .unwrap();
            let iv = node
                .parent(1)
                .data()
                .clone()
                .into_dimensionality::<Ix4>()
                .unwrap();
            let mut d_delta = ndarray::Array3::<F>::zeros(dv.raw_dim());
            let mut d_image = ndarray::Array4::<F>::zeros(iv.raw_dim());
            for bi in 0..dv.dim().0 {
                let (dp, di) = core
                    .backward(
                        &dv.index_axis(ndarray::Axis(0), bi),
                        &iv.index_axis(ndarray::Axis(0), bi),
                        &g.index_axis(ndarray::Axis(0), bi),
                    )
                    .expect("render backward");
                d_delta.index_axis_mut(ndarray::Axis(0), bi).assign(&dp);
                d_image.index_axis_mut(ndarray::Axis(0), bi).assign(&di);
            }
            node.parent(0).accum_grad(&d_delta.into_dyn());
            node.parent(1).accum_grad(&d_image.into_dyn());
        }),
    ))
}

/// Hard (non-differentiable) overlay for human inspection: draws template
/// lines and landmark dots over the image and writes an 8-bit PNG.
/// `positions` are normalized coordinates; off-image strokes are clipped.
pub fn overlay_export<F: Scalar>(
    t: &Template,
    positions: &ArrayView2<'_, F>,
    image: &ArrayView3<'_, F>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("image must have 3 channels, got {c}")));
    }
    if positions.dim() != (t.n_landmarks, 2) {
        return Err(Error::Shape(format!(
            "positions must be {}x2, got {}x{}",
            t.n_landmarks,
            positions.dim().0,
            positions.dim().1
        )));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("positions".into()));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for iy in 0..h {
        for ix in 0..w {
            let px = [
                to_u8(image[[0, iy, ix]]),
                to_u8(image[[1, iy, ix]]),
                to_u8(image[[2, iy, ix]]),
            ];
            img.put_pixel(ix as u32, iy as u32, image::Rgb(px));
        }
    }
    let px_of = |i: usize| {
        (
            (positions[[i, 0]].to_f64() * w as f64).round() as i64,
            (positions[[i, 1]].to_f64() * h as f64).round() as i64,
        )
    };
    for line in &t.lines {
        let rgb = image::Rgb([
            (line.color[0] * 255.0).round() as u8,
            (line.color[1] * 255.0).round() as u8,
            (line.color[2] * 255.0).round() as u8,
        ]);
        for seg in line.indices.windows(2) {
            let (x0, y0) = px_of(seg[0]);
            let (x1, y1) = px_of(seg[1]);
            draw_line(&mut img, x0, y0, x1, y1, rgb);
        }
    }
    // Landmark dots on top of the lines.
    for i in 0..t.n_landmarks {
        let (x, y) = px_of(i);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                put_clipped(&mut img, x + dx, y + dy, image::Rgb([255, 255, 255]));
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn to_u8<F: Scalar>(v: F) -> u8 {
    let x = (v.to_f64() + 1.0) * 0.5 * 255.0;
    x.round().clamp(0.0, 255.0) as u8
}

fn put_clipped(img: &mut image::RgbImage, x: i64, y: i64, c: image::Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_line(img: &mut image::RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: image::Rgb<u8>) {
    // Bresenham.
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        put_clipped(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Positions (normalized) for a template under a deformation — convenience
/// used by inference and the exporters.
pub fn deformed_positions<F: Scalar>(
    t: &Template,
    delta: &ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    apply_deformation(t, delta)
}
