//! Every term of the training objective: least-squares adversarial losses on
//! both domains, L1 cycle consistency, and the spring-potential regularizer,
//! plus their weighted assembly.
//!
//! Plain-array forms are the reference definitions; tensor forms build the
//! same expressions on the autodiff graph for training.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::template::Template;
use ndarray::{ArrayView2, ArrayViewD, Ix3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLossKind {
    /// LSGAN: squared distance to the 0/1 target.
    LeastSquares,
    /// Binary cross-entropy on logits.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_cyc: f64,
    pub gan_loss: GanLossKind,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_gan: 1.0,
            lambda_cyc: 10.0,
            gan_loss: GanLossKind::LeastSquares,
        }
    }
}

/// The spring term admits two natural readings; both are implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpringVariant {
    /// Penalize the change in spring length of each edge (default).
    LengthChange,
    /// Penalize the difference of the two endpoint deformations.
    VectorDiff,
}

impl Default for SpringVariant {
    fn default() -> Self {
        SpringVariant::LengthChange
    }
}

fn check_same_shape<F: Scalar>(a: &ArrayViewD<'_, F>, b: &ArrayViewD<'_, F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "score/batch shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn mean<F: Scalar>(a: &ArrayViewD<'_, F>) -> F {
    a.iter().copied().sum::<F>() / F::from_f64(a.len() as f64)
}

/// Discriminator side of the least-squares GAN loss:
/// `0.5 mean((real - 1)^2) + 0.5 mean(fake^2)`.
pub fn gan_loss_discriminator<F: Scalar>(
    real_scores: &ArrayViewD<'_, F>,
    fake_scores: &ArrayViewD<'_, F>,
) -> Result<F> {
    check_same_shape(real_scores, fake_scores)?;
    let half = F::from_f64(0.5);
    let one = F::one();
    let r = mean(&real_scores.mapv(|v| (v - one) * (v - one)).view());
    let f = mean(&fake_scores.mapv(|v| v * v).view());
    Ok(half * r + half * f)
}

/// Generator side: `mean((fake - 1)^2)`.
pub fn gan_loss_generator<F: Scalar>(fake_scores: &ArrayViewD<'_, F>) -> F {
    let one = F::one();
    mean(&fake_scores.mapv(|v| (v - one) * (v - one)).view())
}

/// Mean absolute difference between a batch and its cycle reconstruction.
pub fn cycle_loss<F: Scalar>(
    original: &ArrayViewD<'_, F>,
    reconstructed: &ArrayViewD<'_, F>,
) -> Result<F> {
    check_same_shape(original, reconstructed)?;
    Ok(mean(
        &ndarray::Zip::from(original)
            .and(reconstructed)
            .map_collect(|&a, &b| (a - b).abs())
            .view(),
    ))
}

/// Spring potential of a single deformation field over the template's edges.
pub fn spring_loss<F: Scalar>(
    t: &Template,
    delta: &ArrayView2<'_, F>,
    variant: SpringVariant,
) -> Result<F> {
    if delta.dim() != (t.n_landmarks, 2) {
        return Err(Error::Shape(format!(
            "delta must be {}x2, got {}x{}",
            t.n_landmarks,
            delta.dim().0,
            delta.dim().1
        )));
    }
    let k = F::from_f64(t.spring_constant);
    let mut acc = F::zero();
    for e in &t.springs {
        match variant {
            SpringVariant::LengthChange => {
                let vx = F::from_f64(t.points[e.i][0]) + delta[[e.i, 0]]
                    - F::from_f64(t.points[e.j][0])
                    - delta[[e.j, 0]];
                let vy = F::from_f64(t.points[e.i][1]) + delta[[e.i, 1]]
                    - F::from_f64(t.points[e.j][1])
                    - delta[[e.j, 1]];
                let len = (vx * vx + vy * vy).sqrt();
                let d = len - F::from_f64(e.rest_length);
                acc += d * d;
            }
            SpringVariant::VectorDiff => {
                let ux = delta[[e.i, 0]] - delta[[e.j, 0]];
                let uy = delta[[e.i, 1]] - delta[[e.j, 1]];
                acc += ux * ux + uy * uy;
            }
        }
    }
    Ok(k * acc)
}

/// Per-term scalars of the full objective, before weighting.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts<F> {
    pub gan_u_to_m: F,
    pub gan_m_to_u: F,
    pub cyc: F,
    /// Already carries the spring constant K.
    pub spring: F,
}

/// Weighted terms whose exact sum is `total`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveReport<F> {
    pub weighted_gan_u_to_m: F,
    pub weighted_gan_m_to_u: F,
    pub weighted_cyc: F,
    pub spring: F,
    pub total: F,
}

/// Assembles the full objective
/// `lambda_gan (gan_UtoM + gan_MtoU) + lambda_cyc cyc + spring`.
pub fn total_objective<F: Scalar>(
    parts: &ObjectiveParts<F>,
    w: &LossWeights,
) -> Result<ObjectiveReport<F>> {
    for (name, v) in [
        ("gan_u_to_m", parts.gan_u_to_m),
        ("gan_m_to_u", parts.gan_m_to_u),
        ("cyc", parts.cyc),
        ("spring", parts.spring),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective part {name}")));
        }
    }
    let lg = F::from_f64(w.lambda_gan);
    let lc = F::from_f64(w.lambda_cyc);
    let weighted_gan_u_to_m = lg * parts.gan_u_to_m;
    let weighted_gan_m_to_u = lg * parts.gan_m_to_u;
    let weighted_cyc = lc * parts.cyc;
    let total = weighted_gan_u_to_m + weighted_gan_m_to_u + weighted_cyc + parts.spring;
    Ok(ObjectiveReport {
        weighted_gan_u_to_m,
        weighted_gan_m_to_u,
        weighted_cyc,
        spring: parts.spring,
        total,
    })
}

// ---------------------------------------------------------------------------
// Tensor forms for training.
// ---------------------------------------------------------------------------

/// `mean((scores - target)^2)` on the graph.
pub fn lsgan_loss<F: Scalar>(scores: &Tensor<F>, target: F) -> Tensor<F> {
    scores.add_scalar(-target).sqr().mean_all()
}

/// Binary cross-entropy with logits against a constant 0/1 target:
/// `mean(softplus(x) - target * x)`.
pub fn bce_logits_loss<F: Scalar>(scores: &Tensor<F>, target: F) -> Tensor<F> {
    let sp = scores.softplus().mean_all();
    if target == F::zero() {
        sp
    } else {
        sp.sub(&scores.mean_all().mul_scalar(target))
    }
}

/// Adversarial loss toward a real/fake target under the configured form.
pub fn gan_target_loss<F: Scalar>(scores: &Tensor<F>, real: bool, kind: GanLossKind) -> Tensor<F> {
    let target = if real { F::one() } else { F::zero() };
    match kind {
        GanLossKind::LeastSquares => lsgan_loss(scores, target),
        GanLossKind::CrossEntropy => bce_logits_loss(scores, target),
    }
}

/// L1 reconstruction loss on the graph.
pub fn l1_loss<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    a.sub(b).abs().mean_all()
}

/// Spring potential over a batch of deformations `[b, n, 2]`, averaged over
/// the batch, as a graph node with an analytic adjoint.
pub fn spring_energy<F: Scalar>(
    delta: &Tensor<F>,
    t: &Template,
    variant: SpringVariant,
) -> Result<Tensor<F>> {
    let shape = delta.shape();
    if shape.len() != 3 || shape[1] != t.n_landmarks || shape[2] != 2 {
        return Err(Error::Shape(format!(
            "delta batch must be Bx{}x2, got {:?}",
            t.n_landmarks, shape
        )));
    }
    let dv = delta.data().clone().into_dimensionality::<Ix3>().unwrap();
    let b = shape[0];
    let mut acc = F::zero();
    for bi in 0..b {
        acc += spring_loss(t, &dv.index_axis(ndarray::Axis(0), bi), variant)?;
    }
    let value = acc / F::from_f64(b as f64);
    let template = t.clone();
    Ok(Tensor::from_op(
        ndarray::ArrayD::from_elem(ndarray::IxDyn(&[]), value),
        vec![delta.clone()],
        Box::new(move |node| {
            let g = *node.out_grad().iter().next().unwrap();
            let dv = node
                .parent(0)
                .data()
                .clone()
                .into_dimensionality::<Ix3>()
                .unwrap();
            let b = dv.dim().0;
            let scale = g * F::from_f64(template.spring_constant) / F::from_f64(b as f64);
            let two = F::from_f64(2.0);
            let mut grad = ndarray::Array3::<F>::zeros(dv.raw_dim());
            for bi in 0..b {
                for e in &template.springs {
                    match variant {
                        SpringVariant::LengthChange => {
                            let vx = F::from_f64(template.points[e.i][0]) + dv[[bi, e.i, 0]]
                                - F::from_f64(template.points[e.j][0])
                                - dv[[bi, e.j, 0]];
                            let vy = F::from_f64(template.points[e.i][1]) + dv[[bi, e.i, 1]]
                                - F::from_f64(template.points[e.j][1])
                                - dv[[bi, e.j, 1]];
                            let len = (vx * vx + vy * vy).sqrt();
                            if len > F::zero() {
                                let c = scale * two * (len - F::from_f64(e.rest_length)) / len;
                                grad[[bi, e.i, 0]] += c * vx;
                                grad[[bi, e.i, 1]] += c * vy;
                                grad[[bi, e.j, 0]] -= c * vx;
                                grad[[bi, e.j, 1]] -= c * vy;
                            }
                        }
                        SpringVariant::VectorDiff => {
                            let ux = dv[[bi, e.i, 0]] - dv[[bi, e.j, 0]];
                            let uy = dv[[bi, e.i, 1]] - dv[[bi, e.j, 1]];
                            grad[[bi, e.i, 0]] += scale * two * ux;
                            grad[[bi, e.i, 1]] += scale * two * uy;
                            grad[[bi, e.j, 0]] -= scale * two * ux;
                            grad[[bi, e.j, 1]] -= scale * two * uy;
                        }
                    }
                }
            }
            node.parent(0).accum_grad(&grad.into_dyn());
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::Template;
    use ndarray::{Array2, ArrayD, IxDyn};

    fn two_point_template() -> Template {
        Template::from_parts(
            2,
            vec![[0.0, 0.0], [1.0, 0.0]],
            vec![],
            Some(vec![[0, 1]]),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn discriminator_loss_analytic_points() {
        let ones = ArrayD::from_elem(IxDyn(&[2, 1, 3, 3]), 1.0f64);
        let zeros = ArrayD::zeros(IxDyn(&[2, 1, 3, 3]));
        assert_eq!(
            gan_loss_discriminator(&ones.view(), &zeros.view()).unwrap(),
            0.0
        );
        let half = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5f64);
        assert!(
            (gan_loss_discriminator(&half.view(), &half.view()).unwrap() - 0.25).abs() < 1e-12
        );
        let other = ArrayD::<f64>::zeros(IxDyn(&[1, 1, 3, 3]));
        assert!(matches!(
            gan_loss_discriminator(&half.view(), &other.view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn generator_loss_analytic_points() {
        let v = |x: f64| ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), x);
        assert_eq!(gan_loss_generator(&v(1.0).view()), 0.0);
        assert_eq!(gan_loss_generator(&v(0.0).view()), 1.0);
        assert!((gan_loss_generator(&v(0.5).view()) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_analytic_points() {
        let a = ArrayD::from_elem(IxDyn(&[2, 3, 4, 4]), 0.25f64);
        assert_eq!(cycle_loss(&a.view(), &a.view()).unwrap(), 0.0);
        let b = a.mapv(|v| v + 0.5);
        assert!((cycle_loss(&a.view(), &b.view()).unwrap() - 0.5).abs() < 1e-12);
        let c = ArrayD::<f64>::zeros(IxDyn(&[2, 3, 4, 5]));
        assert!(matches!(cycle_loss(&a.view(), &c.view()), Err(Error::Shape(_))));
    }

    #[test]
    fn spring_loss_rest_and_translation_are_zero() {
        let t = two_point_template();
        let zero = Array2::<f64>::zeros((2, 2));
        for variant in [SpringVariant::LengthChange, SpringVariant::VectorDiff] {
            assert_eq!(spring_loss(&t, &zero.view(), variant).unwrap(), 0.0);
            let shift = Array2::from_elem((2, 2), 0.37);
            assert!(spring_loss::<f64>(&t, &shift.view(), variant).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn spring_loss_analytic_stretch() {
        let t = two_point_template();
        let mut delta = Array2::<f64>::zeros((2, 2));
        delta[[1, 0]] = 0.5;
        let lc = spring_loss(&t, &delta.view(), SpringVariant::LengthChange).unwrap();
        assert!((lc - 0.25).abs() < 1e-12);
        let vd = spring_loss(&t, &delta.view(), SpringVariant::VectorDiff).unwrap();
        assert!((vd - 0.25).abs() < 1e-12);
    }

    #[test]
    fn total_objective_weighted_sum() {
        let parts = ObjectiveParts { gan_u_to_m: 1.0f64, gan_m_to_u: 1.0, cyc: 1.0, spring: 1.0 };
        let report = total_objective(&parts, &LossWeights::default()).unwrap();
        assert_eq!(report.total, 13.0);
        assert_eq!(
            report.total,
            report.weighted_gan_u_to_m
                + report.weighted_gan_m_to_u
                + report.weighted_cyc
                + report.spring
        );
        let zero = ObjectiveParts { gan_u_to_m: 0.0f64, gan_m_to_u: 0.0, cyc: 0.0, spring: 0.0 };
        assert_eq!(total_objective(&zero, &LossWeights::default()).unwrap().total, 0.0);
        let bad = ObjectiveParts { gan_u_to_m: f64::NAN, ..parts };
        assert!(matches!(
            total_objective(&bad, &LossWeights::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn spring_energy_gradient_matches_finite_differences() {
        use crate::gradcheck::{central_diff, max_rel_error};
        let t = Template::from_parts(
            3,
            vec![[0.2, 0.2], [0.6, 0.3], [0.4, 0.8]],
            vec![crate::template::SemanticLine {
                name: "l".into(),
                indices: vec![0, 1, 2],
                color: [1.0, 0.0, 0.0],
            }],
            None,
            2.0,
        )
        .unwrap();
        for variant in [SpringVariant::LengthChange, SpringVariant::VectorDiff] {
            let delta = ndarray::ArrayD::from_shape_fn(IxDyn(&[2, 3, 2]), |ix| {
                0.05 * ((ix[0] + 2 * ix[1] + ix[2]) as f64 - 2.0)
            });
            let tensor = Tensor::param(delta.clone());
            let loss = spring_energy(&tensor, &t, variant).unwrap();
            loss.backward();
            let analytic = tensor.grad().unwrap();
            let numeric = central_diff(
                |d: &ArrayD<f64>| {
                    let dt = Tensor::constant(d.clone());
                    spring_energy(&dt, &t, variant).unwrap().item()
                },
                &delta,
                1e-5,
            );
            let err = max_rel_error(&analytic, &numeric, 1e-5);
            assert!(err < 1e-6, "{variant:?}: {err}");
        }
    }
}
