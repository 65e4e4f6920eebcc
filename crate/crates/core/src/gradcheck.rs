//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Mode, Network, NetworkConfig};
use crate::error::Result;
use crate::ffe::{self, Fusion};
use crate::graph::{Graph, Var};
use crate::mem;
use crate::tensor::Tensor;
use crate::training::joint_loss;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator so that gradients that
    /// are zero up to rounding are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-5,
            floor: 1e-3,
            max_elements: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ElementCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InputReport {
    pub input: usize,
    pub shape: Vec<usize>,
    pub worst: Option<ElementCheck>,
    pub elements: Vec<ElementCheck>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub inputs: Vec<InputReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs
            .iter()
            .filter_map(|r| r.worst.as_ref())
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }

    /// One line: name, verdict and the worst element overall.
    pub fn summary(&self) -> String {
        let worst = self
            .inputs
            .iter()
            .filter_map(|r| r.worst.as_ref().map(|w| (r.input, w)))
            .max_by(|a, b| a.1.rel_error.total_cmp(&b.1.rel_error));
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match worst {
            Some((input, w)) => format!(
                "{verdict} {:<28} max_rel_err={:.3e} (input {input} elem {} analytic={:.6e} numeric={:.6e})",
                self.name, w.rel_error, w.index, w.analytic, w.numeric
            ),
            None => format!("{verdict} {:<28} (no differentiable inputs)", self.name),
        }
    }
}

/// Scalarizes `y` with fixed pseudo-random weights when it is not already a
/// scalar, so every output element contributes to the check.
fn scalarize(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    if g.value(y).len() == 1 {
        return Ok(g.sum(y));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let w = Tensor::from_fn(g.shape(y), |_| rng.gen_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Compares the analytic vector-Jacobian product of `f` against central
/// differences, for every input tensor.
pub fn grad_check<F>(
    name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.parameter(t.clone())).collect();
        let y = f(&mut g, &vars)?;
        let s = scalarize(&mut g, y)?;
        Ok(g.value(s).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let y = f(&mut g, &vars)?;
    let s = scalarize(&mut g, y)?;
    g.backward(s)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v)).collect();

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let stride = opts.max_elements.map_or(1, |m| n.div_ceil(m.max(1)));
        let mut elements = Vec::new();
        for idx in (0..n).step_by(stride) {
            let base = input.data()[idx];
            let mut plus = input.clone().into_data();
            plus[idx] = base + opts.step;
            work[k] = Tensor::new(input.shape(), plus)?;
            let f_plus = eval(&work)?;
            let mut minus = input.clone().into_data();
            minus[idx] = base - opts.step;
            work[k] = Tensor::new(input.shape(), minus)?;
            let f_minus = eval(&work)?;
            work[k] = input.clone();

            let numeric = (f_plus - f_minus) / (2.0 * opts.step);
            let a = analytic[k].data()[idx];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            elements.push(ElementCheck {
                index: idx,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / denom,
            });
        }
        let worst = elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
            .cloned();
        let passed = elements.iter().all(|e| e.rel_error < opts.tolerance);
        reports.push(InputReport {
            input: k,
            shape: input.shape().to_vec(),
            worst,
            elements,
            passed,
        });
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(GradCheckReport {
        name: name.to_string(),
        tolerance: opts.tolerance,
        inputs: reports,
        passed,
    })
}

/// Relative-error tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Relative-error tolerance for the end-to-end micro model.
pub const MODEL_TOLERANCE: f64 = 1e-4;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values in `[lo, hi]` with every pair at least `gap` apart, so max
/// selections and kinks stay out of the finite-difference stencil.
fn spread(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, vals).expect("shape and data agree")
}

type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn op_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = &mut rng;
    let a = uniform(&[2, 3, 4], -1.0, 1.0, r);
    let b = uniform(&[2, 3, 4], -1.0, 1.0, r);
    let seq = uniform(&[2, 5, 4, 3], -1.0, 1.0, r);
    let mut cases: Vec<Case> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("abs", vec![spread(&[2, 3, 4], -1.0, 1.0, r)], Box::new(|g, v| Ok(g.abs(v[0])))),
        ("sigmoid", vec![uniform(&[2, 3, 4], -4.0, 4.0, r)], Box::new(|g, v| Ok(g.sigmoid(v[0])))),
        ("add_scalar", vec![a.clone()], Box::new(|g, v| Ok(g.add_scalar(v[0], 0.7)))),
        ("mul_scalar", vec![a.clone()], Box::new(|g, v| Ok(g.mul_scalar(v[0], -1.3)))),
        (
            "leaky_relu",
            vec![spread(&[2, 3, 4], -1.0, 1.0, r)],
            Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.01))),
        ),
        (
            "conv3d same",
            vec![
                uniform(&[2, 4, 5, 4], -1.0, 1.0, r),
                uniform(&[3, 2, 3, 3, 3], -0.5, 0.5, r),
                uniform(&[3], -0.5, 0.5, r),
            ],
            Box::new(|g, v| g.conv3d(v[0], v[1], Some(v[2]), [1; 3], [1; 3])),
        ),
        (
            "conv3d strided",
            vec![
                uniform(&[2, 5, 6, 5], -1.0, 1.0, r),
                uniform(&[2, 2, 3, 2, 3], -0.5, 0.5, r),
                uniform(&[2], -0.5, 0.5, r),
            ],
            Box::new(|g, v| g.conv3d(v[0], v[1], Some(v[2]), [2, 2, 1], [0, 1, 1])),
        ),
        (
            "lta",
            vec![
                uniform(&[2, 7, 3, 2], -1.0, 1.0, r),
                uniform(&[2, 2, 3, 1, 1], -0.5, 0.5, r),
                uniform(&[2], -0.5, 0.5, r),
            ],
            Box::new(|g, v| crate::backbone::lta(g, v[0], v[1], Some(v[2]), 3)),
        ),
        (
            "max_pool_hw",
            vec![spread(&[2, 2, 4, 6], -1.0, 1.0, r)],
            Box::new(|g, v| g.max_pool_hw(v[0], 2)),
        ),
        (
            "gem_pool",
            vec![uniform(&[3, 4, 5], 0.1, 1.0, r), Tensor::full(&[1], 3.0)],
            Box::new(|g, v| g.gem_pool(v[0], v[1], 1e-6)),
        ),
        ("mean", vec![seq.clone()], Box::new(|g, v| g.mean(v[0], 1))),
        ("max", vec![spread(&[2, 5, 4, 3], -1.0, 1.0, r)], Box::new(|g, v| g.max(v[0], 1))),
        ("sum", vec![a.clone()], Box::new(|g, v| Ok(g.sum(v[0])))),
        ("mean_all", vec![a.clone()], Box::new(|g, v| Ok(g.mean_all(v[0])))),
        ("slice", vec![seq.clone()], Box::new(|g, v| g.slice(v[0], 1, 1, 3))),
        (
            "concat",
            vec![a.clone(), uniform(&[2, 1, 4], -1.0, 1.0, r)],
            Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
        ),
        (
            "split_h/concat_h",
            vec![seq.clone()],
            Box::new(|g, v| {
                let parts = g.split_h(v[0], 2)?;
                let scaled = g.mul_scalar(parts[1], 2.0);
                g.concat_h(&[scaled, parts[0]])
            }),
        ),
        ("repeat", vec![a.clone()], Box::new(|g, v| g.repeat(v[0], 1, 3))),
        ("reshape", vec![a.clone()], Box::new(|g, v| g.reshape(v[0], &[4, 6]))),
        ("permute", vec![a.clone()], Box::new(|g, v| g.permute(v[0], &[2, 0, 1]))),
        ("stack", vec![a.clone(), b.clone()], Box::new(|g, v| g.stack(&[v[0], v[1]]))),
        (
            "matmul",
            vec![uniform(&[3, 4], -1.0, 1.0, r), uniform(&[4, 2], -1.0, 1.0, r)],
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        (
            "strip_matmul",
            vec![uniform(&[3, 2, 4], -1.0, 1.0, r), uniform(&[2, 4, 5], -1.0, 1.0, r)],
            Box::new(|g, v| g.strip_matmul(v[0], v[1])),
        ),
        (
            "batchnorm",
            vec![
                uniform(&[5, 4], -1.0, 1.0, r),
                uniform(&[4], 0.5, 1.5, r),
                uniform(&[4], -0.5, 0.5, r),
            ],
            Box::new(|g, v| {
                let (y, _) = g.batchnorm(v[0], v[1], v[2], &[0.0; 4], &[1.0; 4], 1e-5, true)?;
                Ok(y)
            }),
        ),
        (
            "softmax_cross_entropy",
            vec![uniform(&[4, 5], -2.0, 2.0, r)],
            Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1, 4])),
        ),
        (
            "batch_all_triplet",
            vec![uniform(&[2, 6, 3], -1.0, 1.0, r)],
            Box::new(|g, v| g.batch_all_triplet(v[0], &[0, 0, 1, 1, 2, 2], 0.5)),
        ),
        (
            "mem",
            vec![uniform(&[2, 5, 4, 3], -1.0, 1.0, r)],
            Box::new(|g, v| mem::mem_forward(g, v[0], 2)),
        ),
    ];
    let x = uniform(&[2, 3, 4, 3], -1.0, 1.0, r);
    let k: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&[2, 2, 3, 3, 3], -0.5, 0.5, r)).collect();
    let bias: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&[2], -0.5, 0.5, r)).collect();
    for (name, fusion) in [("mge A", Fusion::Add), ("mge B", Fusion::ConcatH)] {
        cases.push((
            name,
            vec![
                x.clone(),
                k[0].clone(),
                bias[0].clone(),
                k[1].clone(),
                bias[1].clone(),
                k[2].clone(),
                bias[2].clone(),
            ],
            Box::new(move |g, v| {
                let vars = ffe::FfeVars {
                    global: (v[1], v[2]),
                    parts: vec![(v[3], v[4]), (v[5], v[6])],
                    fusion,
                };
                ffe::mge_forward(g, v[0], ffe::MgeOptions::default(), &vars)
            }),
        ));
    }
    cases
}

/// Finite-difference checks of every differentiable operation.
pub fn op_suite() -> Result<Vec<GradCheckReport>> {
    op_cases()
        .into_iter()
        .map(|(name, inputs, f)| grad_check(name, f, &inputs, GradCheckOptions::with_tolerance(OP_TOLERANCE)))
        .collect()
}

/// Two MGE blocks on 8x8 frames with two channels throughout.
pub fn micro_config() -> NetworkConfig {
    NetworkConfig {
        frame_height: 8,
        frame_width: 8,
        stage_channels: vec![2, 2, 2],
        num_parts: 2,
        embed_dim: 3,
        num_classes: 3,
        gem_p_init: 3.0,
        ..NetworkConfig::desk()
    }
}

/// Joint loss of the micro model on a fixed batch, checked with respect to
/// every parameter tensor.
pub fn micro_model_check() -> Result<GradCheckReport> {
    let config = micro_config();
    let net = Network::<f64>::init(&config, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xface);
    let batch: Vec<Tensor<f64>> = [6, 7, 6, 8, 7, 6]
        .iter()
        .map(|&s| uniform(&[1, s, 8, 8], 0.0, 1.0, &mut rng))
        .collect();
    let labels = [0, 0, 1, 1, 2, 2];
    let params: Vec<Tensor<f64>> = net.named().into_iter().map(|(_, t)| t.clone()).collect();
    let f = |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
        let vars = net.vars_from(v)?;
        let out = net.forward(g, &vars, &batch, Mode::Train)?;
        Ok(joint_loss(g, out.embeddings, out.logits, &labels, 0.2)?.joint)
    };
    // Bias parameters shift whole channels at once, so the stencil is kept
    // narrow enough not to straddle an activation kink.
    let opts = GradCheckOptions {
        step: 1e-6,
        ..GradCheckOptions::with_tolerance(MODEL_TOLERANCE)
    };
    grad_check("micro model joint loss", f, &params, opts)
}

/// The op suite followed by the micro model.
pub fn full_suite() -> Result<Vec<GradCheckReport>> {
    let mut out = op_suite()?;
    out.push(micro_model_check()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_correct_gradient() {
        let x = Tensor::from_fn(&[5], |i| 0.3 * i as f64 - 0.7);
        let r = grad_check(
            "sigmoid",
            |g, v| Ok(g.sigmoid(v[0])),
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "{}", r.summary());
        assert_eq!(r.inputs[0].elements.len(), 5);
    }

    #[test]
    fn max_elements_subsamples() {
        let x = Tensor::from_fn(&[100], |i| i as f64 * 0.01);
        let opts = GradCheckOptions {
            max_elements: Some(10),
            ..Default::default()
        };
        let r = grad_check("scale", |g, v| Ok(g.mul_scalar(v[0], 3.0)), &[x], opts).unwrap();
        assert_eq!(r.inputs[0].elements.len(), 10);
        assert!(r.passed);
    }

    #[test]
    fn op_suite_passes() {
        for r in op_suite().unwrap() {
            assert!(r.passed, "{}", r.summary());
        }
    }
}
