//! Central finite-difference verification of analytic gradients, in double precision.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::decoder::{DecoderStage, SegHead};
use crate::encoders::{
    fuse_features, fuse_features_backward, BasicBlock, CnnEncoder, ResNetEncoder,
};
use crate::error::{Error, Result};
use crate::kan::{KanBlock, KanComposition, KanLinear, PatchEmbed, SplineConfig, SplineGrid};
use crate::loss::combined_loss_with_grad;
use crate::model::{Dekan, ModelConfig};
use crate::nn::{
    AdaptiveAvgPool2d, BatchNorm2d, Conv2d, InitRng, Layer, LayerNorm, MaxPool2d, Mode,
    Parameterized, Relu, Silu, StateKind, Upsample2x,
};
use crate::tensor::Tensor4;

/// Finite-difference step for single operations.
pub const FD_STEP: f64 = 1e-4;
/// Step for the whole network. Train-mode batch norm couples every ReLU, so
/// the objective has kinks spaced far closer than `FD_STEP` along any parameter.
pub const END_TO_END_STEP: f64 = 1e-7;
/// Gradients smaller than this are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;
/// Ratio between the primary step and the confirmation step used when the
/// primary difference disagrees with the analytic value.
pub const CONFIRM_RATIO: f64 = 10.0;
/// Largest fraction of coordinates that may be skipped as kinks before a check fails.
pub const MAX_KINK_FRACTION: f64 = 0.02;

/// Largest relative discrepancy seen while checking one operation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates straddling a ReLU/max/clamp kink, where the two step sizes disagree.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    fn empty(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            kinks: 0,
            max_rel_error: 0.0,
            worst: String::new(),
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
            && (self.kinks as f64) <= MAX_KINK_FRACTION * self.checked as f64
    }

    fn absorb(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if self.worst.is_empty() || other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} {} max rel err {:.3e} (tol {:.0e}) over {} coords ({} kinks skipped), worst {}",
            self.name,
            if self.passed() { "ok  " } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.checked,
            self.kinks,
            self.worst
        )
    }
}

/// `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Compares `analytic[i]` with the central difference of `f` at `x0` along each coordinate in `indices`.
pub fn gradient_check(
    name: &str,
    x0: &[f64],
    analytic: &[f64],
    indices: &[usize],
    f: impl FnMut(&[f64]) -> Result<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    gradient_check_with_step(name, x0, analytic, indices, f, tolerance, FD_STEP)
}

/// [`gradient_check`] with an explicit difference step.
pub fn gradient_check_with_step(
    name: &str,
    x0: &[f64],
    analytic: &[f64],
    indices: &[usize],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport> {
    if x0.len() != analytic.len() {
        return Err(Error::Input(format!(
            "{name}: {} values but {} analytic gradients",
            x0.len(),
            analytic.len()
        )));
    }
    let mut report = GradCheckReport::empty(name, tolerance);
    let mut x = x0.to_vec();
    let mut central = |x: &mut Vec<f64>, i: usize, h: f64| -> Result<f64> {
        x[i] = x0[i] + h;
        let up = f(x)?;
        x[i] = x0[i] - h;
        let down = f(x)?;
        x[i] = x0[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{name}: objective not finite at coordinate {i}"
            )));
        }
        Ok((up - down) / (2.0 * h))
    };
    for &i in indices {
        let numeric = central(&mut x, i, step)?;
        let mut err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err >= tolerance {
            let fine = central(&mut x, i, step / CONFIRM_RATIO)?;
            if relative_error(numeric, fine) >= tolerance {
                report.kinks += 1;
                err = 0.0;
            }
        }
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = format!(
                "{name}[{i}] analytic {:.6e} numeric {numeric:.6e}",
                analytic[i]
            );
        }
    }
    Ok(report)
}

/// Knobs shared by the layer checks.
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub tolerance: f64,
    /// Coordinates sampled per input or parameter tensor.
    pub per_tensor: usize,
    pub seed: u64,
    pub step: f64,
}

fn pick(len: usize, count: usize, rng: &mut InitRng) -> Vec<usize> {
    if count >= len {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, count).into_vec();
        v.sort_unstable();
        v
    }
}

pub fn random_tensor(shape: [usize; 4], rng: &mut InitRng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Adds `N(0, std)` noise to every trainable parameter.
///
/// Freshly initialised layers have zero biases, so a ReLU fed by an all-zero
/// neighbourhood sits exactly on its kink, where central differences are meaningless.
pub fn jitter_parameters<P: Parameterized<f64>>(p: &mut P, rng: &mut InitRng, std: f64) {
    p.visit_state_mut("", &mut |_, t, kind| {
        if kind == StateKind::Param {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += std * rng.sample::<f64, _>(StandardNormal));
        }
    });
}

fn jittered<P: Parameterized<f64>>(mut p: P, rng: &mut InitRng) -> P {
    jitter_parameters(&mut p, rng, 0.1);
    p
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn params_of<P: Parameterized<f64>>(p: &P) -> Vec<(String, Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    p.visit_state("", &mut |name, t, kind| {
        if kind == StateKind::Param {
            let grad = t
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()]);
            out.push((name.to_string(), t.data().to_vec(), grad));
        }
    });
    out
}

fn set_param<P: Parameterized<f64>>(p: &mut P, name: &str, values: &[f64]) {
    p.visit_state_mut("", &mut |n, t, _| {
        if n == name {
            t.data_mut().copy_from_slice(values);
        }
    });
}

/// Checks a layer against the scalar objective `<layer(x), r>` for a random projection `r`,
/// covering the input and every trainable parameter tensor.
pub fn check_layer<L: Layer<f64>>(
    name: &str,
    layer: &mut L,
    x: &Tensor4<f64>,
    mode: Mode,
    opts: CheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = InitRng::seed_from_u64(opts.seed);
    let y = layer.forward(x, mode)?;
    let r = random_tensor(y.shape(), &mut rng);
    layer.zero_grad();
    let dx = layer.backward(&r)?;

    let mut report = GradCheckReport::empty(name, opts.tolerance);
    let idx = pick(x.len(), opts.per_tensor, &mut rng);
    report.absorb(gradient_check_with_step(
        "input",
        x.data(),
        dx.data(),
        &idx,
        |v| {
            Ok(dot(
                &layer.forward(&Tensor4::from_vec(x.shape(), v.to_vec())?, mode)?,
                &r,
            ))
        },
        opts.tolerance,
        opts.step,
    )?);
    for (pname, values, grad) in params_of(layer) {
        let idx = pick(values.len(), opts.per_tensor, &mut rng);
        let sub = gradient_check_with_step(
            &pname,
            &values,
            &grad,
            &idx,
            |v| {
                set_param(layer, &pname, v);
                Ok(dot(&layer.forward(x, mode)?, &r))
            },
            opts.tolerance,
            opts.step,
        )?;
        set_param(layer, &pname, &values);
        report.absorb(sub);
    }
    Ok(report)
}

/// Checks the full model under the combined loss, including both input streams.
pub fn check_model(
    model: &mut Dekan<f64>,
    x_aug: &Tensor4<f64>,
    x_orig: &Tensor4<f64>,
    target: &Tensor4<f64>,
    opts: CheckOptions,
) -> Result<GradCheckReport> {
    let mut rng = InitRng::seed_from_u64(opts.seed);
    let logits = model.forward(x_aug, x_orig, Mode::Train)?;
    let (_, g) = combined_loss_with_grad(&logits, target)?;
    model.zero_grad();
    let (da, dor) = model.backward(&g)?;
    let objective = |m: &mut Dekan<f64>, a: &Tensor4<f64>, o: &Tensor4<f64>| -> Result<f64> {
        let logits = m.forward(a, o, Mode::Train)?;
        Ok(combined_loss_with_grad(&logits, target)?.0.total)
    };

    let mut report = GradCheckReport::empty("dekan end-to-end", opts.tolerance);
    let shape = x_aug.shape();
    let idx = pick(x_aug.len(), opts.per_tensor, &mut rng);
    report.absorb(gradient_check_with_step(
        "x_aug",
        x_aug.data(),
        da.data(),
        &idx,
        |v| objective(model, &Tensor4::from_vec(shape, v.to_vec())?, x_orig),
        opts.tolerance,
        opts.step,
    )?);
    let idx = pick(x_orig.len(), opts.per_tensor, &mut rng);
    report.absorb(gradient_check_with_step(
        "x_orig",
        x_orig.data(),
        dor.data(),
        &idx,
        |v| objective(model, x_aug, &Tensor4::from_vec(shape, v.to_vec())?),
        opts.tolerance,
        opts.step,
    )?);
    for (pname, values, grad) in params_of(model) {
        let idx = pick(values.len(), opts.per_tensor, &mut rng);
        let sub = gradient_check_with_step(
            &pname,
            &values,
            &grad,
            &idx,
            |v| {
                set_param(model, &pname, v);
                objective(model, x_aug, x_orig)
            },
            opts.tolerance,
            opts.step,
        )?;
        set_param(model, &pname, &values);
        report.absorb(sub);
    }
    Ok(report)
}

/// Tolerances for the full suite.
#[derive(Debug, Clone, Copy)]
pub struct SuiteTolerances {
    pub ops: f64,
    pub end_to_end: f64,
}

impl Default for SuiteTolerances {
    fn default() -> Self {
        Self {
            ops: 1e-4,
            end_to_end: 1e-3,
        }
    }
}

/// Small model used for the end-to-end check.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        image_height: 32,
        image_width: 32,
        in_channels: 3,
        patch_size: 1,
        embed_dim: 4,
        spline: SplineConfig::default(),
        width_multiplier: 1.0 / 32.0,
        decoder_channels: vec![4, 4, 3, 2, 2],
        out_channels: 1,
        seed: 7,
    }
}

/// Runs every operation check plus the end-to-end model check.
pub fn run_suite(tol: SuiteTolerances) -> Result<Vec<GradCheckReport>> {
    let mut init = InitRng::seed_from_u64(2024);
    let opts = CheckOptions {
        tolerance: tol.ops,
        per_tensor: 24,
        seed: 1,
        step: FD_STEP,
    };
    let grid = SplineGrid::new(SplineConfig::default())?;
    let mut reports = Vec::new();
    let x = random_tensor([1, 2, 5, 5], &mut init);

    reports.push(check_layer(
        "conv2d",
        &mut jittered(Conv2d::new(&mut init, 2, 3, 3, 1, 1), &mut init),
        &x,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "conv2d stride 2",
        &mut jittered(Conv2d::new(&mut init, 2, 2, 3, 2, 1), &mut init),
        &x,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "conv2d 1x1",
        &mut jittered(Conv2d::new(&mut init, 2, 3, 1, 1, 0), &mut init),
        &x,
        Mode::Train,
        opts,
    )?);
    let xb = random_tensor([2, 3, 3, 4], &mut init);
    reports.push(check_layer(
        "batch_norm2d train",
        &mut jittered(BatchNorm2d::new(3), &mut init),
        &xb,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "batch_norm2d eval",
        &mut jittered(BatchNorm2d::new(3), &mut init),
        &xb,
        Mode::Eval,
        opts,
    )?);
    let xt = random_tensor([2, 1, 3, 5], &mut init);
    reports.push(check_layer(
        "layer_norm",
        &mut jittered(LayerNorm::new(5), &mut init),
        &xt,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "relu",
        &mut Relu::new(),
        &x,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "silu",
        &mut Silu::new(),
        &x,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "bilinear_upsample2x",
        &mut Upsample2x::new(),
        &x,
        Mode::Train,
        opts,
    )?);
    let xp = random_tensor([1, 2, 5, 7], &mut init);
    reports.push(check_layer(
        "adaptive_avg_pool2d",
        &mut AdaptiveAvgPool2d::new(2, 3),
        &xp,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "max_pool2d",
        &mut MaxPool2d::new(3, 2, 1),
        &xp,
        Mode::Train,
        opts,
    )?);
    reports.push(check_bspline(&grid, opts, &mut init)?);
    let xk = random_tensor([1, 1, 4, 8], &mut init).map(|v| v * 0.6);
    reports.push(check_layer(
        "kan_linear",
        &mut jittered(KanLinear::new(&mut init, 8, 5, grid.clone()), &mut init),
        &xk,
        Mode::Train,
        opts,
    )?);
    reports.push(check_layer(
        "kan_composition",
        &mut jittered(KanComposition::uniform(&mut init, 8, 3, &grid), &mut init),
        &xk,
        Mode::Train,
        opts,
    )?);
    let xe = random_tensor([1, 3, 4, 4], &mut init);
    reports.push(check_layer(
        "patch_embed",
        &mut jittered(PatchEmbed::new(&mut init, 3, 4, 2), &mut init),
        &xe,
        Mode::Train,
        opts,
    )?);
    let tokens = random_tensor([2, 1, 6, 4], &mut init).map(|v| v * 0.6);
    reports.push(check_layer(
        "kan_block",
        &mut jittered(KanBlock::new(&mut init, 4, 2, 3, &grid), &mut init),
        &tokens,
        Mode::Train,
        opts,
    )?);
    let xr = random_tensor([2, 3, 6, 6], &mut init);
    reports.push(check_layer(
        "basic_block",
        &mut jittered(BasicBlock::new(&mut init, 3, 4, 2), &mut init),
        &xr,
        Mode::Train,
        opts,
    )?);
    let xc = random_tensor([1, 3, 32, 32], &mut init);
    reports.push(check_layer(
        "cnn_encoder",
        &mut jittered(CnnEncoder::new(&mut init, 3, [2, 2, 3, 3]), &mut init),
        &xc,
        Mode::Train,
        CheckOptions {
            per_tensor: 8,
            ..opts
        },
    )?);
    let xr = random_tensor([1, 3, 64, 64], &mut init);
    reports.push(check_layer(
        "resnet_encoder",
        &mut jittered(ResNetEncoder::new(&mut init, 3, [2, 2, 3, 3]), &mut init),
        &xr,
        Mode::Train,
        CheckOptions {
            per_tensor: 6,
            ..opts
        },
    )?);
    reports.push(check_fusion(opts, &mut init)?);
    let xd = random_tensor([2, 3, 3, 3], &mut init);
    reports.push(check_layer(
        "decoder_stage",
        &mut jittered(DecoderStage::new(&mut init, 3, 2), &mut init),
        &xd,
        Mode::Train,
        opts,
    )?);
    let xh = random_tensor([1, 3, 4, 4], &mut init);
    reports.push(check_layer(
        "segmentation_head",
        &mut jittered(SegHead::new(&mut init, 3, 1, 4, 4), &mut init),
        &xh,
        Mode::Train,
        opts,
    )?);
    reports.push(check_loss(opts, &mut init)?);

    let config = gradcheck_model_config();
    let mut model = jittered(Dekan::<f64>::new(config.clone())?, &mut init);
    // Batch 4 keeps at least four samples per channel in the 1x1 bottleneck norms.
    let shape = [
        4,
        config.in_channels,
        config.image_height,
        config.image_width,
    ];
    let xa = random_tensor(shape, &mut init);
    let xo = random_tensor(shape, &mut init);
    let target = Tensor4::from_fn([4, 1, shape[2], shape[3]], |_| {
        f64::from(init.random_bool(0.3))
    });
    reports.push(check_model(
        &mut model,
        &xa,
        &xo,
        &target,
        CheckOptions {
            tolerance: tol.end_to_end,
            per_tensor: 3,
            seed: 3,
            step: END_TO_END_STEP,
        },
    )?);
    Ok(reports)
}

fn check_bspline(
    grid: &SplineGrid<f64>,
    opts: CheckOptions,
    rng: &mut InitRng,
) -> Result<GradCheckReport> {
    let nb = grid.num_basis();
    let xs: Vec<f64> = (0..16).map(|_| rng.random_range(-0.95..0.95)).collect();
    let r: Vec<f64> = (0..xs.len() * nb)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let objective = |xs: &[f64]| -> f64 {
        let b = crate::kan::bspline_basis(xs, grid);
        b.iter().zip(&r).map(|(a, c)| a * c).sum()
    };
    let mut analytic = vec![0.0; xs.len()];
    let (mut values, mut derivs) = (vec![0.0; nb], vec![0.0; nb]);
    for (i, &x) in xs.iter().enumerate() {
        grid.basis_and_derivative_into(x, &mut values, &mut derivs);
        analytic[i] = derivs
            .iter()
            .zip(&r[i * nb..(i + 1) * nb])
            .map(|(d, c)| d * c)
            .sum();
    }
    let idx: Vec<usize> = (0..xs.len()).collect();
    let mut report = GradCheckReport::empty("bspline_basis", opts.tolerance);
    report.absorb(gradient_check(
        "x",
        &xs,
        &analytic,
        &idx,
        |v| Ok(objective(v)),
        opts.tolerance,
    )?);
    Ok(report)
}

fn check_fusion(opts: CheckOptions, rng: &mut InitRng) -> Result<GradCheckReport> {
    let f_res = random_tensor([1, 2, 2, 3], rng);
    let f_cnn = random_tensor([1, 2, 7, 9], rng);
    let r = random_tensor(f_res.shape(), rng);
    let (g_res, g_cnn) = fuse_features_backward(&r, f_cnn.shape())?;
    let mut report = GradCheckReport::empty("fuse_features", opts.tolerance);
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    report.absorb(gradient_check(
        "f_res",
        f_res.data(),
        g_res.data(),
        &all(f_res.len()),
        |v| {
            Ok(dot(
                &fuse_features(&Tensor4::from_vec(f_res.shape(), v.to_vec())?, &f_cnn)?,
                &r,
            ))
        },
        opts.tolerance,
    )?);
    report.absorb(gradient_check(
        "f_cnn",
        f_cnn.data(),
        g_cnn.data(),
        &all(f_cnn.len()),
        |v| {
            Ok(dot(
                &fuse_features(&f_res, &Tensor4::from_vec(f_cnn.shape(), v.to_vec())?)?,
                &r,
            ))
        },
        opts.tolerance,
    )?);
    Ok(report)
}

fn check_loss(opts: CheckOptions, rng: &mut InitRng) -> Result<GradCheckReport> {
    let logits = random_tensor([1, 1, 4, 4], rng);
    let target = Tensor4::from_fn([1, 1, 4, 4], |[_, _, h, w]| f64::from((h + w) % 3 == 0));
    let (_, grad) = combined_loss_with_grad(&logits, &target)?;
    let idx: Vec<usize> = (0..logits.len()).collect();
    let mut report = GradCheckReport::empty("combined_loss", opts.tolerance);
    report.absorb(gradient_check(
        "logits",
        logits.data(),
        grad.data(),
        &idx,
        |v| {
            Ok(
                combined_loss_with_grad(&Tensor4::from_vec(logits.shape(), v.to_vec())?, &target)?
                    .0
                    .total,
            )
        },
        opts.tolerance,
    )?);
    Ok(report)
}
