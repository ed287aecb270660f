use super::params::FusionParams;
use crate::ehr::TaskKind;
use crate::error::{Error, Result};
use crate::loss::loss_and_grad;
use crate::math::{axpy, dot, sigmoid};

pub const LOG_FLOOR: f64 = 0.05;
pub const LN_EPS: f64 = 1e-5;

/// One patient's inputs to the head: encoder output, analysis embeddings and
/// their perplexities.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionExample {
    pub h: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub perplexities: Vec<f64>,
    pub label: usize,
}

/// `1 / max(ln p, 0.05)`.
pub fn perplexity_weight(p: f64) -> Result<f64> {
    if !p.is_finite() || p <= 0.0 {
        return Err(Error::domain(format!("perplexity {p} must be finite and positive")));
    }
    Ok(1.0 / p.ln().max(LOG_FLOOR))
}

fn check_z(params: &FusionParams, z: &[Vec<f64>]) -> Result<()> {
    if let Some(bad) = z.iter().find(|v| v.len() != params.d_z()) {
        return Err(Error::domain(format!("analysis embedding of length {} (expected {})", bad.len(), params.d_z())));
    }
    Ok(())
}

/// Sigmoid attention of each analysis against the encoder output.
pub fn rectify_encoder_driven(params: &FusionParams, h: &[f64], z: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.is_empty() {
        return Err(Error::domain("rectification needs at least one analysis"));
    }
    if h.len() != params.d_h() {
        return Err(Error::domain(format!("h of length {} (expected {})", h.len(), params.d_h())));
    }
    check_z(params, z)?;
    let q = params.query.matvec(h);
    let scale = (params.d_z() as f64).sqrt();
    let mut z_e = vec![0.0; params.d_z()];
    let mut alpha = Vec::with_capacity(z.len());
    for zk in z {
        let a = sigmoid(dot(&q, &params.key.matvec(zk)) / scale);
        axpy(a, &params.value.matvec(zk), &mut z_e);
        alpha.push(a);
    }
    Ok((z_e, alpha))
}

/// `W Σ β_k z_k`.
pub fn perplexity_guided_weight(params: &FusionParams, z: &[Vec<f64>], perplexities: &[f64]) -> Result<Vec<f64>> {
    if z.len() != perplexities.len() {
        return Err(Error::domain("one perplexity per analysis is required"));
    }
    check_z(params, z)?;
    let mut z_p = vec![0.0; params.d_z()];
    for (zk, &p) in z.iter().zip(perplexities) {
        axpy(params.w * perplexity_weight(p)?, zk, &mut z_p);
    }
    Ok(z_p)
}

/// Normalised `u` and `sqrt(var + eps)`. Values are shifted by the first
/// entry before averaging, so a constant input maps to exact zeros.
pub fn layer_norm(u: &[f64]) -> (Vec<f64>, f64) {
    let n = u.len() as f64;
    let shift = u.first().copied().unwrap_or(0.0);
    let d: Vec<f64> = u.iter().map(|x| x - shift).collect();
    let mean = d.iter().sum::<f64>() / n;
    let centered: Vec<f64> = d.iter().map(|x| x - mean).collect();
    let var = centered.iter().map(|x| x * x).sum::<f64>() / n;
    let sd = (var + LN_EPS).sqrt();
    (centered.iter().map(|x| x / sd).collect(), sd)
}

/// Linear map of `[z_e; z_p]` followed by layer norm and its affine.
pub fn fuse_knowledge(params: &FusionParams, z_e: &[f64], z_p: &[f64]) -> Result<Vec<f64>> {
    if z_e.len() != params.d_z() || z_p.len() != params.d_z() {
        return Err(Error::domain("z_e and z_p must have length d_z"));
    }
    let cat: Vec<f64> = z_e.iter().chain(z_p).copied().collect();
    let (xhat, _) = layer_norm(&params.fuse.forward(&cat));
    Ok(xhat.iter().zip(&params.ln_gain).zip(&params.ln_bias).map(|((x, g), b)| g * x + b).collect())
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub q: Vec<f64>,
    pub kz: Vec<Vec<f64>>,
    pub vz: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub z_e: Vec<f64>,
    pub z_sum: Vec<f64>,
    pub z_p: Vec<f64>,
    pub cat: Vec<f64>,
    pub xhat: Vec<f64>,
    pub sd: f64,
    pub z_f: Vec<f64>,
    pub input: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Forward pass. With no analyses `z_e` and `z_p` are zero and the head
/// reduces to a predictor on `h`.
pub fn forward_trace(params: &FusionParams, h: &[f64], z: &[Vec<f64>], perplexities: &[f64]) -> Result<FusionTrace> {
    if h.len() != params.d_h() {
        return Err(Error::domain(format!("h of length {} (expected {})", h.len(), params.d_h())));
    }
    if z.len() != perplexities.len() {
        return Err(Error::domain("one perplexity per analysis is required"));
    }
    check_z(params, z)?;
    let d_z = params.d_z();
    let scale = (d_z as f64).sqrt();
    let q = params.query.matvec(h);
    let mut z_e = vec![0.0; d_z];
    let mut z_sum = vec![0.0; d_z];
    let mut kz = Vec::with_capacity(z.len());
    let mut vz = Vec::with_capacity(z.len());
    let mut alpha = Vec::with_capacity(z.len());
    let mut beta = Vec::with_capacity(z.len());
    for (zk, &p) in z.iter().zip(perplexities) {
        let k = params.key.matvec(zk);
        let v = params.value.matvec(zk);
        let a = sigmoid(dot(&q, &k) / scale);
        let b = perplexity_weight(p)?;
        axpy(a, &v, &mut z_e);
        axpy(b, zk, &mut z_sum);
        kz.push(k);
        vz.push(v);
        alpha.push(a);
        beta.push(b);
    }
    let z_p: Vec<f64> = z_sum.iter().map(|x| params.w * x).collect();
    let cat: Vec<f64> = z_e.iter().chain(&z_p).copied().collect();
    let (xhat, sd) = layer_norm(&params.fuse.forward(&cat));
    let z_f: Vec<f64> = xhat.iter().zip(&params.ln_gain).zip(&params.ln_bias).map(|((x, g), b)| g * x + b).collect();
    let input: Vec<f64> = h.iter().chain(&z_f).copied().collect();
    let logits = params.predictor.forward(&input);
    Ok(FusionTrace { q, kz, vz, alpha, beta, z_e, z_sum, z_p, cat, xhat, sd, z_f, input, logits })
}

pub fn forward_predict(
    params: &FusionParams,
    h: &[f64],
    z: &[Vec<f64>],
    perplexities: &[f64],
    task: TaskKind,
) -> Result<Vec<f64>> {
    if params.out_dim() != task.output_dim() {
        return Err(Error::domain(format!("predictor has {} outputs, task {task} needs {}", params.out_dim(), task.output_dim())));
    }
    Ok(forward_trace(params, h, z, perplexities)?.logits)
}

/// Adds the gradient of one example's loss, scaled by `scale`, to `grad`.
/// Returns the unscaled loss.
pub fn accumulate_gradient(
    params: &FusionParams,
    ex: &FusionExample,
    task: TaskKind,
    scale: f64,
    grad: &mut FusionParams,
) -> Result<f64> {
    let t = forward_trace(params, &ex.h, &ex.z, &ex.perplexities)?;
    let (loss, mut dlogits) = loss_and_grad(&t.logits, ex.label, task)?;
    dlogits.iter_mut().for_each(|d| *d *= scale);
    let d_h = params.d_h();
    let d_z = params.d_z();
    let d_f = params.d_f();

    let dinput = params.predictor.backward(&t.input, &dlogits, &mut grad.predictor);
    let dzf = &dinput[d_h..];

    let mut dxhat = vec![0.0; d_f];
    for i in 0..d_f {
        grad.ln_gain[i] += dzf[i] * t.xhat[i];
        grad.ln_bias[i] += dzf[i];
        dxhat[i] = dzf[i] * params.ln_gain[i];
    }
    let n = d_f as f64;
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(&t.xhat).map(|(d, x)| d * x).sum::<f64>() / n;
    let du: Vec<f64> = dxhat.iter().zip(&t.xhat).map(|(d, x)| (d - mean_d - x * mean_dx) / t.sd).collect();

    let dcat = params.fuse.backward(&t.cat, &du, &mut grad.fuse);
    let (dze, dzp) = dcat.split_at(d_z);

    grad.w += dot(dzp, &t.z_sum);

    let scale_att = (d_z as f64).sqrt();
    let mut dq = vec![0.0; d_z];
    for (k, zk) in ex.z.iter().enumerate() {
        let a = t.alpha[k];
        grad.value.add_outer(a, dze, zk);
        let ds = dot(dze, &t.vz[k]) * a * (1.0 - a) / scale_att;
        axpy(ds, &t.kz[k], &mut dq);
        grad.key.add_outer(ds, &t.q, zk);
    }
    grad.query.add_outer(1.0, &dq, &ex.h);
    Ok(loss)
}

/// Mean batch loss and its exact gradient for every parameter block.
pub fn backward(params: &FusionParams, batch: &[FusionExample], task: TaskKind) -> Result<(f64, FusionParams)> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut grad = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        loss += accumulate_gradient(params, ex, task, scale, &mut grad)?;
    }
    Ok((loss * scale, grad))
}

/// Mean batch loss without gradients.
pub fn batch_loss(params: &FusionParams, batch: &[FusionExample], task: TaskKind) -> Result<f64> {
    let mut s = 0.0;
    for ex in batch {
        s += crate::loss::compute_loss(&forward_trace(params, &ex.h, &ex.z, &ex.perplexities)?.logits, ex.label, task)?;
    }
    Ok(s / batch.len() as f64)
}
