//! Temporal mixer block: gated 1-D convolution with frozen normalisation and a
//! scaled residual. A zero residual scale makes every layer the identity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmbLayer {
    /// `channels × kernel_size`.
    pub conv_w: Vec<Vec<f64>>,
    pub conv_b: Vec<f64>,
    /// Running statistics of the gated channels (`channels / 2` each).
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    pub mix_w: Vec<f64>,
    pub mix_b: f64,
    pub residual_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmbParams {
    pub kernel_size: usize,
    pub channels: usize,
    pub layers: Vec<TmbLayer>,
}

impl TmbParams {
    /// Randomly initialised weights, identity map (residual scale 0).
    pub fn new(layers: usize, kernel_size: usize, channels: usize, seed: u64) -> Result<Self> {
        if layers == 0 || kernel_size == 0 || kernel_size % 2 == 0 || channels < 2 || channels % 2 != 0 {
            return Err(invalid("TMB needs >= 1 layer, an odd kernel and an even channel count"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wdist = Normal::new(0.0, 1.0 / (kernel_size as f64).sqrt()).map_err(|e| invalid(e.to_string()))?;
        let half = channels / 2;
        let mdist = Normal::new(0.0, 1.0 / (half as f64).sqrt()).map_err(|e| invalid(e.to_string()))?;
        let layers = (0..layers)
            .map(|_| TmbLayer {
                conv_w: (0..channels).map(|_| (0..kernel_size).map(|_| wdist.sample(&mut rng)).collect()).collect(),
                conv_b: vec![0.0; channels],
                bn_mean: vec![0.0; half],
                bn_var: vec![1.0; half],
                mix_w: (0..half).map(|_| mdist.sample(&mut rng)).collect(),
                mix_b: 0.0,
                residual_scale: 0.0,
            })
            .collect();
        Ok(Self { kernel_size, channels, layers })
    }

    pub fn validate(&self) -> Result<()> {
        let (k, c, h) = (self.kernel_size, self.channels, self.channels / 2);
        if k == 0 || k % 2 == 0 || c < 2 || c % 2 != 0 || self.layers.is_empty() {
            return Err(invalid("TMB needs >= 1 layer, an odd kernel and an even channel count"));
        }
        for l in &self.layers {
            let shapes_ok = l.conv_w.len() == c
                && l.conv_w.iter().all(|w| w.len() == k)
                && l.conv_b.len() == c
                && l.bn_mean.len() == h
                && l.bn_var.len() == h
                && l.mix_w.len() == h;
            if !shapes_ok {
                return Err(Error::ShapeMismatch("TMB layer weights do not match kernel/channel sizes".into()));
            }
            if l.bn_var.iter().any(|v| !(*v >= 0.0)) {
                return Err(invalid("TMB running variance must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|l| l.residual_scale == 0.0)
    }

    /// Trainable parameters flattened layer by layer: conv weights, conv biases, mix weights, mix bias, residual scale.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            l.conv_w.iter().for_each(|w| v.extend_from_slice(w));
            v.extend_from_slice(&l.conv_b);
            v.extend_from_slice(&l.mix_w);
            v.push(l.mix_b);
            v.push(l.residual_scale);
        }
        v
    }

    pub fn set_from_vec(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.to_vec().len() {
            return Err(Error::ShapeMismatch("parameter vector length".into()));
        }
        let mut it = v.iter().copied();
        for l in &mut self.layers {
            for w in &mut l.conv_w {
                w.iter_mut().for_each(|x| *x = it.next().unwrap_or(0.0));
            }
            l.conv_b.iter_mut().for_each(|x| *x = it.next().unwrap_or(0.0));
            l.mix_w.iter_mut().for_each(|x| *x = it.next().unwrap_or(0.0));
            l.mix_b = it.next().unwrap_or(0.0);
            l.residual_scale = it.next().unwrap_or(0.0);
        }
        Ok(())
    }

    /// Sets each layer's running statistics from the gated activations over `inputs`.
    pub fn calibrate(&mut self, inputs: &[Vec<f64>]) -> Result<()> {
        self.validate()?;
        let mut hs: Vec<Vec<f64>> = inputs.to_vec();
        for li in 0..self.layers.len() {
            let half = self.channels / 2;
            let mut sum = vec![0.0; half];
            let mut sq = vec![0.0; half];
            let mut count = 0usize;
            for h in &hs {
                let cache = layer_forward(&self.layers[li], self.kernel_size, h)?;
                for c in 0..half {
                    sum[c] += cache.g[c].iter().sum::<f64>();
                    sq[c] += cache.g[c].iter().map(|v| v * v).sum::<f64>();
                }
                count += h.len();
            }
            if count == 0 {
                return Err(Error::Empty("TMB calibration inputs"));
            }
            let layer = &mut self.layers[li];
            for c in 0..half {
                let m = sum[c] / count as f64;
                layer.bn_mean[c] = m;
                layer.bn_var[c] = (sq[c] / count as f64 - m * m).max(0.0);
            }
            hs = hs.iter().map(|h| layer_forward(&self.layers[li], self.kernel_size, h).map(|c| c.out)).collect::<Result<_>>()?;
        }
        Ok(())
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    j as usize
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    z: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    mix: Vec<f64>,
    out: Vec<f64>,
}

fn layer_forward(l: &TmbLayer, k: usize, h: &[f64]) -> Result<LayerCache> {
    let n = h.len();
    let r = (k / 2) as isize;
    if n <= k / 2 || n < k {
        return Err(Error::TooShort { needed: k, got: n });
    }
    let c = l.conv_w.len();
    let half = c / 2;
    let z: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            (0..n)
                .map(|t| {
                    l.conv_b[ch]
                        + (0..k).map(|j| l.conv_w[ch][j] * h[reflect(t as isize + j as isize - r, n)]).sum::<f64>()
                })
                .collect()
        })
        .collect();
    let g: Vec<Vec<f64>> = (0..half).map(|ch| (0..n).map(|t| z[ch][t] * sigmoid(z[ch + half][t])).collect()).collect();
    let normed: Vec<Vec<f64>> = (0..half)
        .map(|ch| {
            let sd = (l.bn_var[ch] + BN_EPS).sqrt();
            g[ch].iter().map(|v| (v - l.bn_mean[ch]) / sd).collect()
        })
        .collect();
    let mix: Vec<f64> = (0..n).map(|t| l.mix_b + (0..half).map(|ch| l.mix_w[ch] * normed[ch][t]).sum::<f64>()).collect();
    let out = (0..n).map(|t| h[t] + l.residual_scale * mix[t]).collect();
    Ok(LayerCache { input: h.to_vec(), z, g, normed, mix, out })
}

pub fn tmb_forward(x_hat: &[f64], params: &TmbParams) -> Result<Vec<f64>> {
    params.validate()?;
    if x_hat.len() < params.kernel_size {
        return Err(Error::TooShort { needed: params.kernel_size, got: x_hat.len() });
    }
    if params.is_identity() {
        return Ok(x_hat.to_vec());
    }
    Ok(tmb_forward_cached(x_hat, params)?.0)
}

/// Intermediate activations needed by [`tmb_backward`].
#[derive(Debug, Clone)]
pub struct TmbTrace {
    layers: Vec<LayerCache>,
}

pub fn tmb_forward_cached(x_hat: &[f64], params: &TmbParams) -> Result<(Vec<f64>, TmbTrace)> {
    params.validate()?;
    if x_hat.len() < params.kernel_size {
        return Err(Error::TooShort { needed: params.kernel_size, got: x_hat.len() });
    }
    let mut h = x_hat.to_vec();
    let mut caches = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let c = layer_forward(l, params.kernel_size, &h)?;
        h = c.out.clone();
        caches.push(c);
    }
    Ok((h, TmbTrace { layers: caches }))
}

/// Gradient of a scalar loss with respect to the flattened trainable parameters
/// (order of [`TmbParams::to_vec`]) and to the input, given `d loss / d output`.
pub fn tmb_backward(params: &TmbParams, trace: &TmbTrace, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if trace.layers.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("trace does not belong to these parameters".into()));
    }
    let k = params.kernel_size;
    let r = (k / 2) as isize;
    let mut per_layer: Vec<Vec<f64>> = Vec::with_capacity(trace.layers.len());
    let mut dh = d_out.to_vec();
    for (l, cache) in params.layers.iter().zip(&trace.layers).rev() {
        let n = cache.input.len();
        if dh.len() != n {
            return Err(Error::ShapeMismatch("gradient length differs from activations".into()));
        }
        let c = l.conv_w.len();
        let half = c / 2;
        let mut g_w = vec![vec![0.0; k]; c];
        let mut g_b = vec![0.0; c];
        let mut g_mix = vec![0.0; half];
        let d_rho: f64 = dh.iter().zip(&cache.mix).map(|(a, b)| a * b).sum();
        let dm: Vec<f64> = dh.iter().map(|v| v * l.residual_scale).collect();
        let g_mix_b: f64 = dm.iter().sum();
        let mut dz = vec![vec![0.0; n]; c];
        for ch in 0..half {
            g_mix[ch] = dm.iter().zip(&cache.normed[ch]).map(|(a, b)| a * b).sum();
            let sd = (l.bn_var[ch] + BN_EPS).sqrt();
            for t in 0..n {
                let dg = l.mix_w[ch] * dm[t] / sd;
                let s = sigmoid(cache.z[ch + half][t]);
                dz[ch][t] = dg * s;
                dz[ch + half][t] = dg * cache.z[ch][t] * s * (1.0 - s);
            }
        }
        let mut d_in = dh.clone();
        for ch in 0..c {
            for t in 0..n {
                let d = dz[ch][t];
                if d == 0.0 {
                    continue;
                }
                g_b[ch] += d;
                for j in 0..k {
                    let idx = reflect(t as isize + j as isize - r, n);
                    g_w[ch][j] += d * cache.input[idx];
                    d_in[idx] += d * l.conv_w[ch][j];
                }
            }
        }
        let mut flat = Vec::new();
        g_w.iter().for_each(|w| flat.extend_from_slice(w));
        flat.extend_from_slice(&g_b);
        flat.extend_from_slice(&g_mix);
        flat.push(g_mix_b);
        flat.push(d_rho);
        per_layer.push(flat);
        dh = d_in;
    }
    per_layer.reverse();
    Ok((per_layer.concat(), dh))
}

/// Forward pass plus parameter/input gradients for `d loss / d output = d_out(output)`.
pub fn tmb_grad<F>(x_hat: &[f64], params: &TmbParams, d_out: F) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let (y, trace) = tmb_forward_cached(x_hat, params)?;
    let dy = d_out(&y)?;
    let (gp, gx) = tmb_backward(params, &trace, &dy)?;
    Ok((y, gp, gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(seed: u64) -> TmbParams {
        let mut p = TmbParams::new(2, 5, 8, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for l in &mut p.layers {
            l.residual_scale = rng.random_range(0.3..1.0);
            l.mix_b = rng.random_range(-0.2..0.2);
            l.conv_b.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
            l.bn_mean.iter_mut().for_each(|m| *m = rng.random_range(-0.1..0.1));
            l.bn_var.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
        p
    }

    #[test]
    fn identity_at_init() {
        let p = TmbParams::new(2, 5, 8, 1).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(tmb_forward(&x, &p).unwrap(), x);
        assert_eq!(tmb_forward(&x[..5], &p).unwrap().len(), 5);
        assert!(tmb_forward(&x[..4], &p).is_err());
    }

    #[test]
    fn length_preserved_when_active() {
        let p = random_params(3);
        for n in [5usize, 6, 17, 64] {
            let x: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
            assert_eq!(tmb_forward(&x, &p).unwrap().len(), n);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(11);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &TmbParams| -> f64 {
            let y = tmb_forward(&x, p).unwrap();
            y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
        };
        let (_, g, _) = tmb_grad(&x, &p, |y| Ok(y.iter().map(|v| 2.0 * v / y.len() as f64).collect())).unwrap();
        let theta = p.to_vec();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut a = p.clone();
            let mut t = theta.clone();
            t[i] += h;
            a.set_from_vec(&t).unwrap();
            let up = loss(&a);
            t[i] -= 2.0 * h;
            a.set_from_vec(&t).unwrap();
            let fd = (up - loss(&a)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-3), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn calibration_normalises_first_layer() {
        let mut p = TmbParams::new(2, 5, 8, 5).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|s| (0..100).map(|i| ((i + s * 7) as f64 * 0.2).sin()).collect()).collect();
        p.calibrate(&xs).unwrap();
        assert!(p.layers[0].bn_var.iter().all(|v| *v > 0.0));
        assert!(p.validate().is_ok());
    }
}
