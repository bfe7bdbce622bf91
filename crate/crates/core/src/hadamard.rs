//! Block-wise Hadamard binarization.
//!
//! A tensor `X` is approximated as `δ ⊙ Sign(X)`, where `δ` holds the mean
//! absolute value of each contiguous length-`β` block. Weights are blocked
//! along each filter flattened row-major (`reshape(W, (S[0], -1))`);
//! activations are blocked along the innermost (width) axis. The last block
//! of a row may be shorter than `β` and averages over its true length.
//!
//! Block means are accumulated in `f64` and rounded once, which makes
//! binarization idempotent bit for bit: re-binarizing `δ ⊙ Sign(X)` at the
//! same `β` returns it unchanged. Model loading relies on this.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `Sign` with `Sign(0) = +1`, so that every value has a one-bit code.
#[inline]
pub fn sign(x: f32) -> f32 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Straight-through derivative of `Sign`: `1` for `|x| <= 1`, else `0`.
#[inline]
pub fn ste_sign_grad(x: f32) -> f32 {
    if x.abs() <= 1.0 {
        1.0
    } else {
        0.0
    }
}

fn check_beta(beta: usize) -> Result<()> {
    if beta == 0 {
        return Err(Error::invalid("binarization block size beta must be >= 1"));
    }
    Ok(())
}

#[inline]
fn mean_abs(block: &[f32]) -> f32 {
    let sum: f64 = block.iter().map(|v| v.abs() as f64).sum();
    (sum / block.len() as f64) as f32
}

/// One mean-absolute value per block: `⌈len/β⌉` entries.
pub fn block_means(v: &[f32], beta: usize) -> Result<Vec<f32>> {
    check_beta(beta)?;
    Ok(v.chunks(beta).map(mean_abs).collect())
}

/// `δ` expanded to the input length: element `i` holds the mean of `|v|`
/// over the block containing `i`.
pub fn delta_blocks(v: &[f32], beta: usize) -> Result<Vec<f32>> {
    check_beta(beta)?;
    let mut out = Vec::with_capacity(v.len());
    for block in v.chunks(beta) {
        let d = mean_abs(block);
        out.extend(std::iter::repeat_n(d, block.len()));
    }
    Ok(out)
}

/// Binarizes `src` into `dst` treating it as one row.
pub(crate) fn binarize_row(src: &[f32], beta: usize, dst: &mut [f32]) {
    debug_assert_eq!(src.len(), dst.len());
    for (s, d) in src.chunks(beta).zip(dst.chunks_mut(beta)) {
        let delta = mean_abs(s);
        for (x, y) in s.iter().zip(d.iter_mut()) {
            *y = delta * sign(*x);
        }
    }
}

/// `δ ⊙ Sign(v)` for a flat vector.
pub fn binarize_vec(v: &[f32], beta: usize) -> Result<Vec<f32>> {
    check_beta(beta)?;
    let mut out = vec![0.0; v.len()];
    binarize_row(v, beta, &mut out);
    Ok(out)
}

/// Binarizes every length-`row_len` row of `src`.
pub(crate) fn binarize_rows(src: &[f32], row_len: usize, beta: usize, dst: &mut [f32]) {
    for (s, d) in src.chunks_exact(row_len).zip(dst.chunks_exact_mut(row_len)) {
        binarize_row(s, beta, d);
    }
}

/// `W̃ = δ ⊙ Sign(W)` with blocks running along each filter flattened
/// row-major, i.e. the rows of `reshape(W, (S[0], -1))`.
pub fn binarize_weights(w: &Tensor, beta_w: usize) -> Result<Tensor> {
    check_beta(beta_w)?;
    if w.rank() < 2 {
        return Err(Error::shape(format!(
            "weight binarization needs rank >= 2, got shape {:?}",
            w.shape()
        )));
    }
    let row_len = w.len() / w.shape()[0];
    let mut out = vec![0.0; w.len()];
    binarize_rows(w.data(), row_len, beta_w, &mut out);
    Tensor::new(w.shape(), out)
}

fn activation_width(a: &Tensor, beta_a: usize) -> Result<usize> {
    check_beta(beta_a)?;
    let width = *a
        .shape()
        .last()
        .ok_or_else(|| Error::shape("activation tensor has rank 0"))?;
    if beta_a > width {
        return Err(Error::invalid(format!(
            "beta_a = {beta_a} exceeds activation width {width}"
        )));
    }
    Ok(width)
}

/// `Ã = δ ⊙ Sign(A)` with blocks along the innermost (width) axis, restarting
/// at every (channel, row). Leading axes (batch, channel, height) are
/// treated alike; a dense feature vector is a single row.
pub fn binarize_activations(a: &Tensor, beta_a: usize) -> Result<Tensor> {
    let width = activation_width(a, beta_a)?;
    let mut out = vec![0.0; a.len()];
    binarize_rows(a.data(), width, beta_a, &mut out);
    Tensor::new(a.shape(), out)
}

/// Backward pass through `x ↦ δ(x) ⊙ Sign(x)` for one row:
///
/// `∂C/∂xᵢ = (1/n) Sign(xᵢ) Σ_{j∈block(i)} gⱼ Sign(xⱼ) + δᵢ gᵢ 1_{|xᵢ|≤1}`
///
/// where `n` is the length of `block(i)`.
pub(crate) fn backward_row(x: &[f32], grad: &[f32], beta: usize, out: &mut [f32]) {
    for ((xb, gb), ob) in x.chunks(beta).zip(grad.chunks(beta)).zip(out.chunks_mut(beta)) {
        let n = xb.len() as f64;
        let delta = mean_abs(xb);
        let projected: f64 = xb
            .iter()
            .zip(gb)
            .map(|(x, g)| *g as f64 * sign(*x) as f64)
            .sum();
        let shared = (projected / n) as f32;
        for ((x, g), o) in xb.iter().zip(gb).zip(ob.iter_mut()) {
            *o = shared * sign(*x) + delta * g * ste_sign_grad(*x);
        }
    }
}

pub(crate) fn backward_rows(x: &[f32], grad: &[f32], row_len: usize, beta: usize, out: &mut [f32]) {
    for ((xr, gr), or) in x
        .chunks_exact(row_len)
        .zip(grad.chunks_exact(row_len))
        .zip(out.chunks_exact_mut(row_len))
    {
        backward_row(xr, gr, beta, or);
    }
}

/// Gradient with respect to the full-precision vector `w` given the gradient
/// with respect to its binarization.
pub fn hadamard_backward(w: &[f32], grad_wtilde: &[f32], beta_w: usize) -> Result<Vec<f32>> {
    check_beta(beta_w)?;
    if w.len() != grad_wtilde.len() {
        return Err(Error::shape(format!(
            "weight length {} != gradient length {}",
            w.len(),
            grad_wtilde.len()
        )));
    }
    let mut out = vec![0.0; w.len()];
    backward_row(w, grad_wtilde, beta_w, &mut out);
    Ok(out)
}

/// [`hadamard_backward`] applied per filter row of a weight tensor.
pub fn weight_backward(w: &Tensor, grad_wtilde: &Tensor, beta_w: usize) -> Result<Tensor> {
    check_beta(beta_w)?;
    if w.shape() != grad_wtilde.shape() || w.rank() < 2 {
        return Err(Error::shape(format!(
            "weight {:?} vs gradient {:?}",
            w.shape(),
            grad_wtilde.shape()
        )));
    }
    let row_len = w.len() / w.shape()[0];
    let mut out = vec![0.0; w.len()];
    backward_rows(w.data(), grad_wtilde.data(), row_len, beta_w, &mut out);
    Tensor::new(w.shape(), out)
}

/// The same rule as [`hadamard_backward`], applied per width-axis segment.
pub fn activation_backward(a: &Tensor, grad_atilde: &Tensor, beta_a: usize) -> Result<Tensor> {
    if a.shape() != grad_atilde.shape() {
        return Err(Error::shape(format!(
            "activation {:?} vs gradient {:?}",
            a.shape(),
            grad_atilde.shape()
        )));
    }
    let width = activation_width(a, beta_a)?;
    let mut out = vec![0.0; a.len()];
    backward_rows(a.data(), grad_atilde.data(), width, beta_a, &mut out);
    Tensor::new(a.shape(), out)
}

/// Per-layer binarization aggressions `(β_w,l, β_a,l)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HadaConfig {
    beta_w: Vec<usize>,
    beta_a: Vec<usize>,
}

impl HadaConfig {
    pub fn new(beta_w: Vec<usize>, beta_a: Vec<usize>) -> Result<Self> {
        if beta_w.len() != beta_a.len() || beta_w.is_empty() {
            return Err(Error::invalid(format!(
                "need one (beta_w, beta_a) pair per layer, got {} and {}",
                beta_w.len(),
                beta_a.len()
            )));
        }
        if beta_w.iter().chain(&beta_a).any(|&b| b == 0) {
            return Err(Error::invalid("every beta must be >= 1"));
        }
        Ok(HadaConfig { beta_w, beta_a })
    }

    /// `beta_w`/`beta_a` on the inner layers, 1 on the first and last.
    pub fn uniform(layers: usize, beta_w: usize, beta_a: usize) -> Result<Self> {
        let inner = |b: usize| -> Vec<usize> {
            (0..layers)
                .map(|l| if l == 0 || l + 1 == layers { 1 } else { b })
                .collect()
        };
        HadaConfig::new(inner(beta_w), inner(beta_a))
    }

    pub fn full_precision(layers: usize) -> Result<Self> {
        HadaConfig::new(vec![1; layers], vec![1; layers])
    }

    pub fn layers(&self) -> usize {
        self.beta_w.len()
    }

    pub fn beta_w(&self, layer: usize) -> usize {
        self.beta_w[layer]
    }

    pub fn beta_a(&self, layer: usize) -> usize {
        self.beta_a[layer]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    // Brute force: for each element, locate its block by index arithmetic and
    // average |v| over it.
    fn binarize_oracle(v: &[f32], beta: usize) -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let start = beta * (i / beta);
                let end = (start + beta).min(v.len());
                let mean = (start..end).map(|j| v[j].abs() as f64).sum::<f64>() / (end - start) as f64;
                mean * if v[i] >= 0.0 { 1.0 } else { -1.0 }
            })
            .collect()
    }

    // The block backward rule evaluated term by term in f64.
    fn backward_oracle(w: &[f32], g: &[f32], beta: usize) -> Vec<f64> {
        let sgn = |x: f32| if x >= 0.0 { 1.0 } else { -1.0 };
        (0..w.len())
            .map(|i| {
                let start = beta * (i / beta);
                let end = (start + beta).min(w.len());
                let n = (end - start) as f64;
                let delta = (start..end).map(|j| w[j].abs() as f64).sum::<f64>() / n;
                let sum: f64 = (start..end).map(|j| g[j] as f64 * sgn(w[j])).sum();
                let ste = if w[i].abs() <= 1.0 { 1.0 } else { 0.0 };
                sum * sgn(w[i]) / n + delta * g[i] as f64 * ste
            })
            .collect()
    }

    fn nonzero(rng: &mut ChaCha8Rng, range: f32) -> f32 {
        loop {
            let v: f32 = rng.random_range(-range..range);
            if v != 0.0 {
                return v;
            }
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_blocks(&[1.0, -2.0, 3.0, -4.0], 2).unwrap(), vec![1.5, 1.5, 3.5, 3.5]);
        assert_eq!(delta_blocks(&[1.0, -2.0, 3.0], 2).unwrap(), vec![1.5, 1.5, 3.0]);
        let v = [0.25, -7.0, 3.5, -0.0];
        assert_eq!(delta_blocks(&v, 1).unwrap(), vec![0.25, 7.0, 3.5, 0.0]);
        assert!(delta_blocks(&v, 0).is_err());
        assert_eq!(block_means(&[1.0, -2.0, 3.0], 2).unwrap(), vec![1.5, 3.0]);
    }

    #[test]
    fn sign_of_zero_is_positive() {
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
        assert_eq!(sign(-1e-30), -1.0);
    }

    #[test]
    fn binarize_weights_examples() {
        let w = Tensor::new(&[1, 4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        let wt = binarize_weights(&w, 2).unwrap();
        assert_eq!(wt.data(), &[1.5, -1.5, 3.5, -3.5]);
        assert_eq!(binarize_weights(&w, 1).unwrap(), w);
        let v = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        assert!(binarize_weights(&v, 2).is_err());
    }

    #[test]
    fn binarize_conv_filters_against_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::from_fn(&[2, 2, 3, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        let wt = binarize_weights(&w, 9).unwrap();
        for f in 0..2 {
            let row = &w.data()[f * 18..(f + 1) * 18];
            let expect = binarize_oracle(row, 9);
            for (g, e) in wt.data()[f * 18..(f + 1) * 18].iter().zip(expect) {
                assert!((*g as f64 - e).abs() < 1e-6);
            }
            // Two blocks of nine per filter, each sharing one scale.
            let mags: Vec<f32> = wt.data()[f * 18..(f + 1) * 18].iter().map(|x| x.abs()).collect();
            assert!(mags[..9].iter().all(|&m| m == mags[0]));
            assert!(mags[9..].iter().all(|&m| m == mags[9]));
        }
    }

    #[test]
    fn binarize_activations_examples() {
        let a = Tensor::new(&[1, 1, 4], vec![0.2, -0.4, 0.6, 0.8]).unwrap();
        let at = binarize_activations(&a, 2).unwrap();
        assert!(close(at.data(), &[0.3, -0.3, 0.7, 0.7], 1e-7));
        assert_eq!(binarize_activations(&a, 1).unwrap(), a);
        assert!(binarize_activations(&a, 5).is_err());
    }

    #[test]
    fn binarize_activations_rows_share_one_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::from_fn(&[2, 2, 4], |_| rng.random_range(-2.0..2.0)).unwrap();
        let at = binarize_activations(&a, 4).unwrap();
        for row in 0..4 {
            let src = &a.data()[row * 4..row * 4 + 4];
            let mean = src.iter().map(|x| x.abs() as f64).sum::<f64>() / 4.0;
            for (x, y) in src.iter().zip(&at.data()[row * 4..row * 4 + 4]) {
                let e = mean * if *x >= 0.0 { 1.0 } else { -1.0 };
                assert!((*y as f64 - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_sign_grad(0.5), 1.0);
        assert_eq!(ste_sign_grad(2.0), 0.0);
        assert_eq!(ste_sign_grad(-1.0), 1.0);
        assert_eq!(ste_sign_grad(1.0), 1.0);
        assert_eq!(ste_sign_grad(-1.0001), 0.0);
    }

    #[test]
    fn backward_examples() {
        let g = hadamard_backward(&[2.0, 3.0], &[1.0, 1.0], 2).unwrap();
        assert!(close(&g, &[1.0, 1.0], 1e-7));
        let g = hadamard_backward(&[0.5, 3.0], &[1.0, 0.0], 2).unwrap();
        assert!(close(&g, &[2.25, 0.5], 1e-7));
        let g = hadamard_backward(&[0.5, -3.0, 0.1], &[0.0; 3], 2).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(hadamard_backward(&[1.0], &[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn activation_backward_beta_one_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::from_fn(&[2, 3, 5], |_| rng.random_range(-1.0..1.0)).unwrap();
        let g = Tensor::from_fn(&[2, 3, 5], |_| rng.random_range(-1.0..1.0)).unwrap();
        let got = activation_backward(&a, &g, 1).unwrap();
        for row in 0..6 {
            let r = row * 5..row * 5 + 5;
            let expect = backward_oracle(&a.data()[r.clone()], &g.data()[r.clone()], 1);
            for (x, e) in got.data()[r].iter().zip(expect) {
                assert!((*x as f64 - e).abs() < 1e-6);
            }
        }
        // |A| <= 1 at β = 1: each term is gᵢ + |Aᵢ|·gᵢ.
        for ((x, gi), o) in a.data().iter().zip(g.data()).zip(got.data()) {
            assert!((o - (gi + x.abs() * gi)).abs() < 1e-6);
        }
    }

    #[test]
    fn activation_backward_zero_and_segmented() {
        let a = Tensor::new(&[1, 2, 4], vec![0.3, -1.5, 0.7, 2.0, -0.2, 0.9, -3.0, 0.4]).unwrap();
        let zero = Tensor::zeros(&[1, 2, 4]).unwrap();
        assert_eq!(activation_backward(&a, &zero, 2).unwrap().data(), &[0.0; 8]);

        let g = Tensor::new(&[1, 2, 4], vec![0.1, -0.5, 0.25, 1.0, 0.6, -0.3, 0.2, -0.8]).unwrap();
        let got = activation_backward(&a, &g, 2).unwrap();
        for row in 0..2 {
            let r = row * 4..row * 4 + 4;
            let expect = backward_oracle(&a.data()[r.clone()], &g.data()[r.clone()], 2);
            for (x, e) in got.data()[r].iter().zip(expect) {
                assert!((*x as f64 - e).abs() < 1e-6);
            }
        }
        let bad = Tensor::zeros(&[1, 4, 2]).unwrap();
        assert!(activation_backward(&a, &bad, 2).is_err());
    }

    #[test]
    fn backward_matches_oracle_on_1000_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let len = rng.random_range(1..80);
            let beta = rng.random_range(1..=len.min(33));
            let w: Vec<f32> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = hadamard_backward(&w, &g, beta).unwrap();
            for (x, e) in got.iter().zip(backward_oracle(&w, &g, beta)) {
                assert!((*x as f64 - e).abs() <= 1e-6 * e.abs().max(1.0), "{x} vs {e}");
            }
        }
    }

    #[test]
    fn hada_config_defaults() {
        let c = HadaConfig::uniform(4, 16, 2).unwrap();
        assert_eq!((c.beta_w(0), c.beta_a(0)), (1, 1));
        assert_eq!((c.beta_w(1), c.beta_a(1)), (16, 2));
        assert_eq!((c.beta_w(3), c.beta_a(3)), (1, 1));
        assert!(HadaConfig::new(vec![1, 0], vec![1, 1]).is_err());
        assert!(HadaConfig::new(vec![1], vec![1, 1]).is_err());
        assert_eq!(HadaConfig::full_precision(3).unwrap().layers(), 3);
    }

    #[test]
    fn binarization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for beta in [1, 2, 3, 7, 16, 64] {
            let v: Vec<f32> = (0..150).map(|_| rng.random_range(-5.0..5.0)).collect();
            let once = binarize_vec(&v, beta).unwrap();
            let twice = binarize_vec(&once, beta).unwrap();
            assert_eq!(once, twice);
        }
    }

    // Mean angle between v and its binarization, n = 4096, 100 trials.
    #[test]
    fn approximation_angle_grows_with_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = rand_distr::StandardNormal;
        let mut last = -1.0;
        for beta in [1, 2, 4, 8, 16, 32, 64, 128] {
            let mut total = 0.0;
            for _ in 0..100 {
                let v: Vec<f32> = (0..4096).map(|_| rng.sample::<f32, _>(normal)).collect();
                let b = binarize_vec(&v, beta).unwrap();
                let dot: f64 = v.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
                let nv: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum();
                let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum();
                total += (dot / (nv * nb).sqrt()).clamp(-1.0, 1.0).acos().to_degrees();
            }
            let mean = total / 100.0;
            assert!(mean >= last - 1e-9, "beta {beta}: {mean} < {last}");
            last = mean;
        }
    }

    // Surrogate forward f(W) = Σ gᵢ δ(W)ᵢ clip(Wᵢ, -1, 1); for |W| > 1 its exact
    // gradient coincides with the binarization backward rule.
    fn surrogate(w: &[f64], g: &[f32], beta: usize) -> f64 {
        let mut total = 0.0;
        for (wb, gb) in w.chunks(beta).zip(g.chunks(beta)) {
            let delta = wb.iter().map(|x| x.abs()).sum::<f64>() / wb.len() as f64;
            for (x, gi) in wb.iter().zip(gb) {
                total += *gi as f64 * delta * x.clamp(-1.0, 1.0);
            }
        }
        total
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn beta_one_is_identity(seed: u64, len in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f32> = (0..len).map(|_| nonzero(&mut rng, 10.0)).collect();
            prop_assert_eq!(binarize_vec(&v, 1).unwrap(), v.clone());
            let a = Tensor::new(&[1, 1, len], v).unwrap();
            prop_assert_eq!(binarize_activations(&a, 1).unwrap(), a);
        }

        #[test]
        fn blocks_are_constant_sign_and_l1_preserving(seed: u64, len in 1usize..200, beta in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f32> = (0..len).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b = binarize_vec(&v, beta).unwrap();
            let delta = delta_blocks(&v, beta).unwrap();
            for (((vb, bb), db), i) in v.chunks(beta).zip(b.chunks(beta)).zip(delta.chunks(beta)).zip(0..) {
                let mag = bb[0].abs();
                prop_assert!(bb.iter().all(|x| x.abs() == mag));
                prop_assert!(db.iter().all(|&d| d == mag && d >= 0.0));
                for (x, y) in vb.iter().zip(bb) {
                    if *x != 0.0 {
                        prop_assert_eq!(x.signum(), y.signum());
                    }
                }
                let l1_src: f64 = vb.iter().map(|x| x.abs() as f64).sum();
                let l1_bin: f64 = bb.iter().map(|x| x.abs() as f64).sum();
                prop_assert!((l1_src - l1_bin).abs() <= 1e-5 * l1_src.max(1.0), "block {}", i);
            }
            let oracle = binarize_oracle(&v, beta);
            for (x, e) in b.iter().zip(oracle) {
                prop_assert!((*x as f64 - e).abs() <= 1e-6 * e.abs().max(1.0));
            }
        }

        #[test]
        fn backward_matches_surrogate_finite_difference(seed: u64, len in 1usize..40, beta in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f32> = (0..len)
                .map(|_| {
                    let m: f32 = rng.random_range(1.01..3.0);
                    if rng.random::<bool>() { m } else { -m }
                })
                .collect();
            let g: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grad = hadamard_backward(&w, &g, beta).unwrap();
            let h = 1e-3;
            let base: Vec<f64> = w.iter().map(|&x| x as f64).collect();
            for i in 0..len {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (surrogate(&plus, &g, beta) - surrogate(&minus, &g, beta)) / (2.0 * h);
                prop_assert!((fd - grad[i] as f64).abs() <= 1e-3, "i={} fd={} got={}", i, fd, grad[i]);
            }
        }
    }
}
