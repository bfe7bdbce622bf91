//! Dense row-major `f32` tensors, reshape semantics, and the reference linear
//! algebra the packed kernels are checked against.
//!
//! [`matmul_ref`] is the scalar triple loop with `k` innermost and is kept
//! deliberately plain: it is the correctness oracle. Training uses
//! [`gemm`], a thin wrapper over the `matrixmultiply` crate.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel = checked_numel(shape)?;
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel = checked_numel(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let numel = checked_numel(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for ((&i, &d), s) in index.iter().zip(&self.shape).zip(self.strides()) {
            if i >= d {
                return None;
            }
            off += i * s;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f32> {
        self.offset(index).map(|o| self.data[o])
    }

    /// Reinterprets the shape without touching the data. At most one extent
    /// may be `-1`; it is inferred from the element count.
    pub fn reshape(self, spec: &[isize]) -> Result<Self> {
        let shape = resolve_shape(self.data.len(), spec)?;
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Borrowing variant of [`Tensor::reshape`]; clones the buffer.
    pub fn reshaped(&self, spec: &[isize]) -> Result<Self> {
        self.clone().reshape(spec)
    }

    pub fn transpose2(&self) -> Result<Self> {
        let [m, n] = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(&[n, m], out)
    }

    pub(crate) fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [m, n] => Ok([m, n]),
            _ => Err(Error::shape(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

fn resolve_shape(numel: usize, spec: &[isize]) -> Result<Vec<usize>> {
    if spec.is_empty() {
        return Err(Error::shape("empty reshape spec"));
    }
    let mut wildcard = None;
    let mut known = 1usize;
    for (axis, &d) in spec.iter().enumerate() {
        match d {
            -1 if wildcard.is_some() => {
                return Err(Error::shape(format!("more than one -1 in {spec:?}")))
            }
            -1 => wildcard = Some(axis),
            d if d <= 0 => {
                return Err(Error::shape(format!("invalid extent {d} in {spec:?}")))
            }
            d => known *= d as usize,
        }
    }
    let mut shape: Vec<usize> = spec.iter().map(|&d| d.max(0) as usize).collect();
    match wildcard {
        Some(axis) => {
            if numel % known != 0 || numel / known == 0 {
                return Err(Error::shape(format!(
                    "cannot infer -1 in {spec:?} for {numel} elements"
                )));
            }
            shape[axis] = numel / known;
        }
        None if known != numel => {
            return Err(Error::shape(format!(
                "reshape {spec:?} does not cover {numel} elements"
            )))
        }
        None => {}
    }
    Ok(shape)
}

/// Classical triple-loop matrix multiply, `k` innermost, 32-bit accumulation.
pub fn matmul_ref(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += ad[i * k + p] * bd[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(&[m, n], out)
}

/// Which operands of [`gemm`] are stored transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    None,
    Lhs,
    Rhs,
}

/// `c = a·b` (or `c += a·b` when `accumulate`) for row-major slices, where
/// `a` is logically `m×k` and `b` is logically `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
    trans: Transpose,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = match trans {
        Transpose::Lhs => (1, m as isize),
        _ => (k as isize, 1),
    };
    let (rsb, csb) = match trans {
        Transpose::Rhs => (1, k as isize),
        _ => (n as isize, 1),
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution over a `c×h×w` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("convolution stride must be >= 1"));
        }
        if self.channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::invalid("zero channel or kernel extent"));
        }
        if self.kernel_h > self.height + 2 * self.pad || self.kernel_w > self.width + 2 * self.pad
        {
            return Err(Error::shape(format!(
                "kernel {}x{} does not fit padded input {}x{}",
                self.kernel_h,
                self.kernel_w,
                self.height + 2 * self.pad,
                self.width + 2 * self.pad
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    /// Rows of the im2col matrix: `c·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn out_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds one `c×h×w` image into `(c·kh·kw) × (h_out·w_out)`.
pub fn im2col(a: &Tensor, kernel_h: usize, kernel_w: usize, stride: usize, pad: usize) -> Result<Tensor> {
    let [c, h, w] = match a.shape()[..] {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(Error::shape(format!(
                "im2col expects c×h×w, got {:?}",
                a.shape()
            )))
        }
    };
    let geom = ConvGeometry {
        channels: c,
        height: h,
        width: w,
        kernel_h,
        kernel_w,
        stride,
        pad,
    };
    geom.validate()?;
    let cols = geom.out_positions();
    let mut out = vec![0.0; geom.patch_len() * cols];
    im2col_into(a.data(), &geom, &mut out, cols, 0);
    Tensor::new(&[geom.patch_len(), cols], out)
}

/// Writes the im2col unfolding of `image` into `dst`, a row-major matrix with
/// `ld` columns, starting at column `col_offset`. Padding reads as zero.
pub fn im2col_into(image: &[f32], g: &ConvGeometry, dst: &mut [f32], ld: usize, col_offset: usize) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for ch in 0..g.channels {
        let plane = &image[ch * g.height * g.width..(ch + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (ch * g.kernel_h + ky) * g.kernel_w + kx;
                let dst_row = &mut dst[row * ld + col_offset..row * ld + col_offset + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst_row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatters-and-adds columns back into `image`.
pub fn col2im_add(cols: &[f32], g: &ConvGeometry, ld: usize, col_offset: usize, image: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for ch in 0..g.channels {
        let plane = &mut image[ch * g.height * g.width..(ch + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (ch * g.kernel_h + ky) * g.kernel_w + kx;
                let src_row = &cols[row * ld + col_offset..row * ld + col_offset + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src_row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    // Independent oracle: f64 accumulation through multi-index lookups.
    fn triple_loop_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k)
                    .map(|p| a.get(&[i, p]).unwrap() as f64 * b.get(&[p, j]).unwrap() as f64)
                    .sum();
            }
        }
        out
    }

    // Independent oracle: sliding-window convolution by direct indexing.
    fn direct_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; k * oh * ow];
        for f in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.get(&[ch, iy as usize, ix as usize]).unwrap() as f64
                                    * w.get(&[f, ch, ky, kx]).unwrap() as f64;
                            }
                        }
                    }
                    out[(f * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn reshape_infers_second_dimension() {
        let t = Tensor::zeros(&[4, 3, 2, 2]).unwrap();
        let r = t.reshape(&[4, -1]).unwrap();
        assert_eq!(r.shape(), &[4, 12]);
    }

    #[test]
    fn reshape_identity_and_flatten_keep_order() {
        let t = Tensor::new(&[6], (0..6).map(|i| i as f32).collect()).unwrap();
        let same = t.reshaped(&[6]).unwrap();
        assert_eq!(same, t);

        let t = Tensor::new(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let before: Vec<f32> = (0..2)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| t.get(&[i, j]).unwrap())
            .collect();
        let flat = t.reshape(&[-1]).unwrap();
        assert_eq!(flat.shape(), &[6]);
        let after: Vec<f32> = (0..6).map(|i| flat.get(&[i]).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn reshape_errors() {
        let t = Tensor::zeros(&[2, 3]).unwrap();
        assert!(t.reshaped(&[4, -1]).is_err());
        assert!(t.reshaped(&[-1, -1]).is_err());
        assert!(t.reshaped(&[0, 6]).is_err());
        assert!(t.reshaped(&[5]).is_err());
        assert!(Tensor::zeros(&[0, 2]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        let t = Tensor::zeros(&[2, 3, 4]).unwrap();
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.offset(&[1, 2, 3]), Some(23));
        assert_eq!(t.offset(&[2, 0, 0]), None);
    }

    #[test]
    fn matmul_identity_cases() {
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul_ref(&eye, &eye).unwrap(), eye);
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul_ref(&a, &eye).unwrap(), a);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&[7, 5], &mut rng);
        let b = random(&[5, 3], &mut rng);
        let got = matmul_ref(&a, &b).unwrap();
        for (g, e) in got.data().iter().zip(triple_loop_oracle(&a, &b)) {
            assert!((*g as f64 - e).abs() <= 1e-5 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matmul_ref(&a, &a).is_err());
    }

    #[test]
    fn gemm_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&[9, 13], &mut rng);
        let b = random(&[13, 4], &mut rng);
        let expect = matmul_ref(&a, &b).unwrap();
        let mut c = vec![0.0; 36];
        gemm(9, 13, 4, a.data(), b.data(), &mut c, Transpose::None, false);
        let at = a.transpose2().unwrap();
        let mut c2 = vec![0.0; 36];
        gemm(9, 13, 4, at.data(), b.data(), &mut c2, Transpose::Lhs, false);
        let bt = b.transpose2().unwrap();
        let mut c3 = vec![1.0; 36];
        gemm(9, 13, 4, a.data(), bt.data(), &mut c3, Transpose::Rhs, true);
        for i in 0..36 {
            let e = expect.data()[i];
            assert!((c[i] - e).abs() < 1e-5);
            assert!((c2[i] - e).abs() < 1e-5);
            assert!((c3[i] - 1.0 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn im2col_single_receptive_field() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, 2, 2, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[4, 1]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn im2col_3x3_by_hand() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let cols = im2col(&x, 2, 2, 1, 0).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        // Receptive fields (columns): [1,2,4,5] [2,3,5,6] [4,5,7,8] [5,6,8,9].
        #[rustfmt::skip]
        let expect = [
            1.0, 2.0, 4.0, 5.0,
            2.0, 3.0, 5.0, 6.0,
            4.0, 5.0, 7.0, 8.0,
            5.0, 6.0, 8.0, 9.0,
        ];
        assert_eq!(cols.data(), &expect);
    }

    #[test]
    fn im2col_rejects_oversized_kernel() {
        let x = Tensor::zeros(&[1, 2, 2]).unwrap();
        assert!(im2col(&x, 3, 3, 1, 0).is_err());
        assert!(im2col(&x, 2, 2, 0, 0).is_err());
        assert!(im2col(&x, 3, 3, 1, 1).is_ok());
    }

    #[test]
    fn conv_via_im2col_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let cols = im2col(&x, 3, 3, 1, 0).unwrap();
        let wf = w.reshaped(&[3, -1]).unwrap();
        let got = matmul_ref(&wf, &cols).unwrap();
        for (g, e) in got.data().iter().zip(direct_conv(&x, &w, 1, 0)) {
            assert!((*g as f64 - e).abs() < 1e-5);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = ConvGeometry {
            channels: 2,
            height: 6,
            width: 5,
            kernel_h: 3,
            kernel_w: 2,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f32> = (0..g.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = g.patch_len() * g.out_positions();
        let y: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut cols = vec![0.0; n];
        im2col_into(&x, &g, &mut cols, g.out_positions(), 0);
        let mut back = vec![0.0; g.input_len()];
        col2im_add(&y, &g, g.out_positions(), 0, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn reshape_roundtrip_is_bitwise(dims in proptest::collection::vec(1usize..5, 1..4), seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random(&dims, &mut rng);
            let spec: Vec<isize> = dims.iter().map(|&d| d as isize).collect();
            let flat = t.reshaped(&[-1]).unwrap();
            let back = flat.reshape(&spec).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn im2col_matmul_equals_direct_conv(
            c in 1usize..=3, h in 3usize..=8, w in 3usize..=8,
            k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1, seed: u64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[c, h, w], &mut rng);
            let wt = random(&[k, c, 3, 3], &mut rng);
            let cols = im2col(&x, 3, 3, stride, pad).unwrap();
            let got = matmul_ref(&wt.reshaped(&[k as isize, -1]).unwrap(), &cols).unwrap();
            for (g, e) in got.data().iter().zip(direct_conv(&x, &wt, stride, pad)) {
                prop_assert!((*g as f64 - e).abs() < 1e-5);
            }
        }
    }
}
