//! Forward kernels and their reverse-mode rules.

use super::Tensor;
use crate::scalar::{self, Scalar};
use std::rc::Rc;

fn norm2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("tensor ops support rank <= 2, got shape {:?}", shape),
    }
}

fn broadcast_dims(a: &[usize], b: &[usize], op: &str) -> (usize, usize, Vec<usize>) {
    let (ar, ac) = norm2(a);
    let (br, bc) = norm2(b);
    let pick = |x: usize, y: usize| -> usize {
        if x == y {
            x
        } else if x == 1 {
            y
        } else if y == 1 {
            x
        } else {
            panic!(
                "{op}: shapes {:?} and {:?} are not broadcast-compatible",
                a, b
            )
        }
    };
    let (r, c) = (pick(ar, br), pick(ac, bc));
    let rank = a.len().max(b.len());
    let shape = match rank {
        0 => vec![],
        1 => vec![c],
        _ => vec![r, c],
    };
    (r, c, shape)
}

// c[i,j] += sum_p a[i,p] * b[p,j]
fn mat_mul_nn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bpj) in crow.iter_mut().zip(brow) {
                *cj += aip * bpj;
            }
        }
    }
}

// c[i,j] += dot(a_row_i, b_row_j) where a is m x k, b is n x k
fn mat_mul_nt<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

// dot-product build of a * b^T without a pre-zeroed output
fn mat_mul_nt_new<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F]) -> Vec<F> {
    let mut c = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c.push(acc);
        }
    }
    c
}

// c[p,j] += sum_i a[i,p] * b[i,j] where a is m x k, b is m x n
fn mat_mul_tn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bij) in crow.iter_mut().zip(brow) {
                *cj += aip * bij;
            }
        }
    }
}

impl<F: Scalar> Tensor<F> {
    fn record(&self, out: &Tensor<F>, back: Box<dyn Fn()>) {
        self.tape().push_node(out, back);
    }

    fn unary_op(&self, fwd: fn(F) -> F, dydx: fn(F, F) -> F) -> Tensor<F> {
        let d = self.data.borrow();
        let values: Vec<F> = d.values.iter().map(|&x| fwd(x)).collect();
        let req = d.requires_grad;
        let shape = d.shape.clone();
        drop(d);
        let out = self.tape().make(&shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let od = o.borrow();
                    let g = match &od.grad {
                        Some(g) => g,
                        None => return,
                    };
                    let contrib: Vec<F> = {
                        let ad = a.borrow();
                        ad.values
                            .iter()
                            .zip(&od.values)
                            .zip(g)
                            .map(|((&x, &y), &gi)| gi * dydx(x, y))
                            .collect()
                    };
                    drop(od);
                    a.borrow_mut().accumulate(&contrib);
                }),
            );
        }
        out
    }

    fn binary_op(
        &self,
        other: &Tensor<F>,
        name: &'static str,
        fwd: fn(F, F) -> F,
        partials: fn(F, F) -> (F, F),
    ) -> Tensor<F> {
        self.binary_check(other, name);
        let (ashape, bshape) = (self.shape(), other.shape());
        let same_shape = ashape == bshape;
        let (r, c, out_shape) = broadcast_dims(&ashape, &bshape, name);
        let (ar, ac) = norm2(&ashape);
        let (br, bc) = norm2(&bshape);
        let (av, bv) = (self.data.borrow(), other.data.borrow());
        let values: Vec<F> = if same_shape {
            av.values
                .iter()
                .zip(&bv.values)
                .map(|(&x, &y)| fwd(x, y))
                .collect()
        } else {
            let mut values = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    let x =
                        av.values[(if ar == 1 { 0 } else { i }) * ac + if ac == 1 { 0 } else { j }];
                    let y =
                        bv.values[(if br == 1 { 0 } else { i }) * bc + if bc == 1 { 0 } else { j }];
                    values.push(fwd(x, y));
                }
            }
            values
        };
        let req = av.requires_grad || bv.requires_grad;
        drop(av);
        drop(bv);
        let out = self.tape().make(&out_shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let b = Rc::clone(&other.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let od = o.borrow();
                    let g = match &od.grad {
                        Some(g) => g,
                        None => return,
                    };
                    let (areq, breq) = (a.borrow().requires_grad, b.borrow().requires_grad);
                    let mut ga = vec![F::zero(); if areq { ar * ac } else { 0 }];
                    let mut gb = vec![F::zero(); if breq { br * bc } else { 0 }];
                    {
                        let (ad, bd) = (a.borrow(), b.borrow());
                        if same_shape {
                            for (k, gij) in g.iter().enumerate() {
                                let (da, db) = partials(ad.values[k], bd.values[k]);
                                if areq {
                                    ga[k] = *gij * da;
                                }
                                if breq {
                                    gb[k] = *gij * db;
                                }
                            }
                        } else {
                            for i in 0..r {
                                for j in 0..c {
                                    let ia = (if ar == 1 { 0 } else { i }) * ac
                                        + if ac == 1 { 0 } else { j };
                                    let ib = (if br == 1 { 0 } else { i }) * bc
                                        + if bc == 1 { 0 } else { j };
                                    let (da, db) = partials(ad.values[ia], bd.values[ib]);
                                    let gij = g[i * c + j];
                                    if areq {
                                        ga[ia] += gij * da;
                                    }
                                    if breq {
                                        gb[ib] += gij * db;
                                    }
                                }
                            }
                        }
                    }
                    drop(od);
                    if areq {
                        a.borrow_mut().accumulate(&ga);
                    }
                    if breq {
                        b.borrow_mut().accumulate(&gb);
                    }
                }),
            );
        }
        out
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_check(other, "matmul");
        let (ashape, bshape) = (self.shape(), other.shape());
        assert!(
            ashape.len() == 2 && bshape.len() == 2,
            "matmul: operands must be rank-2, got {:?} and {:?}",
            ashape,
            bshape
        );
        let (m, k) = (ashape[0], ashape[1]);
        let (k2, n) = (bshape[0], bshape[1]);
        assert_eq!(
            k, k2,
            "matmul: inner dimensions disagree: lhs shape {:?}, rhs shape {:?}",
            ashape, bshape
        );
        let mut values = vec![F::zero(); m * n];
        {
            let (ad, bd) = (self.data.borrow(), other.data.borrow());
            mat_mul_nn(m, k, n, &ad.values, &bd.values, &mut values);
        }
        let req = self.requires_grad() || other.requires_grad();
        let out = self.tape().make(&[m, n], values, req);
        if req {
            let a = Rc::clone(&self.data);
            let b = Rc::clone(&other.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let od = o.borrow();
                    let g = match &od.grad {
                        Some(g) => g,
                        None => return,
                    };
                    let (areq, breq) = (a.borrow().requires_grad, b.borrow().requires_grad);
                    if areq {
                        let mut ga = vec![F::zero(); m * k];
                        mat_mul_nt(m, n, k, g, &b.borrow().values, &mut ga);
                        a.borrow_mut().accumulate(&ga);
                    }
                    if breq {
                        let mut gb = vec![F::zero(); k * n];
                        mat_mul_tn(m, k, n, &a.borrow().values, g, &mut gb);
                        b.borrow_mut().accumulate(&gb);
                    }
                }),
            );
        }
        out
    }

    /// `self * other^T` without materializing the transpose; both operands
    /// rank-2 with equal column counts.
    pub fn matmul_nt(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_check(other, "matmul_nt");
        let (ashape, bshape) = (self.shape(), other.shape());
        assert!(
            ashape.len() == 2 && bshape.len() == 2 && ashape[1] == bshape[1],
            "matmul_nt: incompatible shapes {:?} and {:?}",
            ashape,
            bshape
        );
        let (m, k) = (ashape[0], ashape[1]);
        let n = bshape[0];
        let values = {
            let (ad, bd) = (self.data.borrow(), other.data.borrow());
            mat_mul_nt_new(m, k, n, &ad.values, &bd.values)
        };
        let req = self.requires_grad() || other.requires_grad();
        let out = self.tape().make(&[m, n], values, req);
        if req {
            let a = Rc::clone(&self.data);
            let b = Rc::clone(&other.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let od = o.borrow();
                    let g = match &od.grad {
                        Some(g) => g,
                        None => return,
                    };
                    let (areq, breq) = (a.borrow().requires_grad, b.borrow().requires_grad);
                    // c = a b^T: da = g b, db = g^T a.
                    if areq {
                        let mut ga = vec![F::zero(); m * k];
                        mat_mul_nn(m, n, k, g, &b.borrow().values, &mut ga);
                        a.borrow_mut().accumulate(&ga);
                    }
                    if breq {
                        let mut gb = vec![F::zero(); n * k];
                        mat_mul_tn(m, n, k, g, &a.borrow().values, &mut gb);
                        b.borrow_mut().accumulate(&gb);
                    }
                }),
            );
        }
        out
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2, "transpose: expected rank-2, got {:?}", shape);
        let (r, c) = (shape[0], shape[1]);
        let d = self.data.borrow();
        let mut values = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = d.values[i * c + j];
            }
        }
        let req = d.requires_grad;
        drop(d);
        let out = self.tape().make(&[c, r], values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let mut ga = vec![F::zero(); r * c];
                    for j in 0..c {
                        for i in 0..r {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    a.borrow_mut().accumulate(&ga);
                }),
            );
        }
        out
    }

    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_op(other, "add", |x, y| x + y, |_, _| (F::one(), F::one()))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_op(other, "sub", |x, y| x - y, |_, _| (F::one(), -F::one()))
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_op(other, "mul", |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_op(
            other,
            "div",
            |x, y| x / y,
            |x, y| (F::one() / y, -x / (y * y)),
        )
    }

    pub fn neg(&self) -> Tensor<F> {
        self.unary_op(|x| -x, |_, _| -F::one())
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, k: F) -> Tensor<F> {
        let d = self.data.borrow();
        let values: Vec<F> = d.values.iter().map(|&x| x * k).collect();
        let req = d.requires_grad;
        let shape = d.shape.clone();
        drop(d);
        let out = self.tape().make(&shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let contrib: Vec<F> = g.iter().map(|&gi| gi * k).collect();
                    a.borrow_mut().accumulate(&contrib);
                }),
            );
        }
        out
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, k: F) -> Tensor<F> {
        let d = self.data.borrow();
        let values: Vec<F> = d.values.iter().map(|&x| x + k).collect();
        let req = d.requires_grad;
        let shape = d.shape.clone();
        drop(d);
        let out = self.tape().make(&shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    if let Some(g) = o.borrow().grad.clone() {
                        a.borrow_mut().accumulate(&g);
                    }
                }),
            );
        }
        out
    }

    /// Identity forward; multiplies the backward flow by `k`.
    ///
    /// `k = -lambda` turns this into a gradient-reversal layer.
    pub fn grad_scale(&self, k: F) -> Tensor<F> {
        let d = self.data.borrow();
        let values = d.values.clone();
        let req = d.requires_grad;
        let shape = d.shape.clone();
        drop(d);
        let out = self.tape().make(&shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let contrib: Vec<F> = g.iter().map(|&gi| gi * k).collect();
                    a.borrow_mut().accumulate(&contrib);
                }),
            );
        }
        out
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary_op(scalar::sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary_op(|x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn softplus(&self) -> Tensor<F> {
        self.unary_op(scalar::softplus, |x, _| scalar::sigmoid(x))
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary_op(|x| x.exp(), |_, y| y)
    }

    /// Natural logarithm; the input must be strictly positive.
    pub fn log(&self) -> Tensor<F> {
        {
            let d = self.data.borrow();
            for (i, &x) in d.values.iter().enumerate() {
                assert!(
                    x > F::zero(),
                    "log: non-positive input {x} at index {i} (domain error)"
                );
            }
        }
        self.unary_op(|x| x.ln(), |x, _| F::one() / x)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor<F> {
        let d = self.data.borrow();
        let total: F = d.values.iter().copied().sum();
        let req = d.requires_grad;
        let n = d.values.len();
        drop(d);
        let out = self.tape().make(&[], vec![total], req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g[0],
                        None => return,
                    };
                    a.borrow_mut().accumulate(&vec![g; n]);
                }),
            );
        }
        out
    }

    /// Per-row sums of a rank-2 tensor, as an `[r, 1]` column.
    pub fn row_sums(&self) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2, "row_sums: expected rank-2, got {:?}", shape);
        let (r, c) = (shape[0], shape[1]);
        let d = self.data.borrow();
        let values: Vec<F> = (0..r)
            .map(|i| d.values[i * c..(i + 1) * c].iter().copied().sum())
            .collect();
        let req = d.requires_grad;
        drop(d);
        let out = self.tape().make(&[r, 1], values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let mut ga = vec![F::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[i];
                        }
                    }
                    a.borrow_mut().accumulate(&ga);
                }),
            );
        }
        out
    }

    /// Horizontal concatenation of two rank-2 tensors with equal row counts.
    pub fn concat_cols(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_check(other, "concat_cols");
        let (ashape, bshape) = (self.shape(), other.shape());
        assert!(
            ashape.len() == 2 && bshape.len() == 2 && ashape[0] == bshape[0],
            "concat_cols: incompatible shapes {:?} and {:?}",
            ashape,
            bshape
        );
        let (r, ca, cb) = (ashape[0], ashape[1], bshape[1]);
        let c = ca + cb;
        let mut values = Vec::with_capacity(r * c);
        {
            let (ad, bd) = (self.data.borrow(), other.data.borrow());
            for i in 0..r {
                values.extend_from_slice(&ad.values[i * ca..(i + 1) * ca]);
                values.extend_from_slice(&bd.values[i * cb..(i + 1) * cb]);
            }
        }
        let req = self.requires_grad() || other.requires_grad();
        let out = self.tape().make(&[r, c], values, req);
        if req {
            let a = Rc::clone(&self.data);
            let b = Rc::clone(&other.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let (areq, breq) = (a.borrow().requires_grad, b.borrow().requires_grad);
                    if areq {
                        let mut ga = vec![F::zero(); r * ca];
                        for i in 0..r {
                            ga[i * ca..(i + 1) * ca].copy_from_slice(&g[i * c..i * c + ca]);
                        }
                        a.borrow_mut().accumulate(&ga);
                    }
                    if breq {
                        let mut gb = vec![F::zero(); r * cb];
                        for i in 0..r {
                            gb[i * cb..(i + 1) * cb].copy_from_slice(&g[i * c + ca..(i + 1) * c]);
                        }
                        b.borrow_mut().accumulate(&gb);
                    }
                }),
            );
        }
        out
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2, "slice_cols: expected rank-2, got {:?}", shape);
        let (r, c) = (shape[0], shape[1]);
        assert!(
            start < end && end <= c,
            "slice_cols: range {start}..{end} out of bounds for {c} columns"
        );
        let w = end - start;
        let d = self.data.borrow();
        let mut values = Vec::with_capacity(r * w);
        for i in 0..r {
            values.extend_from_slice(&d.values[i * c + start..i * c + end]);
        }
        let req = d.requires_grad;
        drop(d);
        let out = self.tape().make(&[r, w], values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    let g = match &o.borrow().grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let mut ga = vec![F::zero(); r * c];
                    for i in 0..r {
                        ga[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    a.borrow_mut().accumulate(&ga);
                }),
            );
        }
        out
    }

    /// Same data, new shape (row-major layout preserved).
    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let d = self.data.borrow();
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            d.values.len(),
            "reshape: cannot view {:?} as {:?}",
            d.shape,
            shape
        );
        let values = d.values.clone();
        let req = d.requires_grad;
        drop(d);
        let out = self.tape().make(shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            self.record(
                &out,
                Box::new(move || {
                    if let Some(g) = o.borrow().grad.clone() {
                        a.borrow_mut().accumulate(&g);
                    }
                }),
            );
        }
        out
    }

    /// Exp-normalizes a vector over its mask; entries outside the mask are
    /// exactly zero. Panics on an empty mask (degenerate neighborhood).
    pub fn masked_softmax(&self, mask: &[bool]) -> Tensor<F> {
        let shape = self.shape();
        assert!(
            shape.len() <= 1,
            "masked_softmax: expected a vector, got {:?} (use masked_softmax_rows)",
            shape
        );
        self.masked_softmax_rows(mask, false)
    }

    /// Row-wise masked softmax. With `allow_empty`, rows whose mask is all
    /// false come out as all zeros instead of panicking.
    pub fn masked_softmax_rows(&self, mask: &[bool], allow_empty: bool) -> Tensor<F> {
        self.masked_softmax_rows_scaled(mask, F::one(), allow_empty)
    }

    /// Row-wise masked softmax of `scale * self`, with the scale folded into
    /// the kernel.
    pub fn masked_softmax_rows_scaled(
        &self,
        mask: &[bool],
        scale: F,
        allow_empty: bool,
    ) -> Tensor<F> {
        let shape = self.shape();
        let (r, c) = norm2(&shape);
        assert_eq!(
            mask.len(),
            r * c,
            "masked_softmax: mask length {} does not match {} elements",
            mask.len(),
            r * c
        );
        let d = self.data.borrow();
        let mut values = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &d.values[i * c..(i + 1) * c];
            let mrow = &mask[i * c..(i + 1) * c];
            let mut max: Option<F> = None;
            for (x, &m) in row.iter().zip(mrow) {
                if m {
                    let scaled = *x * scale;
                    max = Some(match max {
                        Some(cur) => cur.max(scaled),
                        None => scaled,
                    });
                }
            }
            let max = match max {
                Some(m) => m,
                None if allow_empty => continue,
                None => panic!(
                    "masked_softmax: degenerate neighborhood, mask row {i} has no true entries"
                ),
            };
            let mut denom = F::zero();
            for j in 0..c {
                if mrow[j] {
                    let e = (row[j] * scale - max).exp();
                    values[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                if mrow[j] {
                    values[i * c + j] /= denom;
                }
            }
        }
        let req = d.requires_grad;
        drop(d);
        let out = self.tape().make(&shape, values, req);
        if req {
            let a = Rc::clone(&self.data);
            let o = Rc::clone(&out.data);
            let mask: Vec<bool> = mask.to_vec();
            self.record(
                &out,
                Box::new(move || {
                    let od = o.borrow();
                    let g = match &od.grad {
                        Some(g) => g.clone(),
                        None => return,
                    };
                    let alpha = od.values.clone();
                    drop(od);
                    let mut ga = vec![F::zero(); r * c];
                    for i in 0..r {
                        let mut dot = F::zero();
                        for j in 0..c {
                            if mask[i * c + j] {
                                dot += alpha[i * c + j] * g[i * c + j];
                            }
                        }
                        for j in 0..c {
                            if mask[i * c + j] {
                                ga[i * c + j] = scale * alpha[i * c + j] * (g[i * c + j] - dot);
                            }
                        }
                    }
                    a.borrow_mut().accumulate(&ga);
                }),
            );
        }
        out
    }
}

/// Summed binary cross entropy between logits and 0/1 targets over the
/// masked entries, in the overflow-free log-sum-exp form. Returned as a
/// positive loss.
pub fn bce_with_logits<F: Scalar>(logits: &Tensor<F>, targets: &[F], mask: &[bool]) -> Tensor<F> {
    let n = logits.len();
    assert_eq!(targets.len(), n, "bce_with_logits: target length mismatch");
    assert_eq!(mask.len(), n, "bce_with_logits: mask length mismatch");
    let d = logits.data.borrow();
    let mut total = F::zero();
    for i in 0..n {
        if mask[i] {
            let x = d.values[i];
            // max(x,0) - x*a + ln(1 + exp(-|x|))
            total += x.max(F::zero()) - x * targets[i] + (-x.abs()).exp().ln_1p();
        }
    }
    let req = d.requires_grad;
    drop(d);
    let out = logits.tape().make(&[], vec![total], req);
    if req {
        let a = Rc::clone(&logits.data);
        let o = Rc::clone(&out.data);
        let targets: Vec<F> = targets.to_vec();
        let mask: Vec<bool> = mask.to_vec();
        logits.tape().push_node(
            &out,
            Box::new(move || {
                let g = match &o.borrow().grad {
                    Some(g) => g[0],
                    None => return,
                };
                let contrib: Vec<F> = {
                    let ad = a.borrow();
                    (0..n)
                        .map(|i| {
                            if mask[i] {
                                g * (scalar::sigmoid(ad.values[i]) - targets[i])
                            } else {
                                F::zero()
                            }
                        })
                        .collect()
                };
                a.borrow_mut().accumulate(&contrib);
            }),
        );
    }
    out
}

/// Multi-class cross entropy `-sum_i c_i log softmax(y)_i` from raw logits.
pub fn cross_entropy_with_logits<F: Scalar>(logits: &Tensor<F>, one_hot: &[F]) -> Tensor<F> {
    let n = logits.len();
    assert_eq!(
        one_hot.len(),
        n,
        "cross_entropy_with_logits: label length mismatch"
    );
    let d = logits.data.borrow();
    let max = d
        .values
        .iter()
        .copied()
        .fold(F::neg_infinity(), |a, b| a.max(b));
    let mut sum_exp = F::zero();
    for &y in &d.values {
        sum_exp += (y - max).exp();
    }
    let lse = max + sum_exp.ln();
    let mut picked = F::zero();
    for (y, &c) in d.values.iter().zip(one_hot) {
        picked += c * *y;
    }
    // one_hot sums to 1, so CE = lse - sum_i c_i y_i
    let total = lse - picked;
    let req = d.requires_grad;
    drop(d);
    let out = logits.tape().make(&[], vec![total], req);
    if req {
        let a = Rc::clone(&logits.data);
        let o = Rc::clone(&out.data);
        let one_hot: Vec<F> = one_hot.to_vec();
        logits.tape().push_node(
            &out,
            Box::new(move || {
                let g = match &o.borrow().grad {
                    Some(g) => g[0],
                    None => return,
                };
                let contrib: Vec<F> = {
                    let ad = a.borrow();
                    let max = ad
                        .values
                        .iter()
                        .copied()
                        .fold(F::neg_infinity(), |a, b| a.max(b));
                    let mut sum_exp = F::zero();
                    for &y in &ad.values {
                        sum_exp += (y - max).exp();
                    }
                    ad.values
                        .iter()
                        .zip(&one_hot)
                        .map(|(&y, &c)| g * ((y - max).exp() / sum_exp - c))
                        .collect()
                };
                a.borrow_mut().accumulate(&contrib);
            }),
        );
    }
    out
}
