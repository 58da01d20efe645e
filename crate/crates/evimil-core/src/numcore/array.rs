//! Dense row-major f64 arrays, 1-D and 2-D.
//!
//! This is the value type carried by every graph node. Shapes are kept
//! deliberately small-dimensional: vectors and matrices cover everything the
//! models and losses need. All reductions run in fixed row-major order so
//! results are bit-reproducible.

/// Dense array of f64 values with a row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Array {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Array { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Array {
        Array { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f64) -> Array {
        Array { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Array {
        Array { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Array {
        Array { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Array {
        Array::from_vec(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count: a vector counts as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count: for vectors this is the length.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => panic!("rows/cols only defined for 1-D and 2-D arrays"),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    /// Value of a single-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires exactly one element, shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Array {
        Array::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Array { shape: self.shape.clone(), data }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Array) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// C = A · B for 2-D operands, [n,k]·[k,m] → [n,m].
    pub fn matmul(&self, b: &Array) -> Array {
        let (n, k) = (self.rows(), self.cols());
        assert_eq!(k, b.rows(), "matmul inner dims: {:?} vs {:?}", self.shape, b.shape);
        let m = b.cols();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * m..(i + 1) * m];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b.data[kk * m..(kk + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Array { shape: vec![n, m], data: out }
    }

    /// C = A · Bᵀ, [n,m]·[k,m]ᵀ → [n,k].
    pub fn matmul_nt(&self, b: &Array) -> Array {
        let (n, m) = (self.rows(), self.cols());
        assert_eq!(m, b.cols(), "matmul_nt inner dims: {:?} vs {:?}", self.shape, b.shape);
        let k = b.rows();
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let arow = &self.data[i * m..(i + 1) * m];
            for kk in 0..k {
                let brow = &b.data[kk * m..(kk + 1) * m];
                out[i * k + kk] = arow.iter().zip(brow).map(|(&a, &b)| a * b).sum();
            }
        }
        Array { shape: vec![n, k], data: out }
    }

    /// C = Aᵀ · B, [n,k]ᵀ·[n,m] → [k,m].
    pub fn matmul_tn(&self, b: &Array) -> Array {
        let (n, k) = (self.rows(), self.cols());
        assert_eq!(n, b.rows(), "matmul_tn inner dims: {:?} vs {:?}", self.shape, b.shape);
        let m = b.cols();
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            let brow = &b.data[i * m..(i + 1) * m];
            for (kk, &av) in arow.iter().enumerate() {
                let orow = &mut out[kk * m..(kk + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Array { shape: vec![k, m], data: out }
    }
}

/// How the second operand of an elementwise op lines up with the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Identical shapes.
    Same,
    /// b is one row (or a vector) repeated down the rows of a.
    Row,
    /// b is one column repeated across the columns of a.
    Col,
    /// b is a single value.
    Scalar,
}

/// Classify how `b` broadcasts against `a`, panicking on incompatible shapes.
pub fn broadcast_kind(a: &Array, b: &Array) -> Broadcast {
    if a.shape == b.shape {
        return Broadcast::Same;
    }
    if b.len() == 1 {
        return Broadcast::Scalar;
    }
    if a.ndim() == 2 {
        if (b.ndim() == 1 && b.len() == a.cols()) || (b.ndim() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
            return Broadcast::Row;
        }
        if b.ndim() == 2 && b.cols() == 1 && b.rows() == a.rows() {
            return Broadcast::Col;
        }
    }
    panic!("incompatible broadcast: {:?} vs {:?}", a.shape, b.shape);
}

/// Elementwise combine with `b` broadcast against `a`.
pub fn broadcast_zip(a: &Array, b: &Array, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Array {
    let mut out = Array::zeros(a.shape());
    let (rows, cols) = (a.rows(), a.cols());
    let bs = b.as_slice();
    for r in 0..rows {
        for c in 0..cols {
            let av = a.as_slice()[r * cols + c];
            let bv = match kind {
                Broadcast::Same => bs[r * cols + c],
                Broadcast::Row => bs[c],
                Broadcast::Col => bs[r],
                Broadcast::Scalar => bs[0],
            };
            out.as_mut_slice()[r * cols + c] = f(av, bv);
        }
    }
    out
}

/// Sum `grad` (shaped like the broadcast output) back down to the shape of `b`.
pub fn reduce_to(grad: &Array, b_shape: &[usize], kind: Broadcast) -> Array {
    match kind {
        Broadcast::Same => grad.reshaped(b_shape),
        Broadcast::Scalar => Array::from_vec(b_shape, vec![grad.sum()]),
        Broadcast::Row => {
            let (rows, cols) = (grad.rows(), grad.cols());
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c] += grad.as_slice()[r * cols + c];
                }
            }
            Array::from_vec(b_shape, out)
        }
        Broadcast::Col => {
            let (rows, cols) = (grad.rows(), grad.cols());
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                for c in 0..cols {
                    out[r] += grad.as_slice()[r * cols + c];
                }
            }
            Array::from_vec(b_shape, out)
        }
    }
}
