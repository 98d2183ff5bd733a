//! Fully connected parameter network with batch normalization.
//!
//! Everything is hand-written and f64: forward and reverse passes, the Adam
//! update, and a text checkpoint format. Matrix products go through
//! `matrixmultiply`.

mod activation;
mod adam;
mod checkpoint;
mod mlp;
mod pipeline;

pub use activation::{lrelu, lrelu_grad, sigmoid, sigplus};
pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{
    desk_width, ForwardCache, Gradients, Mlp, MlpConfig, Mode, OutputActivation, BN_EPS, BN_MOMENTUM,
};
pub use pipeline::{
    build_input_features, features_matrix, output_objective, pipeline_gradient, recover_from_output, BatchObjective,
    Variant,
};

/// Dense row-major real matrix; rows are batch samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` over raw strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `X W^T` for `X: n x in`, `W: out x in`.
pub(crate) fn matmul_abt(x: &Matrix, w: &[f64], out_dim: usize) -> Matrix {
    let mut out = Matrix::zeros(x.rows, out_dim);
    gemm(x.rows, x.cols, out_dim, &x.data, (x.cols, 1), w, (1, x.cols), 0.0, &mut out.data);
    out
}

/// `D W` for `D: n x out`, `W: out x in`.
pub(crate) fn matmul_ab(d: &Matrix, w: &[f64], in_dim: usize) -> Matrix {
    let mut out = Matrix::zeros(d.rows, in_dim);
    gemm(d.rows, d.cols, in_dim, &d.data, (d.cols, 1), w, (in_dim, 1), 0.0, &mut out.data);
    out
}

/// `D^T X` for `D: n x out`, `X: n x in`, giving `out x in`.
pub(crate) fn matmul_atb(d: &Matrix, x: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; d.cols * x.cols];
    gemm(d.cols, d.rows, x.cols, &d.data, (1, d.cols), &x.data, (x.cols, 1), 0.0, &mut out);
    out
}
