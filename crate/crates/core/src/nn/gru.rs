//! Two-gate (update/reset) recurrent cell used by the bidirectional layer.
//!
//! Gate blocks are packed column-wise as `[update | reset | candidate]`:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! n  = tanh(x·Wn + (r∘h)·Un + bn)
//! h' = (1 − z)∘n + z∘h
//! ```

use super::tensor::{mat_vec_acc, sigmoid, vec_mat_acc, Real, Tensor2};

#[derive(Debug, Clone, PartialEq)]
pub struct GatedCell<T = f32> {
    /// `d_in × 3h`
    pub w: Tensor2<T>,
    /// `h × 3h`
    pub u: Tensor2<T>,
    /// `3h`
    pub b: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct CellStep<T> {
    position: usize,
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct CellTrace<T> {
    pub(crate) steps: Vec<CellStep<T>>,
}

pub(crate) struct CellGrads<'a, T> {
    pub w: &'a mut [T],
    pub u: &'a mut [T],
    pub b: &'a mut [T],
}

impl<T: Real> GatedCell<T> {
    pub fn hidden(&self) -> usize {
        self.u.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    /// Runs the cell over `x` (one row per time step), left to right or
    /// right to left. Writes hidden states into `out` starting at column
    /// `col_offset`.
    pub(crate) fn run(
        &self,
        x: &Tensor2<T>,
        reverse: bool,
        out: &mut Tensor2<T>,
        col_offset: usize,
    ) -> CellTrace<T> {
        let h = self.hidden();
        let steps_len = x.rows();
        let mut h_prev = vec![T::zero(); h];
        let mut steps = Vec::with_capacity(steps_len);
        let mut ax = vec![T::zero(); 3 * h];
        let mut ah = vec![T::zero(); 3 * h];
        let mut arh = vec![T::zero(); 3 * h];
        for s in 0..steps_len {
            let t = if reverse { steps_len - 1 - s } else { s };
            ax.copy_from_slice(&self.b);
            vec_mat_acc(x.row(t), &self.w, &mut ax);
            ah.iter_mut().for_each(|v| *v = T::zero());
            vec_mat_acc(&h_prev, &self.u, &mut ah);

            let z: Vec<T> = (0..h).map(|j| sigmoid(ax[j] + ah[j])).collect();
            let r: Vec<T> = (0..h).map(|j| sigmoid(ax[h + j] + ah[h + j])).collect();
            let rh: Vec<T> = r.iter().zip(&h_prev).map(|(&a, &b)| a * b).collect();
            arh.iter_mut().for_each(|v| *v = T::zero());
            vec_mat_acc(&rh, &self.u, &mut arh);
            let n: Vec<T> = (0..h).map(|j| (ax[2 * h + j] + arh[2 * h + j]).tanh()).collect();
            let h_new: Vec<T> = (0..h)
                .map(|j| (T::one() - z[j]) * n[j] + z[j] * h_prev[j])
                .collect();

            out.row_mut(t)[col_offset..col_offset + h].copy_from_slice(&h_new);
            steps.push(CellStep {
                position: t,
                h_prev: std::mem::replace(&mut h_prev, h_new),
                z,
                r,
                n,
            });
        }
        CellTrace { steps }
    }

    /// Backpropagation through time. `upstream` holds the gradient of every
    /// output position (columns `col_offset..col_offset+h`); input gradients
    /// are accumulated into `dx` when given.
    pub(crate) fn backward(
        &self,
        x: &Tensor2<T>,
        trace: &CellTrace<T>,
        upstream: &Tensor2<T>,
        col_offset: usize,
        grads: CellGrads<'_, T>,
        mut dx: Option<&mut Tensor2<T>>,
    ) {
        let h = self.hidden();
        let three = 3 * h;
        let mut carry = vec![T::zero(); h];
        let mut da = vec![T::zero(); three];
        for step in trace.steps.iter().rev() {
            let t = step.position;
            let dh: Vec<T> = upstream.row(t)[col_offset..col_offset + h]
                .iter()
                .zip(&carry)
                .map(|(&a, &b)| a + b)
                .collect();

            let mut dh_prev: Vec<T> = (0..h).map(|j| dh[j] * step.z[j]).collect();
            for j in 0..h {
                let dn = dh[j] * (T::one() - step.z[j]);
                let dz = dh[j] * (step.h_prev[j] - step.n[j]);
                da[2 * h + j] = dn * (T::one() - step.n[j] * step.n[j]);
                da[j] = dz * step.z[j] * (T::one() - step.z[j]);
            }
            // d(r∘h) = Un · da_n
            let mut drh = vec![T::zero(); h];
            for (i, d) in drh.iter_mut().enumerate() {
                let row = &self.u.row(i)[2 * h..];
                let mut acc = T::zero();
                for (&w, &g) in row.iter().zip(&da[2 * h..]) {
                    acc += w * g;
                }
                *d = acc;
            }
            for j in 0..h {
                let dr = drh[j] * step.h_prev[j];
                da[h + j] = dr * step.r[j] * (T::one() - step.r[j]);
                dh_prev[j] += drh[j] * step.r[j];
            }

            let xt = x.row(t);
            for (i, &xi) in xt.iter().enumerate() {
                for (g, &d) in grads.w[i * three..(i + 1) * three].iter_mut().zip(&da) {
                    *g += xi * d;
                }
            }
            for (g, &d) in grads.b.iter_mut().zip(&da) {
                *g += d;
            }
            for i in 0..h {
                let hp = step.h_prev[i];
                let rh = step.r[i] * hp;
                let row = &mut grads.u[i * three..(i + 1) * three];
                for j in 0..2 * h {
                    row[j] += hp * da[j];
                }
                for j in 2 * h..three {
                    row[j] += rh * da[j];
                }
            }
            // dh_prev += U[:, z|r] · da[z|r]
            for (i, d) in dh_prev.iter_mut().enumerate() {
                let row = &self.u.row(i)[..2 * h];
                let mut acc = T::zero();
                for (&w, &g) in row.iter().zip(&da[..2 * h]) {
                    acc += w * g;
                }
                *d += acc;
            }
            if let Some(dx) = dx.as_deref_mut() {
                mat_vec_acc(&self.w, &da, dx.row_mut(t));
            }
            carry = dh_prev;
        }
    }
}
