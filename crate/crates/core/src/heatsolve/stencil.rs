//! Seven-point conductance stencil on a structured grid.
//!
//! Rows are `diag_i x_i - sum_nb g_nb x_nb` with
//! `diag_i = sum_nb g_nb + g_bottom + g_top + extra_i`. Boundary conductances
//! tie the bottom and top layers to the (zero) sink temperature; `extra` holds
//! `C/dt` for implicit time steps.

#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub dims: [usize; 3],
    /// Conductance from cell to its +x neighbour (zero on the last plane).
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub gz: Vec<f64>,
    /// Sink conductance of bottom-layer cells, `nx*ny`.
    pub gbot: Vec<f64>,
    /// Sink conductance of top-layer cells, `nx*ny`.
    pub gtop: Vec<f64>,
    pub extra: Vec<f64>,
    pub diag: Vec<f64>,
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn refresh_diag(&mut self) {
        let [nx, ny, nz] = self.dims;
        let sy = nx;
        let sz = nx * ny;
        let n = self.len();
        let mut diag = self.extra.clone();
        for idx in 0..n {
            let g = self.gx[idx];
            if g != 0.0 {
                diag[idx] += g;
                diag[idx + 1] += g;
            }
            let g = self.gy[idx];
            if g != 0.0 {
                diag[idx] += g;
                diag[idx + sy] += g;
            }
            let g = self.gz[idx];
            if g != 0.0 {
                diag[idx] += g;
                diag[idx + sz] += g;
            }
        }
        for c in 0..sz {
            diag[c] += self.gbot[c];
            diag[c + (nz - 1) * sz] += self.gtop[c];
        }
        self.diag = diag;
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let [nx, ny, _] = self.dims;
        let sy = nx;
        let sz = nx * ny;
        let n = self.len();
        for idx in 0..n {
            y[idx] = self.diag[idx] * x[idx];
        }
        for idx in 0..n {
            let g = self.gx[idx];
            if g != 0.0 {
                y[idx] -= g * x[idx + 1];
                y[idx + 1] -= g * x[idx];
            }
        }
        for idx in 0..n.saturating_sub(sy) {
            let g = self.gy[idx];
            if g != 0.0 {
                y[idx] -= g * x[idx + sy];
                y[idx + sy] -= g * x[idx];
            }
        }
        for idx in 0..n.saturating_sub(sz) {
            let g = self.gz[idx];
            if g != 0.0 {
                y[idx] -= g * x[idx + sz];
                y[idx + sz] -= g * x[idx];
            }
        }
    }

    /// One Gauss-Seidel sweep on `A x = b`, forward or backward in index order.
    pub fn gauss_seidel(&self, b: &[f64], x: &mut [f64], forward: bool) {
        let [nx, ny, nz] = self.dims;
        let sy = nx;
        let sz = nx * ny;
        let relax = |i: usize, j: usize, k: usize, x: &mut [f64]| {
            let idx = i + nx * (j + ny * k);
            let mut s = b[idx];
            if i + 1 < nx {
                s += self.gx[idx] * x[idx + 1];
            }
            if i > 0 {
                s += self.gx[idx - 1] * x[idx - 1];
            }
            if j + 1 < ny {
                s += self.gy[idx] * x[idx + sy];
            }
            if j > 0 {
                s += self.gy[idx - sy] * x[idx - sy];
            }
            if k + 1 < nz {
                s += self.gz[idx] * x[idx + sz];
            }
            if k > 0 {
                s += self.gz[idx - sz] * x[idx - sz];
            }
            x[idx] = s / self.diag[idx];
        };
        if forward {
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        relax(i, j, k, x);
                    }
                }
            }
        } else {
            for k in (0..nz).rev() {
                for j in (0..ny).rev() {
                    for i in (0..nx).rev() {
                        relax(i, j, k, x);
                    }
                }
            }
        }
    }

    /// Dims of the 2x2x2-aggregated grid.
    pub fn coarse_dims(&self) -> [usize; 3] {
        self.dims.map(|d| d.div_ceil(2))
    }

    /// Galerkin coarse operator for piecewise-constant aggregation over 2x2x2 blocks.
    pub fn coarsen(&self) -> Stencil {
        let [nx, ny, nz] = self.dims;
        let cd = self.coarse_dims();
        let [cx, cy, cz] = cd;
        let cn = cx * cy * cz;
        let mut c = Stencil {
            dims: cd,
            gx: vec![0.0; cn],
            gy: vec![0.0; cn],
            gz: vec![0.0; cn],
            gbot: vec![0.0; cx * cy],
            gtop: vec![0.0; cx * cy],
            extra: vec![0.0; cn],
            diag: Vec::new(),
        };
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * (j + ny * k);
                    let ci = i / 2 + cx * (j / 2 + cy * (k / 2));
                    c.extra[ci] += self.extra[idx];
                    // Faces crossing aggregate boundaries survive.
                    if i + 1 < nx && i.div_ceil(2) != i / 2 {
                        c.gx[ci] += self.gx[idx];
                    }
                    if j + 1 < ny && j.div_ceil(2) != j / 2 {
                        c.gy[ci] += self.gy[idx];
                    }
                    if k + 1 < nz && k.div_ceil(2) != k / 2 {
                        c.gz[ci] += self.gz[idx];
                    }
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let f = i + nx * j;
                let cf = i / 2 + cx * (j / 2);
                c.gbot[cf] += self.gbot[f];
                c.gtop[cf] += self.gtop[f];
            }
        }
        c.refresh_diag();
        c
    }

    /// Sum fine values into their aggregates.
    pub fn restrict(&self, fine: &[f64], coarse: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let [cx, cy, _] = self.coarse_dims();
        coarse.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..nz {
            for j in 0..ny {
                let row = nx * (j + ny * k);
                let crow = cx * (j / 2 + cy * (k / 2));
                for i in 0..nx {
                    coarse[crow + i / 2] += fine[row + i];
                }
            }
        }
    }

    /// Add each aggregate value to its fine cells.
    pub fn prolong_add(&self, coarse: &[f64], fine: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let [cx, cy, _] = self.coarse_dims();
        for k in 0..nz {
            for j in 0..ny {
                let row = nx * (j + ny * k);
                let crow = cx * (j / 2 + cy * (k / 2));
                for i in 0..nx {
                    fine[row + i] += coarse[crow + i / 2];
                }
            }
        }
    }
}
