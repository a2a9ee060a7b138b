//! Reference computations that avoid the closed forms used in production.
//!
//! Everything here is deliberately slow: metric derivatives come from central
//! differences of the assembled metric matrix, adjoints from assembling the
//! pairing over a full basis, and metric inverses from Cholesky solves. The
//! test suites compare the analytic code against these.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{sym_eig, sym_part, Mat};
use crate::manifold::{ManifoldSpec, Metric, PointWorkspace, TangentVector};
use crate::second_order::Objective;

/// Orthonormal basis `X_⊥` of the orthogonal complement of `span(X)`.
#[derive(Debug, Clone)]
pub struct NullComplement {
    pub xperp: Mat,
}

/// Trailing `n − p` left singular vectors of `X`.
pub fn null_complement(ws: &PointWorkspace) -> NullComplement {
    let x = ws.x();
    let (n, p) = x.shape();
    let mut padded = Mat::zeros(n, n);
    padded.view_mut((0, 0), (n, p)).copy_from(x);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    NullComplement {
        xperp: u.columns(p, n - p).into_owned(),
    }
}

fn assembled_metric_cholesky(spec: &ManifoldSpec, x: &Mat) -> Result<(Mat, Cholesky<f64, Dyn>)> {
    let g = spec.metric_matrix_at(x)?;
    let chol = Cholesky::new(g.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        eigenvalue: sym_eig(&g).map(|e| e.eigenvalues[0]).unwrap_or(f64::NAN),
    })?;
    Ok((g, chol))
}

/// Frobenius residual of `XJXᵀA + A⁻¹X_⊥(X_⊥ᵀA⁻¹X_⊥)⁻¹X_⊥ᵀ = I`.
pub fn check_identity_eq(ws: &PointWorkspace, comp: &NullComplement) -> Result<f64> {
    let spec = ws.spec();
    let n = spec.n();
    let xp = &comp.xperp;
    let ainv_xp = spec.a_inv() * xp;
    let middle = xp.transpose() * &ainv_xp;
    let middle_inv = middle
        .try_inverse()
        .ok_or(Error::Singular("X_perp^T A^-1 X_perp"))?;
    let lhs = ws.x() * spec.j() * ws.ax().transpose() + &ainv_xp * middle_inv * xp.transpose();
    Ok((lhs - Mat::identity(n, n)).norm())
}

/// Metric inverse written with an explicit complement basis:
///
/// ```text
/// (G¹)⁻¹ = ρXXᵀ + A⁻¹X_⊥(X_⊥ᵀX_⊥)⁻¹X_⊥ᵀA⁻¹
/// (G²)⁻¹ = ρXXᵀ + A⁻¹X_⊥ N⁻¹ X_⊥ᵀX_⊥ N⁻¹ X_⊥ᵀA⁻¹,  N = X_⊥ᵀA⁻¹X_⊥
/// ```
pub fn complement_metric_inverse(ws: &PointWorkspace, comp: &NullComplement) -> Result<Mat> {
    let spec = ws.spec();
    let x = ws.x();
    let xp = &comp.xperp;
    let a_inv = spec.a_inv();
    let base = x * x.transpose() * spec.rho();
    let rest = match spec.metric() {
        Metric::Canonical1 => {
            let gram_inv = (xp.transpose() * xp)
                .try_inverse()
                .ok_or(Error::Singular("X_perp^T X_perp"))?;
            a_inv * xp * gram_inv * xp.transpose() * a_inv
        }
        Metric::Canonical2 => {
            let n_inv = (xp.transpose() * a_inv * xp)
                .try_inverse()
                .ok_or(Error::Singular("X_perp^T A^-1 X_perp"))?;
            a_inv * xp * &n_inv * (xp.transpose() * xp) * &n_inv * xp.transpose() * a_inv
        }
        Metric::General(_) => return Err(Error::UnsupportedMetric),
    };
    Ok(base + rest)
}

/// Central difference `(G(X+hζ) − G(X−hζ)) / 2h` of the metric formula.
pub fn fd_dmetric(spec: &ManifoldSpec, x: &Mat, zeta: &Mat, h: f64) -> Result<Mat> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let plus = spec.metric_matrix_at(&(x + zeta * h))?;
    let minus = spec.metric_matrix_at(&(x - zeta * h))?;
    Ok((plus - minus) / (2.0 * h))
}

fn unit(n: usize, p: usize, a: usize, b: usize) -> Mat {
    let mut e = Mat::zeros(n, p);
    e[(a, b)] = 1.0;
    e
}

/// `DG*[H]` by assembling `Θ_ab = tr(H · DG[e_ab])` over every unit direction
/// (with `DG` from [`fd_dmetric`]) and solving `G u = Θ`.
pub fn fd_adjoint_assembly(ws: &PointWorkspace, h_mat: &Mat, h: f64) -> Result<Mat> {
    let spec = ws.spec();
    let (n, p) = (spec.n(), spec.p());
    let x = ws.x();
    let mut theta = Mat::zeros(n, p);
    for b in 0..p {
        for a in 0..n {
            let dg = fd_dmetric(spec, x, &unit(n, p, a, b), h)?;
            theta[(a, b)] = (h_mat * dg).trace();
        }
    }
    let (_, chol) = assembled_metric_cholesky(spec, x)?;
    Ok(chol.solve(&theta))
}

/// Koszul Christoffel function with every ingredient computed numerically.
pub fn fd_christoffel(ws: &PointWorkspace, xi: &Mat, eta: &Mat, h: f64) -> Result<Mat> {
    let spec = ws.spec();
    let x = ws.x();
    let (_, chol) = assembled_metric_cholesky(spec, x)?;
    let dg_xi = fd_dmetric(spec, x, xi, h)?;
    let dg_eta = fd_dmetric(spec, x, eta, h)?;
    let first = chol.solve(&(dg_xi * eta + dg_eta * xi));
    let second = fd_adjoint_assembly(ws, &sym_part(&(xi * eta.transpose())), h)?;
    Ok((first - second) * 0.5)
}

/// Smooth extension of the Riemannian gradient field to the open set:
/// `V(Y) = G_Y⁻¹ egrad(Y) − YJ sym(YᵀA G_Y⁻¹ egrad(Y))`, with `G_Y` assembled.
fn extended_gradient(spec: &ManifoldSpec, objective: &dyn Objective, y: &Mat) -> Result<Mat> {
    let (_, chol) = assembled_metric_cholesky(spec, y)?;
    let ginv_e = chol.solve(&objective.egrad(y));
    let corr = sym_part(&(y.transpose() * spec.a() * &ginv_e));
    Ok(ginv_e - y * spec.j() * corr)
}

/// Riemannian Hessian `P(DV[ξ] + Γ(ξ, V))` from a central difference of the
/// extended gradient field and the numeric Koszul Christoffel function,
/// projected through the Lyapunov route with the assembled metric.
pub fn oracle_hessian(
    ws: &PointWorkspace,
    objective: &dyn Objective,
    xi: &TangentVector,
    h: f64,
) -> Result<TangentVector> {
    let spec = ws.spec();
    if !spec.metric().is_canonical() {
        return Err(Error::UnsupportedMetric);
    }
    let x = ws.x();
    let xi_m = xi.mat();
    let grad = extended_gradient(spec, objective, x)?;
    let dv = (extended_gradient(spec, objective, &(x + xi_m * h))?
        - extended_gradient(spec, objective, &(x - xi_m * h))?)
        / (2.0 * h);
    let gamma = fd_christoffel(ws, xi_m, &grad, h)?;
    let metric_at = |y: &Mat| spec.metric_matrix_at(y).expect("feasible point lies in the open set");
    ws.project_lyapunov(&(dv + gamma), &metric_at)
}

/// Christoffel function in its first simplified form, before the lemma reductions:
///
/// ```text
/// Γ¹ = G⁻¹(ρ⁻¹AB′ − 2C)
/// Γ² = G⁻¹(ρ⁻¹AB′ − D + X M_X E),  D in its unreduced form
/// ```
pub fn christoffel_unsimplified(ws: &PointWorkspace, xi: &Mat, eta: &Mat) -> Result<Mat> {
    let spec = ws.spec();
    let x = ws.x();
    let a = spec.a();
    let sym_xi_eta = sym_part(&(xi * eta.transpose()));
    let b_prime = sym_part(&(x * xi.transpose())) * a * eta + sym_part(&(x * eta.transpose())) * a * xi
        - &sym_xi_eta * a * x;
    let (_, chol) = assembled_metric_cholesky(spec, x)?;
    let inner = match spec.metric() {
        Metric::Canonical1 => {
            let s = ws.s();
            let j = spec.j();
            let c = sym_part(&(a * sym_part(&(x * j * xi.transpose())) * a * s)) * eta
                + sym_part(&(a * sym_part(&(x * j * eta.transpose())) * a * s)) * xi
                - sym_part(&(a * s * &sym_xi_eta * a)) * x * j;
            a * &b_prime / spec.rho() - c * 2.0
        }
        Metric::Canonical2 => {
            let mx = ws.mx();
            let d = d_direct(ws, xi, eta);
            let mxt_xi = mx * (x.transpose() * xi);
            let mxt_eta = mx * (x.transpose() * eta);
            let e = sym_part(&(xi.transpose() * x)) * mxt_eta + sym_part(&(eta.transpose() * x)) * mxt_xi
                - x.transpose() * &sym_xi_eta * x * mx;
            a * &b_prime / spec.rho() - d + x * mx * e
        }
        Metric::General(_) => return Err(Error::UnsupportedMetric),
    };
    Ok(chol.solve(&inner))
}

/// `sym(XM_Xξᵀ)η + sym(XM_Xηᵀ)ξ − sym(ξηᵀ)XM_X` with the `n×n` intermediates.
pub fn d_direct(ws: &PointWorkspace, xi: &Mat, eta: &Mat) -> Mat {
    let xm = ws.x() * ws.mx();
    sym_part(&(&xm * xi.transpose())) * eta + sym_part(&(&xm * eta.transpose())) * xi
        - sym_part(&(xi * eta.transpose())) * xm
}

/// One eigenpair of `M v = λ A v`, normalized so that `|vᵀAv| = 1`.
#[derive(Debug, Clone)]
pub struct GenEigPair {
    pub lambda: f64,
    pub vector: DVector<f64>,
}

/// Dense solver for `M v = λ A v` with `M` SPD and `A` symmetric invertible.
///
/// With `M = LLᵀ`, the pencil reduces to the symmetric problem
/// `L⁻¹AL⁻ᵀ w = μ w`, `λ = 1/μ`, `v = L⁻ᵀw`. Pairs are sorted by `λ`.
pub fn dense_generalized_eig(m: &Mat, a: &Mat) -> Result<Vec<GenEigPair>> {
    let n = m.nrows();
    let chol = Cholesky::new(sym_part(m)).ok_or_else(|| Error::NotPositiveDefinite {
        eigenvalue: sym_eig(&sym_part(m)).map(|e| e.eigenvalues[0]).unwrap_or(f64::NAN),
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("Cholesky factor"))?;
    let c = sym_part(&(&l_inv * a * l_inv.transpose()));
    let eig = sym_eig(&c)?;
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let mu = eig.eigenvalues[k];
        if mu.abs() < 1e-14 {
            return Err(Error::Singular("A is singular on the pencil"));
        }
        let w = eig.eigenvectors.column(k);
        let v = l_inv.transpose() * w;
        // vᵀAv = μ for unit w; rescale so that |vᵀAv| = 1
        let v = v / mu.abs().sqrt();
        pairs.push(GenEigPair {
            lambda: 1.0 / mu,
            vector: v,
        });
    }
    pairs.sort_by(|p, q| p.lambda.total_cmp(&q.lambda));
    Ok(pairs)
}

/// `sin` of the largest principal angle between the column spaces of `x` and `y`.
pub fn max_principal_angle_sin(x: &Mat, y: &Mat) -> f64 {
    let qx = x.clone().qr().q();
    let qy = y.clone().qr().q();
    let resid = &qx - &qy * (qy.transpose() * &qx);
    resid.svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{random_normal, random_orthogonal, random_spd, rng_from_seed};
    use crate::manifold::random_point;
    use crate::second_order::{dmetric, dmetric_adjoint};
    use std::sync::Arc;

    fn spec(metric: Metric, rho: f64) -> Arc<ManifoldSpec> {
        let d = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, -1.0, -2.0, -3.0, -4.0, -5.0]);
        let q = random_orthogonal(10, 1);
        let a = sym_part(&(&q * Mat::from_diagonal(&d) * q.transpose()));
        let j = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]));
        Arc::new(ManifoldSpec::new(a, j, metric, rho).unwrap())
    }

    #[test]
    fn null_complement_properties() {
        let sp = spec(Metric::Canonical1, 1.0);
        let w = random_point(&sp, 2).unwrap();
        let c = null_complement(&w);
        assert_eq!(c.xperp.shape(), (10, 6));
        assert!((w.x().transpose() * &c.xperp).norm() < 1e-12);
        assert!((c.xperp.transpose() * &c.xperp - Mat::identity(6, 6)).norm() < 1e-12);

        let square = Arc::new(
            ManifoldSpec::new(Mat::identity(3, 3), Mat::identity(3, 3), Metric::Canonical1, 1.0)
                .unwrap(),
        );
        let w = random_point(&square, 0).unwrap();
        assert_eq!(null_complement(&w).xperp.ncols(), 0);
    }

    #[test]
    fn identity_and_complement_inverses() {
        for metric in [Metric::Canonical1, Metric::Canonical2] {
            let sp = spec(metric, 1.5);
            let w = random_point(&sp, 3).unwrap();
            let c = null_complement(&w);
            assert!(check_identity_eq(&w, &c).unwrap() < 1e-9);
            let unsimplified = complement_metric_inverse(&w, &c).unwrap();
            let closed = w.metric_inverse_apply(&Mat::identity(10, 10)).unwrap();
            assert!((&unsimplified - &closed).norm() < 1e-9 * closed.norm());
        }
        let stiefel = Arc::new(
            ManifoldSpec::new(Mat::identity(5, 5), Mat::identity(2, 2), Metric::Canonical1, 1.0)
                .unwrap(),
        );
        let w = random_point(&stiefel, 1).unwrap();
        assert!(check_identity_eq(&w, &null_complement(&w)).unwrap() < 1e-12);
    }

    #[test]
    fn fd_dmetric_self_checks() {
        let sp = spec(Metric::Canonical2, 0.5);
        let w = random_point(&sp, 4).unwrap();
        assert_eq!(fd_dmetric(&sp, w.x(), &Mat::zeros(10, 4), 1e-5).unwrap().norm(), 0.0);
        // the ρ⁻¹AXXᵀA part is quadratic, so central differences are exact up to round-off
        let z = random_normal(10, 4, &mut rng_from_seed(1));
        let h = 1e-5;
        let quad = |y: &Mat| sp.a() * y * y.transpose() * sp.a() / sp.rho();
        let fd = (quad(&(w.x() + &z * h)) - quad(&(w.x() - &z * h))) / (2.0 * h);
        let ax = w.ax();
        let az = sp.a() * &z;
        let exact = (ax * az.transpose() + &az * ax.transpose()) / sp.rho();
        assert!((fd - &exact).norm() < 1e-9 * exact.norm());
        assert!(fd_dmetric(&sp, w.x(), &z, 0.0).is_err());
    }

    #[test]
    fn fd_dmetric_is_second_order() {
        for metric in [Metric::Canonical1, Metric::Canonical2] {
            let sp = spec(metric, 1.0);
            let w = random_point(&sp, 5).unwrap();
            let z = random_normal(10, 4, &mut rng_from_seed(2));
            let exact = dmetric(&w, &z).unwrap();
            let e1 = (fd_dmetric(&sp, w.x(), &z, 1e-2).unwrap() - &exact).norm();
            let e2 = (fd_dmetric(&sp, w.x(), &z, 5e-3).unwrap() - &exact).norm();
            let ratio = e1 / e2;
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn adjoint_assembly_matches_analytic() {
        for metric in [Metric::Canonical1, Metric::Canonical2] {
            let sp = spec(metric, 2.0);
            let w = random_point(&sp, 6).unwrap();
            let h = sym_part(&random_normal(10, 10, &mut rng_from_seed(3)));
            let fd = fd_adjoint_assembly(&w, &h, 1e-5).unwrap();
            let exact = dmetric_adjoint(&w, &h).unwrap();
            assert!((&fd - &exact).norm() < 1e-8 * exact.norm(), "{}", (&fd - &exact).norm() / exact.norm());
            assert_eq!(fd_adjoint_assembly(&w, &Mat::zeros(10, 10), 1e-5).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn d_forms_agree() {
        let sp = spec(Metric::Canonical2, 1.0);
        let w = random_point(&sp, 7).unwrap();
        let xi = w.random_tangent(1);
        let eta = w.random_tangent(2);
        let t = crate::second_order::christoffel_terms(&w, &xi, &eta).unwrap();
        let direct = d_direct(&w, xi.mat(), eta.mat());
        assert!((&t.d - direct).norm() < 1e-12 * t.d.norm().max(1.0));
    }

    #[test]
    fn generalized_eig_residuals() {
        let m = random_spd(6, 1);
        let pairs = dense_generalized_eig(&m, &Mat::identity(6, 6)).unwrap();
        let plain = sym_eig(&m).unwrap();
        for (p, l) in pairs.iter().zip(plain.eigenvalues.iter()) {
            assert!((p.lambda - l).abs() < 1e-12);
        }
        let sp = spec(Metric::Canonical1, 1.0);
        let m = random_spd(10, 2);
        let pairs = dense_generalized_eig(&m, sp.a()).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.lambda > 0.0).count(), 5);
        for p in &pairs {
            let r = &m * &p.vector - sp.a() * &p.vector * p.lambda;
            assert!(r.norm() < 1e-10 * p.vector.norm() * p.lambda.abs().max(1.0));
            let q = (p.vector.transpose() * sp.a() * &p.vector)[(0, 0)];
            assert!((q.abs() - 1.0).abs() < 1e-12);
            assert_eq!(q.signum(), p.lambda.signum());
        }
    }

    #[test]
    fn principal_angle_basics() {
        let q = random_orthogonal(6, 3);
        let x = q.columns(0, 2).into_owned();
        let y = &x * Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        assert!(max_principal_angle_sin(&x, &y) < 1e-14);
        let z = q.columns(2, 2).into_owned();
        assert!((max_principal_angle_sin(&x, &z) - 1.0).abs() < 1e-12);
    }

    struct Trace(Mat);
    impl Objective for Trace {
        fn value(&self, x: &Mat) -> f64 {
            (x.transpose() * &self.0 * x).trace()
        }
        fn egrad(&self, x: &Mat) -> Mat {
            &self.0 * x * 2.0
        }
        fn ehess(&self, _x: &Mat, xi: &Mat) -> Mat {
            &self.0 * xi * 2.0
        }
    }

    #[test]
    fn oracle_hessian_matches_analytic() {
        use crate::second_order::{EuclideanDerivatives, HessianOperator};
        let obj = Trace(random_spd(10, 9));
        for metric in [Metric::Canonical1, Metric::Canonical2] {
            let sp = spec(metric, 0.5);
            let w = random_point(&sp, 8).unwrap();
            let derivs = EuclideanDerivatives::from_objective(&obj, w.x());
            let hess = HessianOperator::new(&w, &derivs).unwrap();
            for seed in 0..3 {
                let xi = w.random_tangent(seed);
                let oracle = oracle_hessian(&w, &obj, &xi, 1e-5).unwrap();
                let exact = hess.apply(&xi).unwrap();
                let rel = (oracle.mat() - exact.mat()).norm() / exact.mat().norm();
                assert!(rel < 1e-6, "rel {rel}");
            }
            let z = w.zero_tangent();
            assert!(oracle_hessian(&w, &obj, &z, 1e-5).unwrap().mat().norm() < 1e-12);
        }
    }

    #[test]
    fn unsimplified_christoffel_matches_ambient() {
        for metric in [Metric::Canonical1, Metric::Canonical2] {
            let sp = spec(metric, 1.3);
            let w = random_point(&sp, 9).unwrap();
            let xi = w.random_tangent(3);
            let eta = w.random_tangent(4);
            let a = christoffel_unsimplified(&w, xi.mat(), eta.mat()).unwrap();
            let b = crate::second_order::christoffel_ambient(&w, xi.mat(), eta.mat()).unwrap();
            assert!((&a - &b).norm() < 1e-9 * b.norm());
            let fd = fd_christoffel(&w, xi.mat(), eta.mat(), 1e-5).unwrap();
            assert!((&fd - &b).norm() < 1e-6 * b.norm());
        }
    }
}
