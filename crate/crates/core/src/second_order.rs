//! Second-order geometry for the two canonical metrics.
//!
//! On the open set of full-rank `X` with invertible `XᵀAX`, the Levi-Civita
//! connection of `⟨ξ, η⟩_X = tr(ξᵀ G_X η)` is `DV[ξ] + Γ_X(ξ, η)` with the
//! Christoffel function
//!
//! ```text
//! Γ_X(ξ, η) = ½ (G_X⁻¹ (DG[ξ] η + DG[η] ξ) − DG*[sym(ξηᵀ)])
//! ```
//!
//! where `DG*` is the adjoint of `ζ ↦ DG(X)[ζ]` with respect to the metric on
//! `ℝ^{n×p}` and the trace pairing on symmetric matrices. Restricted to tangent
//! arguments the projected Christoffel term has a cheaper closed form built
//! from the auxiliary matrices collected in [`ChristoffelTerms`]; that closed
//! form is what the Hessian uses. [`christoffel_ambient`] keeps the unreduced
//! Koszul expression so both can be compared.

use crate::error::{Error, Result};
use crate::kernels::{ensure_shape, ensure_symmetric, skew_part, sym_part, Mat};
use crate::manifold::{ensure_in_ambient_set, ManifoldSpec, Metric, PointWorkspace, TangentVector};

/// Smooth objective on the ambient space, restricted to the manifold by the solvers.
pub trait Objective: Send + Sync {
    fn value(&self, x: &Mat) -> f64;
    /// Euclidean gradient of the extension at `x`.
    fn egrad(&self, x: &Mat) -> Mat;
    /// Euclidean Hessian of the extension at `x` applied to `xi`.
    fn ehess(&self, x: &Mat, xi: &Mat) -> Mat;
}

/// Euclidean gradient at a point plus the Euclidean Hessian action there.
pub struct EuclideanDerivatives<'a> {
    pub egrad: Mat,
    ehess: Box<dyn Fn(&Mat) -> Mat + Send + Sync + 'a>,
}

impl<'a> EuclideanDerivatives<'a> {
    pub fn new(egrad: Mat, ehess: impl Fn(&Mat) -> Mat + Send + Sync + 'a) -> Self {
        EuclideanDerivatives {
            egrad,
            ehess: Box::new(ehess),
        }
    }

    pub fn from_objective(objective: &'a dyn Objective, x: &Mat) -> Self {
        let at = x.clone();
        EuclideanDerivatives {
            egrad: objective.egrad(x),
            ehess: Box::new(move |xi: &Mat| objective.ehess(&at, xi)),
        }
    }

    pub fn ehess(&self, xi: &Mat) -> Mat {
        (self.ehess)(xi)
    }
}

fn require_canonical(spec: &ManifoldSpec) -> Result<()> {
    if spec.metric().is_canonical() {
        Ok(())
    } else {
        Err(Error::UnsupportedMetric)
    }
}

/// `DG(X)[ζ]` from cached pieces `AX`, `M_X`, `S_X` (valid anywhere on the open set).
fn dmetric_parts(spec: &ManifoldSpec, x: &Mat, ax: &Mat, mx: &Mat, s: &Mat, zeta: &Mat) -> Mat {
    let az = spec.a() * zeta;
    // (2/ρ) A sym(Xζᵀ) A
    let lin = (ax * az.transpose() + &az * ax.transpose()) / spec.rho();
    match spec.metric() {
        Metric::Canonical1 => {
            // T = A sym(XJζᵀ) A, then −4 sym(T S)
            let t = sym_part(&(ax * spec.j() * az.transpose()));
            let ts = &t * s;
            lin - (&ts + ts.transpose()) * 2.0
        }
        Metric::Canonical2 => {
            let xm = x * mx;
            let xmz = &xm * zeta.transpose();
            let sym_ztx = sym_part(&(zeta.transpose() * x));
            lin - (&xmz + xmz.transpose()) + &xm * sym_ztx * xm.transpose() * 2.0
        }
        Metric::General(_) => unreachable!("checked by caller"),
    }
}

/// Directional derivative `DG(X)[ζ]` of the metric matrix at a workspace point.
pub fn dmetric(ws: &PointWorkspace, zeta: &Mat) -> Result<Mat> {
    let spec = ws.spec();
    require_canonical(spec)?;
    ensure_shape(zeta, spec.n(), spec.p())?;
    Ok(dmetric_parts(spec, ws.x(), ws.ax(), ws.mx(), ws.s(), zeta))
}

/// `DG(X)[ζ]` at an arbitrary (possibly infeasible) `X` of the open set.
pub fn dmetric_at(spec: &ManifoldSpec, x: &Mat, zeta: &Mat) -> Result<Mat> {
    require_canonical(spec)?;
    ensure_shape(x, spec.n(), spec.p())?;
    ensure_shape(zeta, spec.n(), spec.p())?;
    let ax = spec.a() * x;
    let mx = ensure_in_ambient_set(x, &ax)?;
    let s = spec.a() - &ax * spec.j() * ax.transpose();
    Ok(dmetric_parts(spec, x, &ax, &mx, &s, zeta))
}

fn dmetric_adjoint_unchecked(ws: &PointWorkspace, h: &Mat) -> Mat {
    let spec = ws.spec();
    let a = spec.a();
    let ahax = a * (h * ws.ax()) * (2.0 / spec.rho());
    let inner = match spec.metric() {
        Metric::Canonical1 => {
            let asha = a * ws.s() * h * a;
            let sym_asha = sym_part(&asha);
            ahax - sym_asha * ws.x() * spec.j() * 4.0
        }
        Metric::Canonical2 => {
            let xm = ws.x() * ws.mx();
            let hxm = h * &xm;
            ahax - &hxm * 2.0 + &xm * (ws.x().transpose() * &hxm) * 2.0
        }
        Metric::General(_) => unreachable!("checked by caller"),
    };
    ws.metric_solve(&inner)
}

/// Adjoint `DG(X)*[H]`, characterized by `⟨DG*[H], ζ⟩_X = tr(H DG(X)[ζ])`.
pub fn dmetric_adjoint(ws: &PointWorkspace, h: &Mat) -> Result<Mat> {
    let spec = ws.spec();
    require_canonical(spec)?;
    ensure_shape(h, spec.n(), spec.n())?;
    ensure_symmetric(h)?;
    Ok(dmetric_adjoint_unchecked(ws, &sym_part(h)))
}

fn christoffel_ambient_unchecked(ws: &PointWorkspace, xi: &Mat, eta: &Mat) -> Mat {
    let spec = ws.spec();
    let dg_xi = dmetric_parts(spec, ws.x(), ws.ax(), ws.mx(), ws.s(), xi);
    let dg_eta = dmetric_parts(spec, ws.x(), ws.ax(), ws.mx(), ws.s(), eta);
    let first = ws.metric_solve(&(dg_xi * eta + dg_eta * xi));
    let second = dmetric_adjoint_unchecked(ws, &sym_part(&(xi * eta.transpose())));
    (first - second) * 0.5
}

/// Ambient Christoffel function `Γ_X(ξ, η)` for arbitrary `n×p` arguments.
pub fn christoffel_ambient(ws: &PointWorkspace, xi: &Mat, eta: &Mat) -> Result<Mat> {
    let spec = ws.spec();
    require_canonical(spec)?;
    ensure_shape(xi, spec.n(), spec.p())?;
    ensure_shape(eta, spec.n(), spec.p())?;
    Ok(christoffel_ambient_unchecked(ws, xi, eta))
}

/// Auxiliary matrices of the reduced Christoffel formulas for tangent `ξ, η`.
#[derive(Debug, Clone)]
pub struct ChristoffelTerms {
    /// `sym(Xξᵀ)Aη + sym(Xηᵀ)Aξ − sym(ξηᵀ)AX`
    pub b_prime: Mat,
    /// `ξ XᵀAη + η XᵀAξ`
    pub b: Mat,
    /// `sym(A sym(XJξᵀ) A S_X) η + sym(A sym(XJηᵀ) A S_X) ξ − sym(A S_X sym(ξηᵀ) A) XJ`
    pub c: Mat,
    /// `X M_X sym(ξᵀη) + ξ skew(M_X Xᵀη) + η skew(M_X Xᵀξ)`
    pub d: Mat,
    /// `sym(ξᵀX) M_X Xᵀη + sym(ηᵀX) M_X Xᵀξ − Xᵀ sym(ξηᵀ) X M_X`
    pub e: Mat,
    /// `sym(ξᵀ Π_X η)`
    pub sym_pi: Mat,
    /// `XᵀAξ` (skew-symmetric)
    pub omega_xi: Mat,
    /// `XᵀAη` (skew-symmetric)
    pub omega_eta: Mat,
}

pub(crate) fn christoffel_terms_mat(ws: &PointWorkspace, xi: &Mat, eta: &Mat) -> ChristoffelTerms {
    let spec = ws.spec();
    let a = spec.a();
    let j = spec.j();
    let x = ws.x();
    let ax = ws.ax();
    let mx = ws.mx();
    let s = ws.s();

    let a_xi = a * xi;
    let a_eta = a * eta;
    let omega_xi = ax.transpose() * xi;
    let omega_eta = ax.transpose() * eta;
    let sym_xi_eta = sym_part(&(xi * eta.transpose()));

    let b_prime = sym_part(&(x * xi.transpose())) * &a_eta + sym_part(&(x * eta.transpose())) * &a_xi
        - &sym_xi_eta * ax;
    let b = xi * &omega_eta + eta * &omega_xi;

    // A sym(XJζᵀ) A = sym(AX J (Aζ)ᵀ)
    let axj = ax * j;
    let t_xi = sym_part(&(&axj * a_xi.transpose()));
    let t_eta = sym_part(&(&axj * a_eta.transpose()));
    let c = sym_part(&(t_xi * s)) * eta + sym_part(&(t_eta * s)) * xi
        - sym_part(&(a * s * &sym_xi_eta * a)) * x * j;

    let mxt_xi = mx * (x.transpose() * xi);
    let mxt_eta = mx * (x.transpose() * eta);
    let d = x * mx * sym_part(&(xi.transpose() * eta)) + xi * skew_part(&mxt_eta) + eta * skew_part(&mxt_xi);
    let e = sym_part(&(xi.transpose() * x)) * &mxt_eta + sym_part(&(eta.transpose() * x)) * &mxt_xi
        - x.transpose() * &sym_xi_eta * x * mx;
    let sym_pi = sym_part(&(xi.transpose() * ws.pi() * eta));

    ChristoffelTerms {
        b_prime,
        b,
        c,
        d,
        e,
        sym_pi,
        omega_xi,
        omega_eta,
    }
}

/// Computes the [`ChristoffelTerms`] for two tangent vectors at `ws`.
pub fn christoffel_terms(
    ws: &PointWorkspace,
    xi: &TangentVector,
    eta: &TangentVector,
) -> Result<ChristoffelTerms> {
    ws.check_anchor(xi)?;
    ws.check_anchor(eta)?;
    Ok(christoffel_terms_mat(ws, xi.mat(), eta.mat()))
}

pub(crate) fn christoffel_projected_mat(ws: &PointWorkspace, xi: &Mat, eta: &Mat) -> Mat {
    let spec = ws.spec();
    let rho = spec.rho();
    let a_inv = spec.a_inv();
    let x = ws.x();
    let t = christoffel_terms_mat(ws, xi, eta);
    let sym_oo = sym_part(&(&t.omega_xi * &t.omega_eta));
    match spec.metric() {
        Metric::Canonical1 => {
            let normal_part = a_inv * (ws.pi() * (&t.b / rho - a_inv * &t.c * 2.0));
            let frame = x * (-(x.transpose() * &t.c) * rho + sym_oo) * 2.0;
            normal_part + ws.project_closed_form_mat(&frame)
        }
        Metric::Canonical2 => {
            let inner = ws.s() * &t.b / rho - &t.d + ws.ax() * spec.j() * &t.sym_pi;
            let normal_part = a_inv * (ws.s() * inner);
            let frame = x * (-&t.sym_pi * rho + sym_oo * 2.0);
            normal_part + ws.project_closed_form_mat(&frame)
        }
        Metric::General(_) => unreachable!("checked by caller"),
    }
}

/// `P_X(Γ_X(ξ, η))` for tangent `ξ, η`, via the reduced closed forms.
pub fn christoffel_projected(
    ws: &PointWorkspace,
    xi: &TangentVector,
    eta: &TangentVector,
) -> Result<TangentVector> {
    require_canonical(ws.spec())?;
    ws.check_anchor(xi)?;
    ws.check_anchor(eta)?;
    Ok(ws.wrap(christoffel_projected_mat(ws, xi.mat(), eta.mat())))
}

pub(crate) fn riemannian_gradient_mat(ws: &PointWorkspace, egrad: &Mat) -> Mat {
    let spec = ws.spec();
    if spec.metric().is_canonical() {
        // XᵀA G⁻¹ K = ρ J Xᵀ K for both canonical metrics
        let ginv = ws.metric_solve(egrad);
        let inner = sym_part(&(spec.j() * (ws.x().transpose() * egrad))) * spec.rho();
        ginv - ws.x() * (spec.j() * inner)
    } else {
        // G⁻¹ egrad − G⁻¹AX U_f with the Lyapunov solve hidden in the projection
        ws.project_mat(&ws.metric_solve(egrad))
    }
}

/// Riemannian gradient from the Euclidean gradient of an extension.
pub fn riemannian_gradient(ws: &PointWorkspace, egrad: &Mat) -> Result<TangentVector> {
    ensure_shape(egrad, ws.spec().n(), ws.spec().p())?;
    Ok(ws.wrap(riemannian_gradient_mat(ws, egrad)))
}

/// Riemannian Hessian at a fixed point, with the ξ-independent pieces
/// (Riemannian gradient, `G⁻¹ egrad`, `ρ sym(JXᵀ egrad)`) computed once.
pub struct HessianOperator<'w, 'd> {
    ws: &'w PointWorkspace,
    derivs: &'d EuclideanDerivatives<'d>,
    grad: Mat,
    ginv_egrad: Mat,
    rho_sym: Mat,
}

impl<'w, 'd> HessianOperator<'w, 'd> {
    pub fn new(ws: &'w PointWorkspace, derivs: &'d EuclideanDerivatives<'d>) -> Result<Self> {
        let spec = ws.spec();
        require_canonical(spec)?;
        ensure_shape(&derivs.egrad, spec.n(), spec.p())?;
        let grad = riemannian_gradient_mat(ws, &derivs.egrad);
        let ginv_egrad = ws.metric_solve(&derivs.egrad);
        let rho_sym = sym_part(&(spec.j() * (ws.x().transpose() * &derivs.egrad))) * spec.rho();
        Ok(HessianOperator {
            ws,
            derivs,
            grad,
            ginv_egrad,
            rho_sym,
        })
    }

    pub fn workspace(&self) -> &PointWorkspace {
        self.ws
    }

    pub fn gradient(&self) -> &Mat {
        &self.grad
    }

    /// `−G⁻¹ DG[ξ] G⁻¹ egrad + G⁻¹ ehess[ξ] − ρ ξ J sym(JXᵀ egrad)`, before projection.
    fn connection_free_part(&self, xi: &Mat) -> Mat {
        let ws = self.ws;
        let spec = ws.spec();
        let dg = dmetric_parts(spec, ws.x(), ws.ax(), ws.mx(), ws.s(), xi);
        let v = self.derivs.ehess(xi) - dg * &self.ginv_egrad;
        ws.metric_solve(&v) - xi * (spec.j() * &self.rho_sym)
    }

    /// Production path: reduced projected Christoffel term plus the projected remainder.
    pub fn apply_mat(&self, xi: &Mat) -> Mat {
        let ws = self.ws;
        christoffel_projected_mat(ws, xi, &self.grad)
            + ws.project_closed_form_mat(&self.connection_free_part(xi))
    }

    /// Unreduced assembly `P(… + Γ_X(ξ, grad f))` using the ambient Koszul Christoffel function.
    pub fn apply_general_mat(&self, xi: &Mat) -> Mat {
        let ws = self.ws;
        let gamma = christoffel_ambient_unchecked(ws, xi, &self.grad);
        ws.project_closed_form_mat(&(self.connection_free_part(xi) + gamma))
    }

    pub fn apply(&self, xi: &TangentVector) -> Result<TangentVector> {
        self.ws.check_anchor(xi)?;
        Ok(self.ws.wrap(self.apply_mat(xi.mat())))
    }
}

/// `Hess f(X)[ξ]` for a tangent `ξ`.
pub fn riemannian_hessian_apply(
    ws: &PointWorkspace,
    derivs: &EuclideanDerivatives<'_>,
    xi: &TangentVector,
) -> Result<TangentVector> {
    HessianOperator::new(ws, derivs)?.apply(xi)
}
