//! The indefinite Stiefel manifold `{X ∈ ℝ^{n×p} : XᵀAX = J}`.
//!
//! A [`ManifoldSpec`] fixes `A`, `J`, the Riemannian metric and `ρ`. A
//! [`PointWorkspace`] is a feasible point together with the cached products
//! every geometric operation needs:
//!
//! ```text
//! M_X = (XᵀX)⁻¹      Π_X = I − X M_X Xᵀ
//! S_X = A − AXJXᵀA   Q_X = I − XJXᵀA = A⁻¹S_X
//! ```
//!
//! The two canonical metrics are
//!
//! ```text
//! G¹_X = ρ⁻¹ AXXᵀA + S_X²      (G¹_X)⁻¹ = ρXXᵀ + A⁻¹Π_X A⁻¹
//! G²_X = ρ⁻¹ AXXᵀA + Π_X       (G²_X)⁻¹ = ρXXᵀ + A⁻¹S_X² A⁻¹
//! ```
//!
//! and for both of them the orthogonal projection onto the tangent space is
//! `P_X(Y) = Y − XJ sym(XᵀAY)`. Any other SPD-valued metric can be supplied
//! as [`Metric::General`]; its projection and gradient go through a Lyapunov
//! solve instead.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::Cholesky;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kernels::{
    ensure_finite, ensure_shape, ensure_symmetric, random_normal, rng_from_seed, solve_lyapunov,
    sym_eig, sym_part, Mat, SymEigResult,
};

/// Feasibility tolerance accepted by [`PointWorkspace::new`], relative to
/// `max(1, ‖A‖₂ ‖X‖_F²)`.
pub const WORKSPACE_FEASIBILITY_TOL: f64 = 1e-8;

/// Tangency tolerance, relative to `max(1, ‖ξ‖_F)`.
pub const TANGENCY_TOL: f64 = 1e-10;

/// Callback returning the SPD matrix `G_X` at a point `X`.
#[derive(Clone)]
pub struct MetricField(Arc<dyn Fn(&Mat) -> Mat + Send + Sync>);

impl MetricField {
    pub fn new(f: impl Fn(&Mat) -> Mat + Send + Sync + 'static) -> Self {
        MetricField(Arc::new(f))
    }

    pub fn eval(&self, x: &Mat) -> Mat {
        (self.0)(x)
    }
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MetricField(..)")
    }
}

#[derive(Debug, Clone)]
pub enum Metric {
    /// `G¹_X = ρ⁻¹ AXXᵀA + S_X²`
    Canonical1,
    /// `G²_X = ρ⁻¹ AXXᵀA + Π_X`
    Canonical2,
    /// Arbitrary SPD metric; only first-order operations are available.
    General(MetricField),
}

impl Metric {
    pub fn is_canonical(&self) -> bool {
        matches!(self, Metric::Canonical1 | Metric::Canonical2)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Canonical1 => "g1",
            Metric::Canonical2 => "g2",
            Metric::General(_) => "general",
        }
    }
}

/// Defines the manifold and the metric it carries.
#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    n: usize,
    p: usize,
    a: Mat,
    a_inv: Mat,
    a_eig: SymEigResult,
    j: Mat,
    metric: Metric,
    rho: f64,
    p_plus: usize,
    p_minus: usize,
}

impl ManifoldSpec {
    /// Validates `A` (symmetric, invertible), `J` (symmetric, `J² = I`), the
    /// inertia compatibility of `J` with `A`, and `ρ > 0`.
    pub fn new(a: Mat, j: Mat, metric: Metric, rho: f64) -> Result<Self> {
        ensure_finite(&a)?;
        ensure_finite(&j)?;
        ensure_symmetric(&a)?;
        ensure_symmetric(&j)?;
        let n = a.nrows();
        let p = j.nrows();
        if p == 0 || p > n {
            return Err(Error::InvalidSpec(format!("need 1 <= p <= n, got p={p}, n={n}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidSpec(format!("rho must be positive, got {rho}")));
        }
        let a = sym_part(&a);
        let j = sym_part(&j);
        let j2_defect = (&j * &j - Mat::identity(p, p)).norm();
        if j2_defect > 1e-12 {
            return Err(Error::InvalidSpec(format!("J^2 != I (defect {j2_defect:e})")));
        }

        let a_eig = sym_eig(&a)?;
        let scale = a_eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if a_eig.eigenvalues.iter().any(|v| v.abs() < 1e-12 * scale) || scale == 0.0 {
            return Err(Error::InvalidSpec("A is singular".into()));
        }
        let a_pos = a_eig.eigenvalues.iter().filter(|&&v| v > 0.0).count();
        let a_neg = n - a_pos;
        let j_eig = sym_eig(&j)?;
        let p_plus = j_eig.eigenvalues.iter().filter(|&&v| v > 0.0).count();
        let p_minus = p - p_plus;
        if p_plus > a_pos || p_minus > a_neg {
            return Err(Error::InvalidSpec(format!(
                "inertia of J ({p_plus}+, {p_minus}-) exceeds inertia of A ({a_pos}+, {a_neg}-)"
            )));
        }
        let a_inv = sym_part(&a_eig.map_spectrum(|v| 1.0 / v));
        Ok(ManifoldSpec {
            n,
            p,
            a,
            a_inv,
            a_eig,
            j,
            metric,
            rho,
            p_plus,
            p_minus,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn a_inv(&self) -> &Mat {
        &self.a_inv
    }
    pub fn j(&self) -> &Mat {
        &self.j
    }
    pub fn metric(&self) -> &Metric {
        &self.metric
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn p_plus(&self) -> usize {
        self.p_plus
    }
    pub fn p_minus(&self) -> usize {
        self.p_minus
    }

    /// Same manifold with a different metric or `ρ`.
    pub fn with_metric(&self, metric: Metric, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidSpec(format!("rho must be positive, got {rho}")));
        }
        Ok(ManifoldSpec {
            metric,
            rho,
            ..self.clone()
        })
    }

    /// Dimension of each tangent space, `np − p(p+1)/2`.
    pub fn dim(&self) -> usize {
        self.n * self.p - self.p * (self.p + 1) / 2
    }

    /// `‖XᵀAX − J‖_F`.
    pub fn feasibility_residual(&self, x: &Mat) -> Result<f64> {
        ensure_shape(x, self.n, self.p)?;
        ensure_finite(x)?;
        Ok((x.transpose() * &self.a * x - &self.j).norm())
    }

    /// `max(1, ‖A‖₂ ‖X‖_F²)`: the magnitude round-off in `XᵀAX` is measured against.
    pub fn feasibility_scale(&self, x: &Mat) -> f64 {
        let a_norm = self.a_eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (a_norm * x.norm_squared()).max(1.0)
    }

    /// The metric matrix evaluated by its defining formula at any `X` of the
    /// open set `{rank X = p, det(XᵀAX) ≠ 0}`; feasibility is not required.
    pub fn metric_matrix_at(&self, x: &Mat) -> Result<Mat> {
        ensure_shape(x, self.n, self.p)?;
        let ax = &self.a * x;
        let base = &ax * ax.transpose() / self.rho;
        let g = match &self.metric {
            Metric::Canonical1 => {
                ensure_in_ambient_set(x, &ax)?;
                let s = &self.a - &ax * &self.j * ax.transpose();
                base + &s * &s
            }
            Metric::Canonical2 => {
                let mx = ensure_in_ambient_set(x, &ax)?;
                let pi = Mat::identity(self.n, self.n) - x * mx * x.transpose();
                base + pi
            }
            Metric::General(field) => field.eval(x),
        };
        Ok(sym_part(&g))
    }
}

/// Returns `(XᵀX)⁻¹` if `X` has full column rank and `XᵀAX` is invertible.
pub(crate) fn ensure_in_ambient_set(x: &Mat, ax: &Mat) -> Result<Mat> {
    let xtx = x.transpose() * x;
    let xtax = x.transpose() * ax;
    let tiny = 1e-14;
    let xtx_inv = xtx.clone().try_inverse().ok_or(Error::OutsideAmbientSet)?;
    let scale = xtax.norm().max(1.0);
    if xtax.determinant().abs() <= tiny * scale.powi(xtax.nrows() as i32)
        || xtx.determinant().abs() <= tiny * xtx.norm().max(1.0).powi(xtx.nrows() as i32)
    {
        return Err(Error::OutsideAmbientSet);
    }
    Ok(sym_part(&xtx_inv))
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
struct GeneralMetricCache {
    g: Mat,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

/// A feasible point with cached derived matrices.
#[derive(Debug, Clone)]
pub struct PointWorkspace {
    spec: Arc<ManifoldSpec>,
    id: u64,
    x: Mat,
    ax: Mat,
    mx: Mat,
    pi: Mat,
    s: Mat,
    q: Mat,
    general: Option<GeneralMetricCache>,
}

/// Tangent vector at the point identified by `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    xi: Mat,
    anchor: u64,
}

impl TangentVector {
    pub fn mat(&self) -> &Mat {
        &self.xi
    }

    pub fn into_mat(self) -> Mat {
        self.xi
    }

    pub fn anchor(&self) -> u64 {
        self.anchor
    }

    pub fn scaled(&self, t: f64) -> TangentVector {
        TangentVector {
            xi: &self.xi * t,
            anchor: self.anchor,
        }
    }
}

impl PointWorkspace {
    /// Builds the workspace at `x`; rejects points whose feasibility residual
    /// exceeds [`WORKSPACE_FEASIBILITY_TOL`] (scaled by `‖A‖₂ ‖X‖_F²` for
    /// points far from the origin).
    pub fn new(spec: Arc<ManifoldSpec>, x: Mat) -> Result<Self> {
        let residual = spec.feasibility_residual(&x)?;
        if residual > WORKSPACE_FEASIBILITY_TOL * spec.feasibility_scale(&x) {
            return Err(Error::Infeasible { residual });
        }
        let n = spec.n;
        let ax = &spec.a * &x;
        let mx = sym_part(
            &(x.transpose() * &x)
                .try_inverse()
                .ok_or(Error::Singular("X^T X"))?,
        );
        let ident = Mat::identity(n, n);
        let pi = sym_part(&(&ident - &x * &mx * x.transpose()));
        let s = sym_part(&(&spec.a - &ax * &spec.j * ax.transpose()));
        let q = &ident - &x * &spec.j * ax.transpose();
        let general = match &spec.metric {
            Metric::General(field) => {
                let g = sym_part(&field.eval(&x));
                ensure_shape(&g, n, n)?;
                let chol = Cholesky::new(g.clone()).ok_or(Error::NotPositiveDefinite {
                    eigenvalue: sym_eig(&g).map(|e| e.eigenvalues[0]).unwrap_or(f64::NAN),
                })?;
                Some(GeneralMetricCache { g, chol })
            }
            _ => None,
        };
        Ok(PointWorkspace {
            spec,
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            x,
            ax,
            mx,
            pi,
            s,
            q,
            general,
        })
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }
    pub fn spec_arc(&self) -> &Arc<ManifoldSpec> {
        &self.spec
    }
    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn x(&self) -> &Mat {
        &self.x
    }
    /// Cached `A X`.
    pub fn ax(&self) -> &Mat {
        &self.ax
    }
    /// `M_X = (XᵀX)⁻¹`.
    pub fn mx(&self) -> &Mat {
        &self.mx
    }
    /// `Π_X = I − X M_X Xᵀ`.
    pub fn pi(&self) -> &Mat {
        &self.pi
    }
    /// `S_X = A − AXJXᵀA`.
    pub fn s(&self) -> &Mat {
        &self.s
    }
    /// `Q_X = I − XJXᵀA`.
    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn feasibility_residual(&self) -> f64 {
        (self.x.transpose() * &self.ax - &self.spec.j).norm()
    }

    /// `G_X v` for an `n×k` matrix `v`.
    pub fn metric_apply(&self, v: &Mat) -> Result<Mat> {
        ensure_rows(v, self.spec.n)?;
        let spec = &self.spec;
        let base = &self.ax * (self.ax.transpose() * v) / spec.rho;
        Ok(match &spec.metric {
            Metric::Canonical1 => base + &self.s * (&self.s * v),
            Metric::Canonical2 => base + &self.pi * v,
            Metric::General(_) => &self.general_cache().g * v,
        })
    }

    /// `G_X⁻¹ v` from the closed-form inverses of the canonical metrics.
    pub fn metric_inverse_apply(&self, v: &Mat) -> Result<Mat> {
        ensure_rows(v, self.spec.n)?;
        let spec = &self.spec;
        let base = &self.x * (self.x.transpose() * v) * spec.rho;
        let w = &spec.a_inv * v;
        match &spec.metric {
            Metric::Canonical1 => Ok(base + &spec.a_inv * (&self.pi * w)),
            Metric::Canonical2 => Ok(base + &spec.a_inv * (&self.s * (&self.s * w))),
            Metric::General(_) => Err(Error::NoClosedFormInverse),
        }
    }

    /// `G_X⁻¹ v` for any metric (Cholesky solve for a general metric).
    pub(crate) fn metric_solve(&self, v: &Mat) -> Mat {
        match &self.general {
            Some(cache) => cache.chol.solve(v),
            None => self
                .metric_inverse_apply(v)
                .expect("canonical metric has a closed-form inverse"),
        }
    }

    /// Assembled `n×n` metric matrix.
    pub fn metric_matrix(&self) -> Mat {
        match &self.general {
            Some(cache) => cache.g.clone(),
            None => sym_part(
                &self
                    .metric_apply(&Mat::identity(self.spec.n, self.spec.n))
                    .expect("square identity has n rows"),
            ),
        }
    }

    fn general_cache(&self) -> &GeneralMetricCache {
        self.general.as_ref().expect("general metric workspace carries its metric matrix")
    }

    /// `tr(ξᵀ G_X η)` for arbitrary ambient matrices.
    pub fn inner_ambient(&self, xi: &Mat, eta: &Mat) -> f64 {
        let g_eta = self.metric_apply(eta).expect("ambient matrix has n rows");
        xi.dot(&g_eta)
    }

    /// Riemannian inner product of two tangent vectors at this point.
    pub fn inner(&self, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
        self.check_anchor(xi)?;
        self.check_anchor(eta)?;
        Ok(self.inner_ambient(&xi.xi, &eta.xi))
    }

    pub fn norm(&self, xi: &TangentVector) -> Result<f64> {
        Ok(self.inner(xi, xi)?.max(0.0).sqrt())
    }

    pub(crate) fn check_anchor(&self, v: &TangentVector) -> Result<()> {
        if v.anchor != self.id {
            return Err(Error::AnchorMismatch);
        }
        Ok(())
    }

    /// `‖sym(XᵀAξ)‖_F`.
    pub fn tangency_defect(&self, xi: &Mat) -> f64 {
        sym_part(&(self.ax.transpose() * xi)).norm()
    }

    /// Wraps `xi` as a tangent vector after checking the tangency constraint.
    pub fn tangent(&self, xi: Mat) -> Result<TangentVector> {
        ensure_shape(&xi, self.spec.n, self.spec.p)?;
        ensure_finite(&xi)?;
        let defect = self.tangency_defect(&xi);
        if defect > TANGENCY_TOL * xi.norm().max(1.0) {
            return Err(Error::NotTangent { defect });
        }
        Ok(self.wrap(xi))
    }

    pub(crate) fn wrap(&self, xi: Mat) -> TangentVector {
        TangentVector { xi, anchor: self.id }
    }

    pub fn zero_tangent(&self) -> TangentVector {
        self.wrap(Mat::zeros(self.spec.n, self.spec.p))
    }

    pub(crate) fn project_closed_form_mat(&self, y: &Mat) -> Mat {
        let sym_xay = sym_part(&(self.ax.transpose() * y));
        y - &self.x * (&self.spec.j * sym_xay)
    }

    /// `P_X(Y) = Y − XJ sym(XᵀAY)`: the orthogonal projection for both
    /// canonical metrics. For a general metric the output is still tangent but
    /// the projection is oblique.
    pub fn project_closed_form(&self, y: &Mat) -> Result<TangentVector> {
        ensure_shape(y, self.spec.n, self.spec.p)?;
        Ok(self.wrap(self.project_closed_form_mat(y)))
    }

    /// Orthogonal projection for the metric `G_X = g(X)` via the Lyapunov
    /// equation `(XᵀAG⁻¹AX)U + U(XᵀAG⁻¹AX) = 2 sym(XᵀAY)`, `P(Y) = Y − G⁻¹AXU`.
    pub fn project_lyapunov(&self, y: &Mat, g: &dyn Fn(&Mat) -> Mat) -> Result<TangentVector> {
        ensure_shape(y, self.spec.n, self.spec.p)?;
        let gx = sym_part(&g(&self.x));
        ensure_shape(&gx, self.spec.n, self.spec.n)?;
        let chol = Cholesky::new(gx.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            eigenvalue: sym_eig(&gx).map(|e| e.eigenvalues[0]).unwrap_or(f64::NAN),
        })?;
        Ok(self.wrap(lyapunov_projection(&self.ax, &chol, y)?))
    }

    /// Projection onto the tangent space that is orthogonal for this point's metric.
    pub fn project(&self, y: &Mat) -> Result<TangentVector> {
        ensure_shape(y, self.spec.n, self.spec.p)?;
        match &self.general {
            None => Ok(self.wrap(self.project_closed_form_mat(y))),
            Some(cache) => Ok(self.wrap(lyapunov_projection(&self.ax, &cache.chol, y)?)),
        }
    }

    pub(crate) fn project_mat(&self, y: &Mat) -> Mat {
        match &self.general {
            None => self.project_closed_form_mat(y),
            Some(cache) => lyapunov_projection(&self.ax, &cache.chol, y)
                .expect("XᵀAG⁻¹AX is SPD for feasible X and SPD G"),
        }
    }

    /// Tangent vector from seeded Gaussian noise, projected and normalized to
    /// unit Riemannian norm.
    pub fn random_tangent(&self, seed: u64) -> TangentVector {
        let mut rng = rng_from_seed(seed);
        loop {
            let y = random_normal(self.spec.n, self.spec.p, &mut rng);
            let xi = self.project_mat(&y);
            let norm = self.inner_ambient(&xi, &xi).sqrt();
            if norm > 1e-8 {
                return self.wrap(xi / norm);
            }
        }
    }

    /// Matrix-exponential retraction
    ///
    /// ```text
    /// R_X(ξ) = [X ξ] exp([[JXᵀAξ, −JξᵀAξ], [I, JXᵀAξ]]) [I; 0] exp(−JXᵀAξ)
    /// ```
    pub fn retract(&self, xi: &TangentVector) -> Result<PointWorkspace> {
        self.check_anchor(xi)?;
        let y = self.retract_mat(&xi.xi)?;
        PointWorkspace::new(self.spec.clone(), y)
    }

    pub(crate) fn retract_mat(&self, xi: &Mat) -> Result<Mat> {
        let p = self.spec.p;
        let j = &self.spec.j;
        let k = j * (self.ax.transpose() * xi);
        let c = -(j * (xi.transpose() * (&self.spec.a * xi)));
        let mut block = Mat::zeros(2 * p, 2 * p);
        block.view_mut((0, 0), (p, p)).copy_from(&k);
        block.view_mut((0, p), (p, p)).copy_from(&c);
        block.view_mut((p, 0), (p, p)).fill_with_identity();
        block.view_mut((p, p), (p, p)).copy_from(&k);
        let e = crate::kernels::mat_exp(&block)?;
        let top = e.view((0, 0), (p, p));
        let bottom = e.view((p, 0), (p, p));
        let frame = &self.x * top + xi * bottom;
        let correction = crate::kernels::mat_exp(&(-k))?;
        Ok(frame * correction)
    }
}

fn ensure_rows(v: &Mat, n: usize) -> Result<()> {
    if v.nrows() != n {
        return Err(Error::ShapeMismatch {
            expected: (n, v.ncols()),
            found: v.shape(),
        });
    }
    Ok(())
}

fn lyapunov_projection(
    ax: &Mat,
    chol: &Cholesky<f64, nalgebra::Dyn>,
    y: &Mat,
) -> Result<Mat> {
    let ginv_ax = chol.solve(ax);
    let lhs = sym_part(&(ax.transpose() * &ginv_ax));
    let rhs = sym_part(&(ax.transpose() * y)) * 2.0;
    let u = solve_lyapunov(&lhs, &rhs)?;
    Ok(y - ginv_ax * u)
}

/// Random feasible point.
///
/// Picks `p₊` eigenvectors of `A` with positive eigenvalue and `p₋` with
/// negative eigenvalue at random, scales each by `1/√|λ|`, rotates the frame
/// onto the eigenbasis of `J`, and finally takes a retraction step of length
/// 0.5 along a random unit tangent vector.
pub fn random_point(spec: &Arc<ManifoldSpec>, seed: u64) -> Result<PointWorkspace> {
    let mut rng = rng_from_seed(seed);
    let eig = &spec.a_eig;
    let mut pos: Vec<usize> = (0..spec.n).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
    let mut neg: Vec<usize> = (0..spec.n).filter(|&i| eig.eigenvalues[i] < 0.0).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let j_eig = sym_eig(&spec.j)?;
    let (mut pos_iter, mut neg_iter) = (pos.into_iter(), neg.into_iter());
    let mut x0 = Mat::zeros(spec.n, spec.p);
    for c in 0..spec.p {
        let idx = if j_eig.eigenvalues[c] > 0.0 {
            pos_iter.next()
        } else {
            neg_iter.next()
        }
        .ok_or_else(|| Error::InvalidSpec("inertia of J exceeds inertia of A".into()))?;
        let lam = eig.eigenvalues[idx];
        x0.set_column(c, &(eig.eigenvectors.column(idx) / lam.abs().sqrt()));
    }
    let x = x0 * j_eig.eigenvectors.transpose();
    let start = PointWorkspace::new(spec.clone(), x)?;
    let step = start.random_tangent(rand::Rng::random(&mut rng)).scaled(0.5);
    start.retract(&step)
}
