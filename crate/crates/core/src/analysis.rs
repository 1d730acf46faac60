//! Controllability, characteristic polynomial, spectrum and modal
//! decomposition of the linear model.

use nalgebra::{Matrix4, RowVector4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linearization::LinearModel;
use crate::plant::{PlantParams, Variant};

/// Closed-form quantity that is nonzero exactly when the linear model is
/// Kalman controllable.
pub fn controllability_indicator(p: &PlantParams) -> f64 {
    let (r, rho2) = (p.r, p.rho2);
    match p.variant {
        Variant::Straight => {
            r * r * p.g * p.g * ((2.0 * r * r + rho2 * rho2) * rho2 * rho2 + r.powi(4))
        }
        Variant::Circular => {
            let big_r = p.big_r;
            big_r * r * r * (big_r - p.l) + big_r * big_r * rho2 * rho2 + r.powi(3) * (big_r - p.l)
        }
    }
}

/// Kalman matrix `[b, Ab, A^2 b, A^3 b]`.
pub fn kalman_matrix(lm: &LinearModel) -> Matrix4<f64> {
    let mut k = Matrix4::zeros();
    let mut col = lm.b;
    for j in 0..4 {
        k.set_column(j, &col);
        col = lm.a * col;
    }
    k
}

/// Numerical rank of the Kalman matrix. Columns are normalized first since
/// their magnitudes grow like powers of the spectral radius.
pub fn kalman_rank(lm: &LinearModel) -> usize {
    let mut k = kalman_matrix(lm);
    for mut col in k.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    let sv = k.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-9 * max).count()
}

/// Coefficients `(a0, .., a4)` of `a0 l^4 + a1 l^3 + a2 l^2 + a3 l + a4`,
/// the characteristic polynomial scaled by `det D`.
pub fn characteristic_coefficients(p: &PlantParams) -> [f64; 5] {
    let (m1, m2, r, l, a, g) = (p.m1, p.m2, p.r, p.l, p.a, p.g);
    let (rho1_sq, rho2_sq) = (p.rho1 * p.rho1, p.rho2 * p.rho2);
    let c = p.damping();
    match p.variant {
        Variant::Straight => {
            let a0 = (m1 * rho1_sq + m2 * (r + l).powi(2)) * (r * r + rho2_sq)
                - m2 * r * r * (r + l).powi(2);
            let a1 = c * (r * r + rho2_sq);
            let a2 = g * (m2 * (r + l) * (r * r - rho2_sq) - m1 * a * (r * r + rho2_sq));
            let a4 = -m2 * g * g * r * r;
            [a0, a1, a2, 0.0, a4]
        }
        Variant::Circular => {
            let big_r = p.big_r;
            let k = 1.0 + r / big_r;
            let a0 = (m1 * rho1_sq + m2 * (r + l).powi(2)) * (rho2_sq + r * r * k * k)
                - m2 * (r * k * (r + l)).powi(2);
            let a1 = c * (rho2_sq + r * r / (big_r * big_r) * (big_r + r).powi(2));
            let a2 = g / (big_r * big_r)
                * (m2 * ((r + l) * big_r * big_r * (r * r - rho2_sq)
                    + (r * r - l * l) * r * r * big_r
                    - (r + l) * l * r.powi(3))
                    - m1 * ((rho2_sq + r * r) * a * big_r * big_r
                        + (2.0 * a * r + rho1_sq) * big_r * r * r
                        + (a * r + rho1_sq) * r.powi(3)));
            let a3 = -c * g * r * r / (big_r * big_r) * (big_r + r);
            let a4 = g * g * r * r / (big_r * big_r) * (big_r + r) * p.circular_lever();
            [a0, a1, a2, a3, a4]
        }
    }
}

/// Coefficients of `det D * det(l I - A)`, computed from the matrices rather
/// than from closed forms.
pub fn characteristic_from_matrices(lm: &LinearModel) -> [f64; 5] {
    // Faddeev-LeVerrier on A gives the monic polynomial.
    let a = lm.a;
    let mut m = Matrix4::<f64>::zeros();
    let mut c = [1.0, 0.0, 0.0, 0.0, 0.0];
    for k in 1..=4 {
        m = a * m + Matrix4::identity() * c[k - 1];
        c[k] = -(a * m).trace() / k as f64;
    }
    let det_d = lm.d.determinant();
    c.map(|v| v * det_d)
}

pub fn poly_eval(coeffs: &[f64; 5], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn poly_eval_with_derivative(coeffs: &[f64; 5], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// `|p(z)| / (|a0| max(1, |z|)^4)`.
pub fn relative_residual(coeffs: &[f64; 5], z: Complex64) -> f64 {
    poly_eval(coeffs, z).norm() / (coeffs[0].abs() * z.norm().max(1.0).powi(4))
}

/// Threshold below which an eigenvalue is treated as real.
pub fn is_real(z: Complex64) -> bool {
    z.im.abs() < 1e-8 * z.re.abs().max(1.0)
}

/// The four roots of a quartic sorted by descending real part.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub roots: [Complex64; 4],
    pub n_unstable: usize,
}

impl Spectrum {
    pub fn from_roots(mut roots: [Complex64; 4]) -> Self {
        roots.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
        let n_unstable = roots.iter().filter(|z| z.re > 0.0).count();
        Spectrum { roots, n_unstable }
    }

    /// Positive real parts of the unstable roots, largest first.
    pub fn unstable(&self) -> &[Complex64] {
        &self.roots[..self.n_unstable]
    }
}

/// Roots of `a0 l^4 + .. + a4` from the eigenvalues of the companion matrix
/// (shifted-QR Schur form), each polished by Newton's method.
pub fn quartic_roots(coeffs: [f64; 5]) -> Result<Spectrum> {
    let a0 = coeffs[0];
    if a0 == 0.0 || !a0.is_finite() {
        return Err(Error::ZeroLeadingCoefficient);
    }
    let mut companion = Matrix4::<f64>::zeros();
    for j in 0..4 {
        companion[(0, j)] = -coeffs[j + 1] / a0;
    }
    for i in 1..4 {
        companion[(i, i - 1)] = 1.0;
    }
    let eig = companion
        .try_schur(1e-15, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?
        .complex_eigenvalues();

    let mut roots = [Complex64::new(0.0, 0.0); 4];
    for (slot, z) in roots.iter_mut().zip(eig.iter()) {
        *slot = newton_polish(&coeffs, Complex64::new(z.re, z.im));
    }
    enforce_conjugate_pairs(&coeffs, &mut roots);

    let spectrum = Spectrum::from_roots(roots);
    for z in &spectrum.roots {
        if !(relative_residual(&coeffs, *z) < 1e-10) {
            return Err(Error::Eigen(format!(
                "root {z} has residual {}",
                relative_residual(&coeffs, *z)
            )));
        }
    }
    Ok(spectrum)
}

fn newton_polish(coeffs: &[f64; 5], mut z: Complex64) -> Complex64 {
    let mut best = poly_eval(coeffs, z).norm();
    for _ in 0..4 {
        let (p, dp) = poly_eval_with_derivative(coeffs, z);
        if dp.norm() == 0.0 {
            break;
        }
        let next = z - p / dp;
        let res = poly_eval(coeffs, next).norm();
        if !(res < best) {
            break;
        }
        z = next;
        best = res;
    }
    z
}

fn enforce_conjugate_pairs(coeffs: &[f64; 5], roots: &mut [Complex64; 4]) {
    for z in roots.iter_mut() {
        if is_real(*z) {
            *z = newton_polish(coeffs, Complex64::new(z.re, 0.0));
            z.im = 0.0;
        }
    }
    let upper: Vec<Complex64> = roots.iter().copied().filter(|z| z.im > 0.0).collect();
    let lower = roots.iter().filter(|z| z.im < 0.0).count();
    if upper.len() != lower {
        return;
    }
    let reals: Vec<Complex64> = roots.iter().copied().filter(|z| z.im == 0.0).collect();
    let mut out = reals;
    for z in upper {
        out.push(z);
        out.push(z.conj());
    }
    roots.copy_from_slice(&out);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StabilityClass {
    /// One real root in the open right half-plane.
    OneUnstable,
    TwoUnstable,
    Other,
}

pub fn classify_spectrum(s: &Spectrum) -> StabilityClass {
    match s.n_unstable {
        1 if is_real(s.roots[0]) => StabilityClass::OneUnstable,
        2 => StabilityClass::TwoUnstable,
        _ => StabilityClass::Other,
    }
}

/// One real unstable mode: `y = w x` obeys `y' = lambda y + d u`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnstableMode {
    pub lambda: f64,
    pub w: RowVector4<f64>,
    pub d: f64,
}

impl UnstableMode {
    pub fn project(&self, x: &Vector4<f64>) -> f64 {
        (self.w * x)[0]
    }

    /// Same mode with `w` scaled by `c` (so `d` scales by `c` too).
    pub fn rescaled(&self, c: f64) -> Self {
        UnstableMode {
            lambda: self.lambda,
            w: self.w * c,
            d: self.d * c,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalData {
    /// Unstable real modes in descending order of `lambda`, normalized to `d = 1`.
    pub modes: Vec<UnstableMode>,
    /// Full spectrum with matching left eigenvectors (rows). Each row is
    /// scaled so that `w b = 1`.
    pub eigenvalues: [Complex64; 4],
    pub left_basis: [RowVector4<Complex64>; 4],
}

impl ModalData {
    pub fn project(&self, x: &Vector4<f64>) -> Vec<f64> {
        self.modes.iter().map(|m| m.project(x)).collect()
    }

    /// Complex modal coordinates for all four eigenvalues.
    pub fn project_all(&self, x: &Vector4<f64>) -> [Complex64; 4] {
        let xc = x.map(|v| Complex64::new(v, 0.0));
        self.left_basis.map(|w| (w * xc)[0])
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    pub fn ds(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.d).collect()
    }
}

/// Left null vector of `A - lambda I` (real case).
fn left_eigenvector_real(a: &Matrix4<f64>, lambda: f64) -> RowVector4<f64> {
    let m = a.transpose() - Matrix4::identity() * lambda;
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("four singular values");
    v_t.row(idx).into_owned()
}

fn left_eigenvector_complex(a: &Matrix4<f64>, lambda: Complex64) -> RowVector4<Complex64> {
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let m = ac.transpose() - Matrix4::identity() * lambda;
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("four singular values");
    // Rows of V^H are conjugated right singular vectors; undo that.
    v_t.row(idx).map(|z| z.conj())
}

/// Extracts the unstable scalar subsystems `y_i' = lambda_i y_i + d_i u`.
pub fn modal_decomposition(lm: &LinearModel, s: &Spectrum) -> Result<ModalData> {
    let mut modes = Vec::with_capacity(s.n_unstable);
    for z in s.unstable() {
        if !is_real(*z) {
            return Err(Error::ComplexUnstable { re: z.re, im: z.im });
        }
        let lambda = z.re;
        if let Some(prev) = modes.last() {
            let prev: &UnstableMode = prev;
            if (prev.lambda - lambda).abs() <= 1e-8 * lambda.abs().max(1.0) {
                return Err(Error::RepeatedEigenvalue(lambda));
            }
        }
        let w = left_eigenvector_real(&lm.a, lambda);
        let d = (w * lm.b)[0];
        if d.abs() <= 1e-12 * w.norm() * lm.b.norm() {
            return Err(Error::Uncontrollable(d));
        }
        modes.push(UnstableMode {
            lambda,
            w: w / d,
            d: 1.0,
        });
    }

    let bc = lm.b.map(|v| Complex64::new(v, 0.0));
    let left_basis = s.roots.map(|z| {
        let w = left_eigenvector_complex(&lm.a, z);
        let d = (w * bc)[0];
        if d.norm() > 1e-12 * w.norm() * lm.b.norm() {
            w / d
        } else {
            w
        }
    });
    Ok(ModalData {
        modes,
        eigenvalues: s.roots,
        left_basis,
    })
}

/// Convenience: spectrum of a plant from its closed-form coefficients.
pub fn spectrum(p: &PlantParams) -> Result<Spectrum> {
    quartic_roots(characteristic_coefficients(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearization::build_state_space;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn expand(a0: f64, roots: &[Complex64; 4]) -> [f64; 5] {
        let mut poly = vec![c(a0, 0.0)];
        for &z in roots {
            let mut next = vec![c(0.0, 0.0); poly.len() + 1];
            for (i, &p) in poly.iter().enumerate() {
                next[i] += p;
                next[i + 1] -= p * z;
            }
            poly = next;
        }
        let mut out = [0.0; 5];
        for (o, p) in out.iter_mut().zip(poly) {
            *o = p.re;
        }
        out
    }

    #[test]
    fn straight_spectrum_matches_reference() {
        let s = spectrum(&PlantParams::straight_reference()).unwrap();
        let expect = [c(5.7202, 0.0), c(-2.8e-7, 1.0558), c(-2.8e-7, -1.0558), c(-5.7218, 0.0)];
        for (z, e) in s.roots.iter().zip(expect) {
            assert!((z - e).norm() < 1e-3, "{z} vs {e}");
        }
        assert_eq!(classify_spectrum(&s), StabilityClass::OneUnstable);
    }

    #[test]
    fn circular_spectrum_matches_reference() {
        let s = spectrum(&PlantParams::circular_reference()).unwrap();
        let expect = [4.89589, 0.46516, -0.46523, -4.89706];
        for (z, e) in s.roots.iter().zip(expect) {
            assert!((z.re - e).abs() < 1e-4 && z.im == 0.0, "{z} vs {e}");
        }
        assert_eq!(classify_spectrum(&s), StabilityClass::TwoUnstable);
    }

    #[test]
    fn all_stable_quartic_is_other() {
        let coeffs = expand(1.0, &[c(-1.0, 0.0), c(-2.0, 0.0), c(-3.0, 0.0), c(-4.0, 0.0)]);
        let s = quartic_roots(coeffs).unwrap();
        assert_eq!(s.n_unstable, 0);
        assert_eq!(classify_spectrum(&s), StabilityClass::Other);
        assert!((s.roots[0].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_leading_coefficient_is_rejected() {
        assert_eq!(
            quartic_roots([0.0, 1.0, 2.0, 3.0, 4.0]),
            Err(Error::ZeroLeadingCoefficient)
        );
    }

    #[test]
    fn closed_form_coefficients_match_matrix_expansion() {
        for p in [
            PlantParams::straight_reference(),
            PlantParams::straight_reference().with_friction(0.4),
            PlantParams::circular_reference(),
            PlantParams::circular_reference().with_friction(0.1),
        ] {
            let closed = characteristic_coefficients(&p);
            let lm = build_state_space(&p).unwrap();
            let direct = characteristic_from_matrices(&lm);
            let scale = closed.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (x, y) in closed.iter().zip(direct) {
                assert!((x - y).abs() <= 1e-8 * scale, "{closed:?} vs {direct:?}");
            }
        }
    }

    #[test]
    fn straight_coefficient_signs() {
        let k = characteristic_coefficients(&PlantParams::straight_reference());
        assert!(k[0] > 0.0);
        assert_eq!(k[3], 0.0);
        assert!((k[4] + 0.0481181).abs() < 1e-7);
        let kc = characteristic_coefficients(&PlantParams::circular_reference());
        assert!(kc[4] > 0.0);
    }

    #[test]
    fn controllability_indicators() {
        let p = PlantParams::straight_reference();
        assert!(controllability_indicator(&p) > 0.0);
        let pc = PlantParams::circular_reference();
        assert!(controllability_indicator(&pc) != 0.0);
        assert_eq!(kalman_rank(&build_state_space(&pc).unwrap()), 4);
        let degenerate = PlantParams {
            rho2: 0.0,
            big_r: pc.l,
            ..pc
        };
        assert_eq!(controllability_indicator(&degenerate), 0.0);
        assert!(kalman_rank(&build_state_space(&degenerate).unwrap()) < 4);
    }

    #[test]
    fn left_eigenvectors_have_small_residual() {
        for p in [PlantParams::straight_reference(), PlantParams::circular_reference()] {
            let lm = build_state_space(&p).unwrap();
            let s = spectrum(&p).unwrap();
            let md = modal_decomposition(&lm, &s).unwrap();
            for m in &md.modes {
                let res = (m.w * lm.a - m.w * m.lambda).norm();
                assert!(res <= 1e-10 * m.w.norm() * lm.a.norm(), "{res}");
                assert!((m.project(&lm.b) - 1.0).abs() < 1e-12);
            }
            let ac = lm.a.map(|v| Complex64::new(v, 0.0));
            for (w, z) in md.left_basis.iter().zip(md.eigenvalues) {
                let res = (w * ac - w * z).norm();
                assert!(res <= 1e-9 * w.norm() * lm.a.norm(), "{res}");
            }
        }
    }

    #[test]
    fn repeated_and_complex_unstable_are_rejected() {
        let lm = build_state_space(&PlantParams::straight_reference()).unwrap();
        let rep = Spectrum::from_roots([c(2.0, 0.0), c(2.0, 0.0), c(-1.0, 0.0), c(-3.0, 0.0)]);
        assert!(matches!(
            modal_decomposition(&lm, &rep),
            Err(Error::RepeatedEigenvalue(_))
        ));
        let cplx = Spectrum::from_roots([c(1.0, 2.0), c(1.0, -2.0), c(-1.0, 0.0), c(-3.0, 0.0)]);
        assert!(matches!(
            modal_decomposition(&lm, &cplx),
            Err(Error::ComplexUnstable { .. })
        ));
    }
}
