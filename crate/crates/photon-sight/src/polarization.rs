//! Polarization and polarization⊗path quantum states.
//!
//! States are kept as density operators throughout, so pure states, classical
//! mixtures, and entangled pairs share one representation and purity is a
//! derived quantity. Angles cross the API in degrees and are converted to
//! radians internally. Global phase never appears: all comparisons are between
//! density operators.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;

/// Absolute tolerance for state invariants (Hermiticity, trace, positivity).
pub const STATE_TOL: f64 = 1e-12;

type CMat2 = Matrix2<Complex64>;
type CMat4 = Matrix4<Complex64>;

/// How a polarization⊗path state was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Superposition,
    Mixture,
}

/// Which arm of the pair source a measurement acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Linear-polarization analyzer axis, normalized into [0, 180) degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzerSetting {
    degrees: f64,
}

impl AnalyzerSetting {
    pub fn new(degrees: f64) -> Self {
        AnalyzerSetting {
            degrees: degrees.rem_euclid(180.0),
        }
    }

    pub fn degrees(&self) -> f64 {
        self.degrees
    }

    pub fn radians(&self) -> f64 {
        self.degrees.to_radians()
    }
}

fn check_density<const N: usize>(m: &nalgebra::SMatrix<Complex64, N, N>) {
    if cfg!(debug_assertions) {
        for i in 0..N {
            for j in 0..N {
                let d = m[(i, j)] - m[(j, i)].conj();
                debug_assert!(d.norm() < 10.0 * STATE_TOL, "not Hermitian at ({i},{j})");
            }
        }
        let tr: Complex64 = (0..N).map(|i| m[(i, i)]).sum();
        debug_assert!((tr.re - 1.0).abs() < 10.0 * STATE_TOL, "trace != 1: {tr}");
        debug_assert!(tr.im.abs() < 10.0 * STATE_TOL);
    }
}

fn eigenvalues<const N: usize>(m: &nalgebra::SMatrix<Complex64, N, N>) -> Vec<f64> {
    let dynamic = nalgebra::DMatrix::from_fn(N, N, |i, j| m[(i, j)]);
    let eig = SymmetricEigen::new(dynamic);
    eig.eigenvalues.iter().copied().collect()
}

/// Single-photon polarization state over {H, V}.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationState {
    rho: CMat2,
}

impl PolarizationState {
    pub fn from_density(rho: CMat2) -> Self {
        check_density(&rho);
        PolarizationState { rho }
    }

    /// Pure linear polarization at `angle_deg` from horizontal.
    pub fn linear(angle_deg: f64) -> Self {
        let t = angle_deg.to_radians();
        let (c, s) = (t.cos(), t.sin());
        let amp = [Complex64::new(c, 0.0), Complex64::new(s, 0.0)];
        let mut rho = CMat2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                rho[(i, j)] = amp[i] * amp[j].conj();
            }
        }
        Self::from_density(rho)
    }

    pub fn horizontal() -> Self {
        Self::linear(0.0)
    }

    pub fn vertical() -> Self {
        Self::linear(90.0)
    }

    pub fn density(&self) -> &CMat2 {
        &self.rho
    }

    /// Tr(ρ²).
    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    pub fn is_pure(&self) -> bool {
        (self.purity() - 1.0).abs() < 1e-9
    }

    /// Born-rule probability of passing a linear analyzer (Malus law for
    /// pure inputs).
    pub fn analyzer_prob(&self, setting: AnalyzerSetting) -> f64 {
        let p = projector2(setting.radians());
        (p * self.rho).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues(&self.rho)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.rho - other.rho).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Projector onto linear polarization at angle `t` (radians).
fn projector2(t: f64) -> CMat2 {
    let (c, s) = (t.cos(), t.sin());
    CMat2::new(
        Complex64::new(c * c, 0.0),
        Complex64::new(c * s, 0.0),
        Complex64::new(c * s, 0.0),
        Complex64::new(s * s, 0.0),
    )
}

/// Jones matrix of an ideal half-wave plate with fast axis at `t` (radians).
fn hwp_unitary(t: f64) -> CMat2 {
    let (c, s) = ((2.0 * t).cos(), (2.0 * t).sin());
    CMat2::new(
        Complex64::new(c, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(-c, 0.0),
    )
}

/// Ideal half-wave plate: linear polarization at φ maps to 2·hwp_angle − φ.
pub fn apply_hwp(state: &PolarizationState, hwp_angle_deg: f64) -> PolarizationState {
    let u = hwp_unitary(hwp_angle_deg.to_radians());
    PolarizationState::from_density(u * state.rho * u.adjoint())
}

/// Polarization⊗path state over {H⊗right, H⊗left, V⊗right, V⊗left}.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPolarizationState {
    rho: CMat4,
    provenance: Provenance,
}

impl PathPolarizationState {
    pub fn from_density(rho: CMat4, provenance: Provenance) -> Self {
        check_density(&rho);
        PathPolarizationState { rho, provenance }
    }

    pub fn density(&self) -> &CMat4 {
        &self.rho
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues(&self.rho)
    }
}

/// PBS coupling polarization to path: H goes to the right fiber, V to the
/// left, coherently. Basis index: 0=H⊗r, 1=H⊗l, 2=V⊗r, 3=V⊗l.
pub fn pbs_route(state: &PolarizationState) -> PathPolarizationState {
    // Isometry |H⟩ → |H,right⟩ (index 0), |V⟩ → |V,left⟩ (index 3).
    let mut rho4 = CMat4::zeros();
    rho4[(0, 0)] = state.rho[(0, 0)];
    rho4[(0, 3)] = state.rho[(0, 1)];
    rho4[(3, 0)] = state.rho[(1, 0)];
    rho4[(3, 3)] = state.rho[(1, 1)];
    PathPolarizationState::from_density(rho4, Provenance::Superposition)
}

/// Equal classical mixture ½(|H,right⟩⟨H,right| + |V,left⟩⟨V,left|).
pub fn make_mixture_left_right() -> PathPolarizationState {
    let mut rho4 = CMat4::zeros();
    rho4[(0, 0)] = Complex64::new(0.5, 0.0);
    rho4[(3, 3)] = Complex64::new(0.5, 0.0);
    PathPolarizationState::from_density(rho4, Provenance::Mixture)
}

/// Path-basis marginals (p_right, p_left).
pub fn path_probabilities(state: &PathPolarizationState) -> (f64, f64) {
    let r = &state.rho;
    let p_right = (r[(0, 0)] + r[(2, 2)]).re;
    let p_left = (r[(1, 1)] + r[(3, 3)]).re;
    (p_right, p_left)
}

/// Two-photon polarization state over {HH, HV, VH, VV}.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    rho: CMat4,
}

impl TwoPhotonState {
    pub fn from_density(rho: CMat4) -> Self {
        check_density(&rho);
        TwoPhotonState { rho }
    }

    /// Product state of two independent single-photon states.
    pub fn product(a: &PolarizationState, b: &PolarizationState) -> Self {
        Self::from_density(a.rho.kronecker(&b.rho))
    }

    pub fn density(&self) -> &CMat4 {
        &self.rho
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigenvalues(&self.rho)
    }

    /// Partial trace over the other side.
    pub fn reduced(&self, side: Side) -> PolarizationState {
        let r = &self.rho;
        let mut out = CMat2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                out[(i, j)] = match side {
                    // Trace over B: block-row/column structure (A ⊗ B).
                    Side::A => r[(2 * i, 2 * j)] + r[(2 * i + 1, 2 * j + 1)],
                    Side::B => r[(i, j)] + r[(i + 2, j + 2)],
                };
            }
        }
        PolarizationState::from_density(out)
    }

    /// Von Neumann entropy (nats) of the reduced state on one side.
    pub fn reduced_entropy(&self, side: Side) -> f64 {
        self.reduced(side)
            .eigenvalues()
            .iter()
            .filter(|&&l| l > 1e-15)
            .map(|&l| -l * l.ln())
            .sum()
    }
}

/// Maximally entangled pair (|HH⟩ + |VV⟩)/√2 from the two-crystal source.
pub fn make_bell_state() -> TwoPhotonState {
    let h = Complex64::new(0.5, 0.0);
    let mut rho = CMat4::zeros();
    rho[(0, 0)] = h;
    rho[(0, 3)] = h;
    rho[(3, 0)] = h;
    rho[(3, 3)] = h;
    TwoPhotonState::from_density(rho)
}

/// Probability per produced pair that both photons pass analyzers at
/// (θA, θB). For the Bell state this is ½cos²(θA − θB).
pub fn coincidence_prob(state: &TwoPhotonState, theta_a: AnalyzerSetting, theta_b: AnalyzerSetting) -> f64 {
    let pa = projector2(theta_a.radians());
    let pb = projector2(theta_b.radians());
    (pa.kronecker(&pb) * state.rho).trace().re
}

/// Marginal probability that the photon on `side` passes its analyzer.
pub fn singles_prob(state: &TwoPhotonState, side: Side, theta: AnalyzerSetting) -> f64 {
    let p = projector2(theta.radians());
    let id = CMat2::identity();
    let op = match side {
        Side::A => p.kronecker(&id),
        Side::B => id.kronecker(&p),
    };
    (op * state.rho).trace().re
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hwp_rotates_v_to_antidiagonal() {
        // linear at phi maps to 2*theta - phi: 90 deg -> -45 deg
        let d = apply_hwp(&PolarizationState::vertical(), 22.5);
        let diag = PolarizationState::linear(-45.0);
        assert!(d.max_abs_diff(&diag) < 1e-12);
    }

    #[test]
    fn hwp_fast_axis_eigenstate() {
        let h = PolarizationState::horizontal();
        let out = apply_hwp(&h, 0.0);
        assert!(out.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn hwp_at_45_swaps_h_and_v() {
        let h = PolarizationState::horizontal();
        let v = apply_hwp(&h, 45.0);
        assert!(v.max_abs_diff(&PolarizationState::vertical()) < 1e-12);
        let back = apply_hwp(&v, 45.0);
        assert!(back.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn pbs_on_diagonal_gives_equal_superposition() {
        let d = apply_hwp(&PolarizationState::vertical(), 22.5);
        let routed = pbs_route(&d);
        let (pr, pl) = path_probabilities(&routed);
        assert_abs_diff_eq!(pr, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pl, 0.5, epsilon = 1e-12);
        // Eq-style superposition is pure.
        assert_abs_diff_eq!(routed.purity(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pbs_on_h_routes_right() {
        let routed = pbs_route(&PolarizationState::horizontal());
        let (pr, pl) = path_probabilities(&routed);
        assert_abs_diff_eq!(pr, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pl, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pbs_at_30_degrees() {
        let routed = pbs_route(&PolarizationState::linear(30.0));
        let (pr, _) = path_probabilities(&routed);
        assert_abs_diff_eq!(pr, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn mixture_spectrum_and_purity() {
        let m = make_mixture_left_right();
        let mut ev = m.eigenvalues();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_abs_diff_eq!(ev[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 0.5, epsilon = 1e-12);
        assert!(ev[2].abs() < 1e-12 && ev[3].abs() < 1e-12);
        assert_abs_diff_eq!(m.purity(), 0.5, epsilon = 1e-12);
        let (pr, pl) = path_probabilities(&m);
        assert_eq!((pr, pl), (0.5, 0.5));
    }

    #[test]
    fn superposition_and_mixture_have_identical_path_marginals() {
        let sup = pbs_route(&apply_hwp(&PolarizationState::vertical(), 22.5));
        let mix = make_mixture_left_right();
        let (sr, sl) = path_probabilities(&sup);
        let (mr, ml) = path_probabilities(&mix);
        assert_abs_diff_eq!(sr, mr, epsilon = 1e-12);
        assert_abs_diff_eq!(sl, ml, epsilon = 1e-12);
    }

    #[test]
    fn bell_state_is_pure_and_maximally_entangled() {
        let bell = make_bell_state();
        assert_abs_diff_eq!(bell.purity(), 1.0, epsilon = 1e-12);
        let mut ev = bell.reduced(Side::A).eigenvalues();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_abs_diff_eq!(ev[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(bell.reduced_entropy(Side::A), std::f64::consts::LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(bell.reduced_entropy(Side::B), std::f64::consts::LN_2, epsilon = 1e-9);
    }

    #[test]
    fn bell_coincidence_matches_half_cos_squared() {
        let bell = make_bell_state();
        let c = coincidence_prob(&bell, AnalyzerSetting::new(22.5), AnalyzerSetting::new(0.0));
        assert_abs_diff_eq!(c, 0.5 * 22.5f64.to_radians().cos().powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(c, 0.426777, epsilon = 1e-6);
        let orth = coincidence_prob(&bell, AnalyzerSetting::new(0.0), AnalyzerSetting::new(90.0));
        assert_abs_diff_eq!(orth, 0.0, epsilon = 1e-12);
        let aligned = coincidence_prob(&bell, AnalyzerSetting::new(45.0), AnalyzerSetting::new(45.0));
        assert_abs_diff_eq!(aligned, 0.5, epsilon = 1e-12);
        let same = coincidence_prob(&bell, AnalyzerSetting::new(0.0), AnalyzerSetting::new(0.0));
        assert_abs_diff_eq!(same, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn bell_singles_are_half_everywhere() {
        let bell = make_bell_state();
        for deg in [0.0, 22.5, 45.0, 67.5, 123.4] {
            assert_abs_diff_eq!(
                singles_prob(&bell, Side::A, AnalyzerSetting::new(deg)),
                0.5,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                singles_prob(&bell, Side::B, AnalyzerSetting::new(deg)),
                0.5,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn product_state_singles() {
        let hh = TwoPhotonState::product(&PolarizationState::horizontal(), &PolarizationState::horizontal());
        assert_abs_diff_eq!(singles_prob(&hh, Side::A, AnalyzerSetting::new(0.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn analyzer_angle_normalization() {
        assert_abs_diff_eq!(AnalyzerSetting::new(190.0).degrees(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(AnalyzerSetting::new(-10.0).degrees(), 170.0, epsilon = 1e-12);
        assert_abs_diff_eq!(AnalyzerSetting::new(180.0).degrees(), 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn hwp_is_an_involution(phi in 0.0..180.0f64, hwp in 0.0..180.0f64) {
            let s = PolarizationState::linear(phi);
            let twice = apply_hwp(&apply_hwp(&s, hwp), hwp);
            prop_assert!(twice.max_abs_diff(&s) < 1e-10);
        }

        #[test]
        fn malus_law(phi in 0.0..180.0f64, ana in 0.0..180.0f64) {
            let s = PolarizationState::linear(phi);
            let p = s.analyzer_prob(AnalyzerSetting::new(ana));
            let expect = (phi - ana).to_radians().cos().powi(2);
            prop_assert!((p - expect).abs() < 1e-12);
        }

        #[test]
        fn hwp_maps_phi_to_mirror(phi in 0.0..180.0f64, hwp in 0.0..180.0f64) {
            let out = apply_hwp(&PolarizationState::linear(phi), hwp);
            let expect = PolarizationState::linear(2.0 * hwp - phi);
            prop_assert!(out.max_abs_diff(&expect) < 1e-10);
        }

        #[test]
        fn pbs_path_probabilities_follow_malus(phi in 0.0..180.0f64) {
            let routed = pbs_route(&PolarizationState::linear(phi));
            let (pr, pl) = path_probabilities(&routed);
            prop_assert!((pr + pl - 1.0).abs() < 1e-12);
            prop_assert!((pr - phi.to_radians().cos().powi(2)).abs() < 1e-12);
            // Coherent routing preserves purity.
            prop_assert!((routed.purity() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn bell_coincidence_depends_only_on_angle_difference(a in 0.0..180.0f64, b in 0.0..180.0f64, shift in 0.0..180.0f64) {
            let bell = make_bell_state();
            let c1 = coincidence_prob(&bell, AnalyzerSetting::new(a), AnalyzerSetting::new(b));
            let c2 = coincidence_prob(&bell, AnalyzerSetting::new(a + shift), AnalyzerSetting::new(b + shift));
            prop_assert!((c1 - c2).abs() < 1e-12);
        }

        #[test]
        fn state_producers_yield_valid_spectra(phi in 0.0..180.0f64, hwp in 0.0..180.0f64) {
            let s = apply_hwp(&PolarizationState::linear(phi), hwp);
            for l in s.eigenvalues() {
                prop_assert!(l >= -STATE_TOL);
            }
            let routed = pbs_route(&s);
            for l in routed.eigenvalues() {
                prop_assert!(l >= -STATE_TOL);
            }
        }
    }
}
