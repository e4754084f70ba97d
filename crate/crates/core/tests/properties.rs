use proptest::prelude::*;

use stefan_homog::cell::{psi0_solve, DissipationKind, DissipationPotential};
use stefan_homog::convex::{ConvexPotential, KirchhoffMap, PotentialKind};
use stefan_homog::fields::{Constitutive, Mode, OscillatoryField, Waveform};
use stefan_homog::grid::mesh::QuadMesh;
use stefan_homog::grid::{
    divergence, gradient, hminus1_norm, inner, inner_vector, CellGrid, DomainGrid, EllipticOperator, GridField, Lattice, VectorField,
};

const TAU: f64 = 2.0 * std::f64::consts::PI;

fn mode() -> impl Strategy<Value = (f64, f64, f64, f64, bool)> {
    (-2.0..2.0f64, 0.1..9.0f64, -9.0..9.0f64, -3.0..3.0f64, any::<bool>())
}

fn field_2d(modes: Vec<(f64, f64, f64, f64, bool)>, constant: f64) -> OscillatoryField {
    let modes = modes
        .into_iter()
        .map(|(a, k1, k2, phase, sine)| {
            let m = if sine { Mode::sine(a, vec![k1, k2]) } else { Mode::cosine(a, vec![k1, k2]) };
            m.with_phase(phase)
        })
        .collect();
    OscillatoryField::try_new(2, constant, modes).unwrap()
}

fn potentials() -> Vec<ConvexPotential> {
    vec![
        ConvexPotential::quadratic(1.0).unwrap(),
        ConvexPotential::quadratic(3.5).unwrap(),
        ConvexPotential::stefan(1.0).unwrap(),
        ConvexPotential::stefan(0.25).unwrap(),
        ConvexPotential::new(
            PotentialKind::Tabulated { breakpoints: vec![-1.0, 0.0, 0.0, 2.0], slopes: vec![-2.0, 0.0, 0.5, 3.0] },
            None,
        )
        .unwrap(),
        ConvexPotential::new(
            PotentialKind::Kirchhoff { base: Box::new(PotentialKind::Stefan { latent: 1.0 }), density: Constitutive::Power { exponent: 2.0 } },
            None,
        )
        .unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn shift_is_translation(modes in prop::collection::vec(mode(), 0..4), c in -3.0..3.0f64,
                            z in prop::array::uniform2(-20.0..20.0f64), y in prop::array::uniform2(-20.0..20.0f64)) {
        let f = field_2d(modes, c);
        let shifted = f.shifted(&y).unwrap();
        let a = shifted.eval(&z).unwrap();
        let b = f.eval(&[z[0] + y[0], z[1] + y[1]]).unwrap();
        prop_assert!((a - b).abs() <= 1e-11 * (1.0 + f.sup_bound()), "{} vs {}", a, b);
    }

    #[test]
    fn evaluation_is_bounded(modes in prop::collection::vec(mode(), 0..5), c in -3.0..3.0f64, z in prop::array::uniform2(-50.0..50.0f64)) {
        let f = field_2d(modes, c);
        prop_assert!(f.value(&z).abs() <= f.sup_bound() + 1e-12);
    }

    #[test]
    fn fenchel_identity_on_the_subdifferential(idx in 0usize..6, u in -8.0..8.0f64, g in 0.2..4.0f64) {
        let ps = potentials();
        let p = &ps[idx];
        let local = p.with_multiplier(g);
        let sub = local.subdifferential(u);
        for w in [sub.lo, sub.mid(), sub.hi] {
            let gap = local.value(u) + local.conjugate(w) - u * w;
            prop_assert!(gap.abs() <= 1e-8 * (1.0 + (u * w).abs()), "gap {} at u={}, w={}", gap, u, w);
        }
    }

    #[test]
    fn fenchel_young_inequality(idx in 0usize..6, u in -8.0..8.0f64, w in -8.0..8.0f64) {
        let ps = potentials();
        let local = ps[idx].with_multiplier(1.0);
        prop_assert!(local.value(u) + local.conjugate(w) >= u * w - 1e-9 * (1.0 + (u * w).abs()));
    }

    #[test]
    fn beta_inverts_the_subdifferential(idx in 0usize..6, u in -6.0..6.0f64) {
        let ps = potentials();
        let local = ps[idx].with_multiplier(1.0);
        let sub = local.subdifferential(u);
        prop_assert!((local.beta(sub.mid()) - u).abs() <= 1e-8 * (1.0 + u.abs()));
    }

    #[test]
    fn subdifferential_is_monotone(idx in 0usize..6, u1 in -8.0..8.0f64, u2 in -8.0..8.0f64, t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let ps = potentials();
        let local = ps[idx].with_multiplier(1.0);
        let (a, b) = (local.subdifferential(u1), local.subdifferential(u2));
        let s1 = a.lo + t1 * (a.hi - a.lo);
        let s2 = b.lo + t2 * (b.hi - b.lo);
        prop_assert!((s1 - s2) * (u1 - u2) >= -1e-12);
    }

    #[test]
    fn resolvent_is_nonexpansive(idx in 0usize..6, v1 in -10.0..10.0f64, v2 in -10.0..10.0f64, tau in 0.01..5.0f64) {
        let ps = potentials();
        let local = ps[idx].with_multiplier(1.0);
        let (r1, s1) = local.resolvent(v1, tau);
        let (r2, _) = local.resolvent(v2, tau);
        prop_assert!((r1 - r2).abs() <= (v1 - v2).abs() + 1e-10);
        prop_assert!((r1 + tau * s1 - v1).abs() <= 1e-9 * (1.0 + v1.abs()));
        prop_assert!(local.subdifferential(r1).contains(s1, 1e-8));
    }

    #[test]
    fn kirchhoff_round_trip(u in -10.0..10.0f64, which in 0usize..3) {
        let density = [Constitutive::Constant { value: 2.0 }, Constitutive::Power { exponent: 2.5 }, Constitutive::Power { exponent: 1.5 }][which];
        let k = KirchhoffMap::new(density).unwrap();
        prop_assert!((k.inverse(k.forward(u)) - u).abs() <= 1e-10);
    }

    #[test]
    fn periodic_divergence_is_minus_the_adjoint(values in prop::collection::vec(-1.0..1.0f64, 3 * 64)) {
        let lat = Lattice::periodic(2, 8, [1.0, 1.0]);
        let u = GridField::new(lat, values[..64].to_vec()).unwrap();
        let f = VectorField { lattice: lat, components: vec![values[64..128].to_vec(), values[128..].to_vec()] };
        let lhs = inner_vector(&gradient(&u), &f).unwrap();
        let rhs = -inner(&u, &divergence(&f)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn quadrature_divergence_is_the_transpose(values in prop::collection::vec(-1.0..1.0f64, 25 + 2 * 64)) {
        let mesh = QuadMesh::new(Lattice::dirichlet(2, 4));
        let u = &values[..25];
        let nq = mesh.quads().len();
        let flux: Vec<[f64; 2]> = (0..nq).map(|q| [values[25 + (2 * q) % 128], values[25 + (2 * q + 1) % 128]]).collect();
        let g = mesh.gradient_at_quads(u);
        let lhs: f64 = mesh.quads().iter().zip(&g).zip(&flux).map(|((q, g), a)| q.weight * (g[0] * a[0] + g[1] * a[1])).sum();
        let t = mesh.transpose(&flux);
        let rhs: f64 = u.iter().zip(&t).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn hminus1_is_quadratic(values in prop::collection::vec(-1.0..1.0f64, 17), c in -4.0..4.0f64) {
        let grid = DomainGrid::new(1, 16).unwrap();
        let op = EllipticOperator::constant(&grid, &[1.5]).unwrap();
        let f = GridField::new(grid.lattice(), values).unwrap();
        let scaled = GridField::new(grid.lattice(), f.values.iter().map(|v| c * v).collect()).unwrap();
        let (a, b) = (hminus1_norm(&f, &op).unwrap(), hminus1_norm(&scaled, &op).unwrap());
        prop_assert!((b - c * c * a).abs() <= 1e-9 * (1.0 + b.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn psi0_is_convex_with_valid_subgradients(e1 in -2.0..2.0f64, e2 in -2.0..2.0f64, mu in 0.0..1.0f64) {
        let grid = CellGrid::new(1, 64).unwrap();
        let g = OscillatoryField::try_new(1, 2.0, vec![Mode { amplitude: 1.0, frequency: vec![TAU], phase: 0.0, waveform: Waveform::Sine }]).unwrap();
        let psi = DissipationPotential { kind: DissipationKind::Regularized { mu }, oscillation: Some(g), modulation: None };
        let a = psi0_solve(&grid, &psi, 0.0, &[e1], 1e-10).unwrap();
        let b = psi0_solve(&grid, &psi, 0.0, &[e2], 1e-10).unwrap();
        let m = psi0_solve(&grid, &psi, 0.0, &[0.5 * (e1 + e2)], 1e-10).unwrap();
        let scale = 1e-8 * (1.0 + a.value.abs() + b.value.abs());
        prop_assert!(m.value <= 0.5 * (a.value + b.value) + scale);
        prop_assert!(b.value >= a.value + a.subgradient[0] * (e2 - e1) - scale);
    }
}
