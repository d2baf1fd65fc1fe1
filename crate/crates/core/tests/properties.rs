//! Property tests for the geometric and post-processing invariants.

use evolfem::geometry::{extract_surface, select_active_region, NodalLevelSet};
use evolfem::mesh::BackgroundMesh;
use evolfem::postproc::eoc;
use evolfem::vec3::{dist, scale, Vec3};
use proptest::prelude::*;

fn sphere_levelset(mesh: &BackgroundMesh, radius: f64, center: Vec3) -> NodalLevelSet {
    NodalLevelSet {
        time: 0.0,
        values: (0..mesh.n_vertices())
            .map(|v| dist(mesh.vertex_coords(v), center) - radius)
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eoc_is_antisymmetric(a in 1e-8f64..1e3, b in 1e-8f64..1e3) {
        let fwd = eoc(a, b).unwrap();
        let bwd = eoc(b, a).unwrap();
        prop_assert!((fwd + bwd).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_preserves_patches(
        cx in -0.3f64..0.3,
        cy in -0.3f64..0.3,
        cz in -0.3f64..0.3,
        radius in 0.7f64..1.3,
    ) {
        let mesh = BackgroundMesh::build([-2.0; 3], [2.0; 3], 0.5).unwrap();
        let ls = sphere_levelset(&mesh, radius, [cx, cy, cz]);
        let flipped = NodalLevelSet {
            time: 0.0,
            values: ls.values.iter().map(|v| -v).collect(),
        };
        let s = extract_surface(&mesh, &ls).unwrap();
        let sf = extract_surface(&mesh, &flipped).unwrap();
        prop_assert_eq!(s.patches.len(), sf.patches.len());
        prop_assert!((s.total_area - sf.total_area).abs() <= 1e-11 * s.total_area);
        for (a, b) in s.patches.iter().zip(sf.patches.iter()) {
            prop_assert_eq!(a.tet, b.tet);
            prop_assert!(dist(a.normal, scale(b.normal, -1.0)) < 1e-12);
        }
    }

    #[test]
    fn band_grows_monotonically(
        cx in -0.2f64..0.2,
        d1 in 0.0f64..0.3,
        d2 in 0.0f64..0.3,
    ) {
        let mesh = BackgroundMesh::build([-2.0; 3], [2.0; 3], 0.5).unwrap();
        let ls = sphere_levelset(&mesh, 1.0, [cx, 0.05, -0.02]);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let small = select_active_region(&mesh, &ls, lo).unwrap();
        let large = select_active_region(&mesh, &ls, hi).unwrap();
        for tet in &small.band {
            prop_assert!(large.contains_tet(*tet));
        }
        for dof in &small.active_dofs {
            prop_assert!(large.active_dofs.binary_search(dof).is_ok());
        }
    }
}
