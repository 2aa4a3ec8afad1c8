//! Legacy ASCII VTK snapshots.
//!
//! One unstructured-grid file per snapshot, with the mesh pushed to the
//! deformed configuration (x̂₁, x̂₂·(1 + d)) so the plate motion is visible
//! directly. Vertex velocity and pressure ride along as point data; bubble
//! coefficients are interior enrichment and do not appear.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::geometry::displacement_at_vertices;
use crate::mesh::Mesh;
use crate::stepper::State;

pub fn write_snapshot(path: &Path, mesh: &Mesh, state: &State) -> Result<()> {
    let disp = displacement_at_vertices(mesh, &state.d);
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();

    let mut s = String::with_capacity(64 * nv);
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "plate-channel state, step {} t {}", state.step, state.t);
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(s, "POINTS {nv} double");
    for (v, x) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(s, "{} {} 0", x[0], x[1] + disp[v]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for tri in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", tri.v[0], tri.v[1], tri.v[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }

    let _ = writeln!(s, "POINT_DATA {nv}");
    s.push_str("VECTORS velocity double\n");
    for v in 0..nv {
        let _ = writeln!(s, "{} {} 0", state.u_vtx[0][v], state.u_vtx[1][v]);
    }
    s.push_str("SCALARS pressure double 1\nLOOKUP_TABLE default\n");
    for v in 0..nv {
        let _ = writeln!(s, "{}", state.p[v]);
    }

    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_reference_mesh;
    use crate::stepper::{StepControls, Stepper};
    use std::sync::Arc;

    #[test]
    fn snapshot_is_wellformed_and_deformed() {
        let mesh = Arc::new(build_reference_mesh(2.0, 6, 3).unwrap());
        let p = crate::assembly::Params {
            rho_f: 1.0,
            rho_s: 1.0,
            mu: 0.1,
            gamma1: 0.1,
            gamma2: 0.1,
            gamma3: 0.0,
        };
        let st = Stepper::new(mesh.clone(), p, StepControls::new(1e-3, 1e-2)).unwrap();
        let mut s0 = st.initial_state(None, None, None).unwrap();
        for v in s0.d.iter_mut() {
            *v = 0.25;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.vtk");
        write_snapshot(&path, &mesh, &s0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
        assert!(text.contains(&format!("POINTS {} double", mesh.num_vertices())));
        assert!(text.contains("CELL_TYPES"));
        assert!(text.contains("VECTORS velocity double"));
        // A top vertex moved up by 0.25·1.0.
        assert!(text.contains("1.25"));
        // Deterministic output: a second write is byte-identical.
        let path2 = dir.path().join("snap2.vtk");
        write_snapshot(&path2, &mesh, &s0).unwrap();
        assert_eq!(text, std::fs::read_to_string(&path2).unwrap());
    }
}
