//! Nonconforming Trefftz virtual element solver for the 2D homogeneous
//! Helmholtz equation with impedance boundary conditions on polygonal meshes.
//!
//! The discrete space is built from plane waves: each element carries a set of
//! bulk plane waves, each edge a filtered set of plane-wave traces, and the
//! degrees of freedom are edge moments against those traces. Interelement
//! continuity is imposed weakly through the shared edge moments. All
//! plane-wave/plane-wave integrals are evaluated in closed form; a computable
//! elementwise projector onto the plane-wave space plus a diagonal
//! stabilization yield the discrete sesquilinear form.
//!
//! Pipeline: build or load a [`mesh::PolygonalMesh`], choose a
//! [`planewave::DirectionSet`], filter per-edge bases, assemble the local
//! operators in [`element`], couple and solve in [`system`], and measure the
//! projected relative L2 error in [`errors`]. The [`cli`] module wraps this
//! into configurable h-convergence studies with CSV and SVG output.

pub mod analytic;
pub mod cli;
pub mod element;
pub mod errors;
pub mod mesh;
pub mod planewave;
pub mod quad;
pub mod system;
