//! Existence of metrics of a given index from topological data.
//!
//! The rules are lookups on the Euler characteristic, dimension parity,
//! orientability and two tables for spheres, closed under the duality
//! `g ↦ −g` that exchanges the indices `ν` and `m − ν`. When no rule applies
//! the verdict is `unknown`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A compact surface identified by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    Sphere,
    Torus,
    KleinBottle,
    ProjectivePlane,
    /// Connected sum of `genus` tori.
    Orientable { genus: u32 },
    /// Connected sum of `crosscaps` projective planes.
    NonOrientable { crosscaps: u32 },
}

impl Surface {
    pub fn euler_characteristic(&self) -> i64 {
        match *self {
            Surface::Sphere => 2,
            Surface::Torus | Surface::KleinBottle => 0,
            Surface::ProjectivePlane => 1,
            Surface::Orientable { genus } => 2 - 2 * genus as i64,
            Surface::NonOrientable { crosscaps } => 2 - crosscaps as i64,
        }
    }

    pub fn is_orientable(&self) -> bool {
        matches!(self, Surface::Sphere | Surface::Torus | Surface::Orientable { .. })
    }
}

/// Topological data of a manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldDescriptor {
    Sphere { dim: usize },
    Surface { surface: Surface },
    Generic { compact: bool, orientable: bool, dim: usize, euler_characteristic: Option<i64> },
}

impl ManifoldDescriptor {
    pub fn dim(&self) -> usize {
        match *self {
            ManifoldDescriptor::Sphere { dim } | ManifoldDescriptor::Generic { dim, .. } => dim,
            ManifoldDescriptor::Surface { .. } => 2,
        }
    }

    pub fn is_compact(&self) -> bool {
        match *self {
            ManifoldDescriptor::Generic { compact, .. } => compact,
            _ => true,
        }
    }

    pub fn is_orientable(&self) -> bool {
        match *self {
            ManifoldDescriptor::Sphere { .. } => true,
            ManifoldDescriptor::Surface { surface } => surface.is_orientable(),
            ManifoldDescriptor::Generic { orientable, .. } => orientable,
        }
    }

    pub fn euler_characteristic(&self) -> Option<i64> {
        match *self {
            ManifoldDescriptor::Sphere { dim } => Some(if dim % 2 == 0 { 2 } else { 0 }),
            ManifoldDescriptor::Surface { surface } => Some(surface.euler_characteristic()),
            ManifoldDescriptor::Generic { euler_characteristic, .. } => euler_characteristic,
        }
    }

    /// Rejects zero dimension and closed odd-dimensional manifolds with
    /// non-zero Euler characteristic.
    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        if m == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if let ManifoldDescriptor::Generic { compact: true, euler_characteristic: Some(chi), .. } = *self {
            if m % 2 == 1 && chi != 0 {
                return Err(Error::invalid(format!("a closed {m}-manifold has Euler characteristic 0, not {chi}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Existence {
    Yes,
    No,
    Unknown,
}

/// Whether metrics of index `index` exist on a manifold of dimension `dim`,
/// with the rule that decided it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstructionVerdict {
    pub dim: usize,
    pub index: usize,
    pub exists: Existence,
    pub rule: String,
    pub explanation: String,
    /// Set when the verdict was transported from the index `dim − index`.
    pub via_duality: bool,
}

impl ObstructionVerdict {
    fn new(dim: usize, index: usize, exists: Existence, rule: &str, explanation: impl Into<String>) -> Self {
        Self { dim, index, exists, rule: rule.to_string(), explanation: explanation.into(), via_duality: false }
    }
}

/// The verdict for index `m − ν`: `g` has index `ν` exactly when `−g` has
/// index `m − ν`. Applying it twice returns the original verdict.
pub fn index_duality(verdict: &ObstructionVerdict) -> ObstructionVerdict {
    ObstructionVerdict {
        index: verdict.dim - verdict.index,
        via_duality: !verdict.via_duality,
        ..verdict.clone()
    }
}

/// Existence of Lorentzian metrics (index 1).
///
/// Rules, in order: non-compact manifolds always admit one; a compact
/// surface admits one exactly when `χ = 0`; a compact orientable manifold
/// admits one exactly when `χ = 0`; odd-dimensional orientable manifolds
/// always do. Anything else is unknown.
pub fn lorentzian_exists(desc: &ManifoldDescriptor) -> Result<ObstructionVerdict> {
    desc.validate()?;
    let m = desc.dim();
    let v = |e, rule, text: String| Ok(ObstructionVerdict::new(m, 1, e, rule, text));
    if m == 1 {
        return v(Existence::Yes, "definite", "in dimension 1 a Lorentzian metric is negative definite".into());
    }
    if !desc.is_compact() {
        return v(Existence::Yes, "noncompact", "non-compact manifolds carry a nowhere-vanishing vector field".into());
    }
    let chi = desc.euler_characteristic();
    if m == 2 {
        if let Some(chi) = chi {
            let e = if chi == 0 { Existence::Yes } else { Existence::No };
            return v(e, "compact_surface", format!("a compact surface admits a line field exactly when χ = 0 (χ = {chi})"));
        }
    }
    if desc.is_orientable() {
        if let Some(chi) = chi {
            let e = if chi == 0 { Existence::Yes } else { Existence::No };
            return v(e, "euler_characteristic", format!("a compact orientable manifold admits a line field exactly when χ = 0 (χ = {chi})"));
        }
        if m % 2 == 1 {
            return v(Existence::Yes, "odd_dimension", "the Euler class of an odd-rank oriented bundle vanishes".into());
        }
    }
    v(Existence::Unknown, "none", "no rule applies without further topological data".into())
}

/// Largest power of two dividing `n`.
fn two_part(n: usize) -> usize {
    1 << n.trailing_zeros()
}

/// The existence table for spheres, or `None` when it says nothing.
fn sphere_yes(m: usize, nu: usize) -> Option<&'static str> {
    let low_or_high = |k: usize| nu <= k || nu + k >= m;
    if nu == 0 || nu == m {
        return Some("sphere_definite");
    }
    if m % 2 == 1 && (nu == 1 || nu + 1 == m) {
        return Some("sphere_odd_lorentzian");
    }
    if m % 4 == 3 && low_or_high(3) {
        return Some("sphere_mod4");
    }
    if m % 8 == 7 && low_or_high(7) {
        return Some("sphere_mod8");
    }
    None
}

/// The non-existence table for spheres, or `None` when it says nothing.
fn sphere_no(m: usize, nu: usize) -> Option<&'static str> {
    if m % 2 == 0 && nu >= 1 && nu < m {
        return Some("sphere_even");
    }
    let p = two_part(m + 1);
    if p <= nu && nu + p <= m {
        return Some("sphere_two_power");
    }
    None
}

/// Existence of metrics of index `nu` on the sphere `S^m`.
pub fn sphere_metric_exists(m: usize, nu: usize) -> Result<ObstructionVerdict> {
    if m == 0 || nu > m {
        return Err(Error::invalid(format!("index {nu} is not in 0..={m}")));
    }
    for (dual, n) in [(false, nu), (true, m - nu)] {
        let verdict = if let Some(rule) = sphere_yes(m, n) {
            Some(ObstructionVerdict::new(m, n, Existence::Yes, rule, format!("S^{m} carries a rank-{n} distribution")))
        } else {
            sphere_no(m, n).map(|rule| {
                ObstructionVerdict::new(m, n, Existence::No, rule, format!("S^{m} carries no rank-{n} distribution"))
            })
        };
        if let Some(v) = verdict {
            return Ok(if dual { index_duality(&v) } else { v });
        }
    }
    Ok(ObstructionVerdict::new(m, nu, Existence::Unknown, "none", format!("the sphere tables do not cover index {nu} on S^{m}")))
}

/// Existence of metrics of index `nu` on the described manifold.
pub fn metric_exists(desc: &ManifoldDescriptor, nu: usize) -> Result<ObstructionVerdict> {
    desc.validate()?;
    let m = desc.dim();
    if nu > m {
        return Err(Error::invalid(format!("index {nu} exceeds dimension {m}")));
    }
    if let ManifoldDescriptor::Sphere { dim } = *desc {
        return sphere_metric_exists(dim, nu);
    }
    if nu == 0 || nu == m {
        let v = ObstructionVerdict::new(m, 0, Existence::Yes, "riemannian", "every manifold carries a Riemannian metric");
        return Ok(if nu == 0 { v } else { index_duality(&v) });
    }
    if nu == 1 {
        return lorentzian_exists(desc);
    }
    if nu + 1 == m {
        return Ok(index_duality(&lorentzian_exists(desc)?));
    }
    Ok(ObstructionVerdict::new(m, nu, Existence::Unknown, "none", "no rule covers this index"))
}
