//! Kernel bases `g(p, q)` and point/aggregate contributions `m . g(p, q)`.
//!
//! All evaluation is generic over [`Real`] so the estimators can run in
//! either 32- or 64-bit arithmetic; stored geometry stays in `f64` and is
//! rounded on read.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::octree::Octree;
use crate::types::SourceSet;

/// Floating-point type used for kernel evaluation and accumulation.
pub trait Real:
    num_traits::Float + std::fmt::Debug + std::iter::Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

#[inline]
pub fn vec_of<T: Real>(p: Vec3) -> [T; 3] {
    [T::of(p[0]), T::of(p[1]), T::of(p[2])]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `g = -1 / r`
    Coulomb,
    /// `g = (p - q) / (4 pi r^3)`; with mass = area * normal this sums to a
    /// winding number.
    WindingDipole,
    /// `g = exp(-alpha r)`; post-transformed into a smooth distance.
    SmoothExp,
}

impl KernelKind {
    pub fn channel_count(self) -> usize {
        match self {
            KernelKind::WindingDipole => 3,
            KernelKind::Coulomb | KernelKind::SmoothExp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Coulomb => "coulomb",
            KernelKind::WindingDipole => "winding_dipole",
            KernelKind::SmoothExp => "smooth_exp",
        }
    }
}

pub const DEFAULT_DISTANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_SMOOTH_ALPHA: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub alpha: f64,
    pub distance_floor: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            alpha: DEFAULT_SMOOTH_ALPHA,
            distance_floor: DEFAULT_DISTANCE_FLOOR,
        }
    }

    pub fn coulomb() -> Self {
        Self::new(KernelKind::Coulomb)
    }

    pub fn winding() -> Self {
        Self::new(KernelKind::WindingDipole)
    }

    pub fn smooth_exp(alpha: f64) -> Self {
        KernelSpec {
            alpha,
            ..Self::new(KernelKind::SmoothExp)
        }
    }

    pub fn channel_count(&self) -> usize {
        self.kind.channel_count()
    }
}

/// The vector basis `g(p, q)`; only the first `channel_count` entries are
/// meaningful.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelBasisValue<T = f64> {
    pub value: [T; 3],
    pub channels: usize,
}

impl<T: Real> KernelBasisValue<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.value[..self.channels]
    }

    /// `mass . g`, accumulated in channel order.
    #[inline]
    pub fn dot(&self, mass: &[f64]) -> T {
        let mut acc = T::of(mass[0]) * self.value[0];
        for (m, v) in mass[1..self.channels].iter().zip(&self.value[1..self.channels]) {
            acc = acc + T::of(*m) * *v;
        }
        acc
    }
}

/// Evaluates `g(p, q)` with the distance clamped below by `distance_floor`.
#[inline]
pub fn kernel_basis<T: Real>(kernel: &KernelSpec, p: [T; 3], q: [T; 3]) -> KernelBasisValue<T> {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        .sqrt()
        .max(T::of(kernel.distance_floor));
    let zero = T::zero();
    match kernel.kind {
        KernelKind::Coulomb => KernelBasisValue {
            value: [-r.recip(), zero, zero],
            channels: 1,
        },
        KernelKind::SmoothExp => KernelBasisValue {
            value: [(-T::of(kernel.alpha) * r).exp(), zero, zero],
            channels: 1,
        },
        KernelKind::WindingDipole => {
            let s = (T::of(4.0 * PI) * r * r * r).recip();
            KernelBasisValue {
                value: [d[0] * s, d[1] * s, d[2] * s],
                channels: 3,
            }
        }
    }
}

/// `m_i . g(p_i, q)` for source `i`.
#[inline]
pub fn point_contribution<T: Real>(
    kernel: &KernelSpec,
    sources: &SourceSet,
    i: usize,
    q: [T; 3],
) -> T {
    kernel_basis(kernel, vec_of::<T>(sources.position(i)), q).dot(sources.mass(i))
}

/// Aggregate term `m~_a . g(p~_a, q)` of tree node `node`.
#[inline]
pub fn node_contribution<T: Real>(kernel: &KernelSpec, tree: &Octree, node: usize, q: [T; 3]) -> T {
    kernel_basis(kernel, vec_of::<T>(tree.nodes[node].center_of_mass), q).dot(tree.node_mass(node))
}

/// Result of the scalar post-transform; `flagged` marks values that could
/// not be transformed (e.g. a non-positive smooth-distance sum).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transformed {
    pub value: f64,
    pub flagged: bool,
}

/// Smooth-distance kernels map the raw sum to `-ln(raw) / alpha`; other
/// kernels are passed through. A non-positive raw sum under `SmoothExp`
/// yields `+inf` with the flag set.
pub fn post_transform(kernel: &KernelSpec, raw: f64) -> Transformed {
    match kernel.kind {
        KernelKind::SmoothExp => {
            if raw > 0.0 {
                Transformed {
                    value: -raw.ln() / kernel.alpha,
                    flagged: false,
                }
            } else {
                Transformed {
                    value: f64::INFINITY,
                    flagged: true,
                }
            }
        }
        KernelKind::Coulomb | KernelKind::WindingDipole => Transformed {
            value: raw,
            flagged: !raw.is_finite(),
        },
    }
}
