//! Model constants and the external / interaction potential families.
//!
//! All positions are in the scaled variables `x = z/√N`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridConvolver, GridDensity, SignedGridField};

/// Magnetic field `B`, Laughlin exponent `ℓ` and coupling `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(rename = "B")]
    pub b: f64,
    pub ell: u32,
    #[serde(default)]
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(b: f64, ell: u32, lambda: f64) -> Result<Self> {
        let p = Self { b, ell, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(Error::InvalidParameter(format!("B must be positive, got {}", self.b)));
        }
        if self.ell == 0 {
            return Err(Error::InvalidParameter("ell must be a positive integer".into()));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidParameter("lambda must be finite".into()));
        }
        Ok(())
    }

    /// Density cap `B/(2πℓ)`.
    #[inline]
    pub fn cap(&self) -> f64 {
        self.b / (2.0 * PI * self.ell as f64)
    }

    /// Radius `√(2ℓ/B)` of the unit-mass disk at the cap.
    #[inline]
    pub fn droplet_radius(&self) -> f64 {
        (2.0 * self.ell as f64 / self.b).sqrt()
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }
}

fn origin() -> [f64; 2] {
    [0.0, 0.0]
}

fn one() -> f64 {
    1.0
}

/// Confining potential `v ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ExternalPotential {
    /// `strength·|x - c|²`.
    Quadratic {
        #[serde(default = "one")]
        strength: f64,
        #[serde(default = "origin")]
        center: [f64; 2],
    },
    /// `strength·((1 + |x - c|²)^{s/2} - 1)`: grows like `|x|^s`, smooth
    /// with a non-degenerate minimum at `c`.
    RadialPower {
        s: f64,
        #[serde(default = "one")]
        strength: f64,
        #[serde(default = "origin")]
        center: [f64; 2],
    },
    /// `strength·((x₁² - a²)²/a² + x₂²)`: minima at `(±a, 0)`, saddle at 0.
    DoubleWell {
        separation: f64,
        #[serde(default = "one")]
        strength: f64,
    },
    /// Values at the cell centres of a `[-L, L]²` table, interpolated
    /// bilinearly. Outside the table the nearest interior value plus the
    /// squared distance is used. Critical points are the caller's business.
    Tabulated {
        half_width: f64,
        n: usize,
        values: Vec<f64>,
    },
}

impl ExternalPotential {
    pub fn quadratic() -> Self {
        Self::Quadratic {
            strength: 1.0,
            center: origin(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            Self::Quadratic { strength, .. } if !(*strength > 0.0) => {
                bad(format!("quadratic strength must be positive, got {strength}"))
            }
            Self::RadialPower { s, strength, .. } if !(*s >= 1.0 && *strength > 0.0) => {
                bad(format!("radial power needs s >= 1 and strength > 0, got s={s}"))
            }
            Self::DoubleWell {
                separation,
                strength,
            } if !(*separation > 0.0 && *strength > 0.0) => {
                bad("double well needs positive separation and strength".into())
            }
            Self::Tabulated {
                half_width,
                n,
                values,
            } => {
                if !(*half_width > 0.0) || *n < 2 || values.len() != n * n {
                    return bad(format!("tabulated potential needs n >= 2 and n² values (n={n})"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("tabulated values must be finite and nonnegative".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            Self::Quadratic { strength, center } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                strength * (dx * dx + dy * dy)
            }
            Self::RadialPower {
                s,
                strength,
                center,
            } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                strength * ((1.0 + dx * dx + dy * dy).powf(0.5 * s) - 1.0)
            }
            Self::DoubleWell {
                separation,
                strength,
            } => {
                let a2 = separation * separation;
                let t = x[0] * x[0] - a2;
                strength * (t * t / a2 + x[1] * x[1])
            }
            Self::Tabulated {
                half_width,
                n,
                values,
            } => tabulated(*half_width, *n, values, x).0,
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            Self::Quadratic { strength, center } => [
                2.0 * strength * (x[0] - center[0]),
                2.0 * strength * (x[1] - center[1]),
            ],
            Self::RadialPower {
                s,
                strength,
                center,
            } => {
                let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                let f = strength * s * (1.0 + dx * dx + dy * dy).powf(0.5 * s - 1.0);
                [f * dx, f * dy]
            }
            Self::DoubleWell {
                separation,
                strength,
            } => {
                let a2 = separation * separation;
                [
                    strength * 4.0 * x[0] * (x[0] * x[0] - a2) / a2,
                    strength * 2.0 * x[1],
                ]
            }
            Self::Tabulated {
                half_width,
                n,
                values,
            } => tabulated(*half_width, *n, values, x).1,
        }
    }

    /// Samples `v` at the cell centres.
    pub fn sample(&self, grid: &crate::grid::Grid2D) -> SignedGridField {
        SignedGridField::from_fn(*grid, |x| self.value(x)).expect("potential values are finite")
    }

    /// Same family with every value multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::Quadratic { strength, .. }
            | Self::RadialPower { strength, .. }
            | Self::DoubleWell { strength, .. } => *strength *= c,
            Self::Tabulated { values, .. } => values.iter_mut().for_each(|v| *v *= c),
        }
        out
    }
}

/// Bilinear interpolation on cell-centred nodes. Returns value and gradient.
fn tabulated(half_width: f64, n: usize, values: &[f64], x: [f64; 2]) -> (f64, [f64; 2]) {
    let h = 2.0 * half_width / n as f64;
    let lo = -half_width + 0.5 * h;
    let hi = half_width - 0.5 * h;
    let xc = [x[0].clamp(lo, hi), x[1].clamp(lo, hi)];
    let t = [(xc[0] - lo) / h, (xc[1] - lo) / h];
    let i = (t[0].floor() as usize).min(n - 2);
    let j = (t[1].floor() as usize).min(n - 2);
    let fx = t[0] - i as f64;
    let fy = t[1] - j as f64;
    let at = |a: usize, b: usize| values[b * n + a];
    let (v00, v10, v01, v11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
    let value = v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy;
    let mut grad = [
        ((v10 - v00) * (1.0 - fy) + (v11 - v01) * fy) / h,
        ((v01 - v00) * (1.0 - fx) + (v11 - v10) * fx) / h,
    ];
    let out = [x[0] - xc[0], x[1] - xc[1]];
    for d in 0..2 {
        if out[d] != 0.0 {
            grad[d] = 2.0 * out[d];
        }
    }
    (value + out[0] * out[0] + out[1] * out[1], grad)
}

/// Even, bounded pair interaction `w` with two bounded derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InteractionPotential {
    /// `amplitude·exp(-|x|²/(2·width²))`.
    Gaussian { amplitude: f64, width: f64 },
    /// `1/√(|x|² + a²)` times a C² cutoff switching off over
    /// `[taper_radius, 2·taper_radius]`.
    SmoothedCoulomb { softening: f64, taper_radius: f64 },
    /// `amplitude·exp(1 - 1/(1 - |x|²/R²))` inside `|x| < R`, zero outside.
    Bump { amplitude: f64, radius: f64 },
}

/// Radial profile `f(r)` and its first two derivatives.
#[derive(Debug, Clone, Copy)]
struct Radial {
    f: f64,
    df: f64,
    d2f: f64,
}

impl InteractionPotential {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self::Gaussian { amplitude, width }
    }

    /// Smoothed Coulomb with the cutoff placed at `4L` for a grid of half
    /// width `L`, beyond every in-domain pair distance.
    pub fn smoothed_coulomb(softening: f64, half_width: f64) -> Self {
        Self::SmoothedCoulomb {
            softening,
            taper_radius: 4.0 * half_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Gaussian { amplitude, width } => amplitude.is_finite() && *width > 0.0,
            Self::SmoothedCoulomb {
                softening,
                taper_radius,
            } => *softening > 0.0 && *taper_radius > 0.0,
            Self::Bump { amplitude, radius } => amplitude.is_finite() && *radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad interaction parameters: {self:?}")))
        }
    }

    /// Whether the Fourier transform is nonnegative (positive-semidefinite
    /// pair matrix). The tapered Coulomb counts as positive because the taper
    /// only acts beyond `4L`, outside the range of in-domain distances.
    pub fn fourier_positive(&self) -> bool {
        match self {
            Self::Gaussian { amplitude, .. } => *amplitude >= 0.0,
            Self::SmoothedCoulomb { .. } => true,
            Self::Bump { .. } => false,
        }
    }

    fn radial(&self, r: f64) -> Radial {
        match *self {
            Self::Gaussian { amplitude, width } => {
                let s2 = width * width;
                let f = amplitude * (-0.5 * r * r / s2).exp();
                Radial {
                    f,
                    df: -r / s2 * f,
                    d2f: (r * r / (s2 * s2) - 1.0 / s2) * f,
                }
            }
            Self::SmoothedCoulomb {
                softening,
                taper_radius,
            } => {
                let q = r * r + softening * softening;
                let g = q.powf(-0.5);
                let dg = -r * q.powf(-1.5);
                let d2g = -q.powf(-1.5) + 3.0 * r * r * q.powf(-2.5);
                let (t, dt, d2t) = taper(r, taper_radius);
                Radial {
                    f: g * t,
                    df: dg * t + g * dt,
                    d2f: d2g * t + 2.0 * dg * dt + g * d2t,
                }
            }
            Self::Bump { amplitude, radius } => {
                let r2 = radius * radius;
                let u = 1.0 - r * r / r2;
                if u <= 0.0 {
                    return Radial {
                        f: 0.0,
                        df: 0.0,
                        d2f: 0.0,
                    };
                }
                let f = amplitude * (1.0 - 1.0 / u).exp();
                let dphi = -2.0 * r / (r2 * u * u);
                let d2phi = -2.0 / (r2 * u * u) - 8.0 * r * r / (r2 * r2 * u * u * u);
                Radial {
                    f,
                    df: f * dphi,
                    d2f: f * (dphi * dphi + d2phi),
                }
            }
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.radial(x[0].hypot(x[1])).f
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let df = self.radial(r).df;
        [df * x[0] / r, df * x[1] / r]
    }

    /// `∂²w/∂ŷ²` for a unit vector `ŷ`.
    pub fn second_directional(&self, x: [f64; 2], dir: [f64; 2]) -> f64 {
        let r = x[0].hypot(x[1]);
        let p = self.radial(r);
        if r < 1e-12 {
            return p.d2f;
        }
        let c = (x[0] * dir[0] + x[1] * dir[1]) / r;
        p.d2f * c * c + p.df / r * (1.0 - c * c)
    }

    fn support_scan_radius(&self) -> f64 {
        match *self {
            Self::Gaussian { width, .. } => 12.0 * width,
            Self::SmoothedCoulomb { taper_radius, .. } => 2.0 * taper_radius,
            Self::Bump { radius, .. } => radius,
        }
    }

    /// `(‖w‖∞, ‖∇w‖∞, sup_ŷ ‖∂²_ŷ w‖∞)` from a fine radial scan.
    pub fn sup_norms(&self) -> [f64; 3] {
        let r_max = self.support_scan_radius();
        let steps = 200_000;
        let mut out = [0.0f64; 3];
        for i in 0..=steps {
            let r = r_max * i as f64 / steps as f64;
            let p = self.radial(r);
            let second = if r == 0.0 {
                p.d2f.abs()
            } else {
                p.d2f.abs().max((p.df / r).abs())
            };
            out[0] = out[0].max(p.f.abs());
            out[1] = out[1].max(p.df.abs());
            out[2] = out[2].max(second);
        }
        out
    }

    /// Constant `C_w` bounding all three sup norms.
    pub fn c_w(&self) -> f64 {
        let s = self.sup_norms();
        s[0].max(s[1]).max(s[2])
    }

    pub fn scaled(&self, c: f64) -> Self {
        match *self {
            Self::Gaussian { amplitude, width } => Self::Gaussian {
                amplitude: amplitude * c,
                width,
            },
            Self::Bump { amplitude, radius } => Self::Bump {
                amplitude: amplitude * c,
                radius,
            },
            // No amplitude parameter; scale through λ instead.
            Self::SmoothedCoulomb { .. } => self.clone(),
        }
    }

    pub fn convolver(&self, grid: crate::grid::Grid2D) -> GridConvolver {
        GridConvolver::from_displacement(grid, |d| self.value(d))
    }
}

/// `1` below `R`, quintic smoothstep down to `0` at `2R`.
fn taper(r: f64, radius: f64) -> (f64, f64, f64) {
    if r <= radius {
        return (1.0, 0.0, 0.0);
    }
    if r >= 2.0 * radius {
        return (0.0, 0.0, 0.0);
    }
    let t = (r - radius) / radius;
    let s = 6.0 * t.powi(5) - 15.0 * t.powi(4) + 10.0 * t.powi(3);
    let ds = 30.0 * t.powi(4) - 60.0 * t.powi(3) + 30.0 * t * t;
    let d2s = 120.0 * t.powi(3) - 180.0 * t * t + 60.0 * t;
    (1.0 - s, -ds / radius, -d2s / (radius * radius))
}

/// JSON model block: `{"B", "ell", "lambda", "v": {...}, "w": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub params: ModelParams,
    pub v: ExternalPotential,
    pub w: InteractionPotential,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.v.validate()?;
        self.w.validate()
    }
}

/// `Φ_μ = v + λ w∗μ` on the grid.
pub fn mean_field_potential(
    v: &ExternalPotential,
    w: &InteractionPotential,
    lambda: f64,
    mu: &GridDensity,
) -> SignedGridField {
    let grid = *mu.grid();
    let mut values = v.sample(&grid).into_values();
    if lambda != 0.0 {
        let conv = crate::grid::convolve(|d| w.value(d), mu);
        for (p, c) in values.iter_mut().zip(conv.values()) {
            *p += lambda * c;
        }
    }
    SignedGridField::new(grid, values).expect("finite potential")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialBoundsReport {
    /// `max |w∗μ|`.
    pub max_value: f64,
    /// `max |∂_x w∗μ|`, `max |∂_y w∗μ|`.
    pub max_gradient: [f64; 2],
    /// `max |∂²_xx w∗μ|`, `max |∂²_yy w∗μ|`.
    pub max_second: [f64; 2],
    /// Sup norms of `w`, `∇w`, `∂²w`.
    pub sup_norms: [f64; 3],
    pub c_w: f64,
    /// `C_w · mass(μ)`.
    pub bound: f64,
    pub violated: bool,
}

/// Checks `‖w∗μ‖, ‖∇w∗μ‖, ‖∂²w∗μ‖ ≤ C_w ‖μ‖₁` on the grid.
pub fn verify_potential_bounds(w: &InteractionPotential, mu: &GridDensity) -> PotentialBoundsReport {
    let sup = |f: &dyn Fn([f64; 2]) -> f64| crate::grid::convolve(f, mu).sup_norm();
    let max_value = sup(&|d| w.value(d));
    let max_gradient = [sup(&|d| w.gradient(d)[0]), sup(&|d| w.gradient(d)[1])];
    let max_second = [
        sup(&|d| w.second_directional(d, [1.0, 0.0])),
        sup(&|d| w.second_directional(d, [0.0, 1.0])),
    ];
    let sup_norms = w.sup_norms();
    let c_w = sup_norms[0].max(sup_norms[1]).max(sup_norms[2]);
    let bound = c_w * mu.mass();
    let worst = max_value
        .max(max_gradient[0])
        .max(max_gradient[1])
        .max(max_second[0])
        .max(max_second[1]);
    PotentialBoundsReport {
        max_value,
        max_gradient,
        max_second,
        sup_norms,
        c_w,
        bound,
        violated: worst > bound + 1e-8,
    }
}
