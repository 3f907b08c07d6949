//! Stokes directions, sector covers, dominance patterns, and the matrix
//! bookkeeping of Stokes data.
//!
//! Everything here lives on the universal cover `ℝ_θ` of the circle of
//! directions: angles are stored unprojected, and one period of the cover is
//! `2πd` for the ramification `d` of the factor family. A sector fixes the
//! determination of every factor implicitly, by evaluating with its own
//! unprojected angles; the branch integer of a sector is its sheet number.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;
use crate::rational::lcm_u32;
use crate::series::ExponentialFactor;

const TAU: f64 = 2.0 * std::f64::consts::PI;
/// Angular tolerance for deduplicating Stokes directions.
const DIR_TOL: f64 = 1e-9;
/// Matrix entries below this threshold count as structural zeros.
pub const ENTRY_TOL: f64 = 1e-6;

/// The Stokes directions of a factor family over one period of the cover.
#[derive(Clone, Debug)]
pub struct DirectionSet {
    /// Sorted directions within `[0, 2π·ram)`.
    pub dirs: Vec<f64>,
    /// Cover period is `2π·ram`.
    pub ram: u32,
    /// Set when every pair of factors agrees: no direction separates them.
    pub trivial: bool,
}

/// An open sector `(lo, hi)` on the universal cover.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sector {
    pub lo: f64,
    pub hi: f64,
}

impl Sector {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "sector needs lo < hi");
        Sector { lo, hi }
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lo < theta && theta < self.hi
    }

    /// Sheet of the cover the sector center lies on; determinations on the
    /// sector are the continuous ones of that sheet.
    pub fn sheet(&self) -> i64 {
        (self.center() / TAU).floor() as i64
    }
}

/// Angles in `[0, period)` where the leading part of `Re(f_j - f_k)`
/// vanishes, for each pair of distinct factors.
pub fn stokes_directions(factors: &[ExponentialFactor]) -> DirectionSet {
    let mut ram = 1u32;
    for f in factors {
        ram = lcm_u32(ram, f.ramification());
    }
    let period = TAU * ram as f64;
    let mut dirs: Vec<f64> = vec![];
    let mut any_pair = false;
    for j in 0..factors.len() {
        for k in (j + 1)..factors.len() {
            let diff = factors[j].body().sub(factors[k].body());
            let Some((e, c)) = diff.leading() else {
                continue;
            };
            any_pair = true;
            // Re(c z^{e}) = |c| r^{e} cos(arg c + e θ), e < 0
            let kappa = e.as_f64();
            let phase = c.im.atan2(c.re);
            // zeros where arg c + e θ = π/2 + n π
            let step = (std::f64::consts::PI / kappa).abs();
            let base = (std::f64::consts::FRAC_PI_2 - phase) / kappa;
            let mut n = ((-base) / step).floor() as i64 - 2;
            loop {
                let theta = base + n as f64 * step;
                if theta >= period - DIR_TOL {
                    break;
                }
                if theta >= -DIR_TOL {
                    dirs.push(theta.max(0.0));
                }
                n += 1;
            }
        }
    }
    dirs.sort_by(f64::total_cmp);
    dirs.dedup_by(|a, b| (*a - *b).abs() < DIR_TOL);
    DirectionSet {
        trivial: !any_pair || dirs.is_empty(),
        dirs,
        ram,
    }
}

/// One sector per arc between consecutive Stokes directions, widened at both
/// ends so that each overlap of consecutive sectors contains exactly one
/// Stokes direction. With no directions at all a single sector covers a full
/// period.
pub fn sector_cover(dirs: &DirectionSet, overlap_half_width: Option<f64>) -> Result<Vec<Sector>> {
    let period = TAU * dirs.ram as f64;
    if dirs.dirs.is_empty() {
        return Ok(vec![Sector::new(0.0, period)]);
    }
    let n = dirs.dirs.len();
    let gap_after = |i: usize| {
        let next = if i + 1 < n {
            dirs.dirs[i + 1]
        } else {
            dirs.dirs[0] + period
        };
        next - dirs.dirs[i]
    };
    let min_gap = (0..n).map(gap_after).fold(f64::INFINITY, f64::min);
    let hw = overlap_half_width.unwrap_or(min_gap / 4.0);
    if hw >= min_gap / 2.0 {
        return Err(Error::OverlapTooWide {
            half_width: hw,
            gap: min_gap,
        });
    }
    Ok((0..n)
        .map(|i| Sector::new(dirs.dirs[i] - hw, dirs.dirs[i] + gap_after(i) + hw))
        .collect())
}

/// Overlap of two sectors, if any.
pub fn overlap_of(a: &Sector, b: &Sector) -> Option<Sector> {
    let lo = a.lo.max(b.lo);
    let hi = a.hi.min(b.hi);
    (lo < hi).then(|| Sector::new(lo, hi))
}

/// Zero-pattern of matrix entries allowed on an overlap: `allowed(j, k)`
/// permits the entry `s_{jk}`.
#[derive(Clone, Debug)]
pub struct DominancePattern {
    pub allowed: Vec<Vec<bool>>,
    /// The overlap the pattern was computed on.
    pub context: Sector,
}

impl DominancePattern {
    pub fn size(&self) -> usize {
        self.allowed.len()
    }

    /// True when no off-diagonal slot is allowed in both directions.
    pub fn is_strictly_one_sided(&self) -> bool {
        let m = self.allowed.len();
        (0..m).all(|j| (0..m).all(|k| j == k || !(self.allowed[j][k] && self.allowed[k][j])))
    }
}

/// Maximum of `cos` over the closed interval `[lo, hi]` (in either order).
fn cos_max(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi - lo >= TAU || (lo / TAU).ceil() * TAU <= hi {
        return 1.0;
    }
    lo.cos().max(hi.cos())
}

/// `Re(f_k - f_j) ≤ 0` asymptotically throughout the overlap. Equal factors
/// tie and allow both directions.
fn dominated_throughout(fj: &ExponentialFactor, fk: &ExponentialFactor, overlap: &Sector) -> bool {
    let diff = fk.body().sub(fj.body());
    let Some((e, c)) = diff.leading() else {
        return true;
    };
    let kappa = e.as_f64();
    let phase = c.im.atan2(c.re);
    cos_max(phase + kappa * overlap.lo, phase + kappa * overlap.hi) <= DIR_TOL
}

/// Asymptotic dominance on the exit (higher-θ) side of the overlap; the
/// defining bases of a transition only constrain it there.
fn dominated_at_exit(fj: &ExponentialFactor, fk: &ExponentialFactor, overlap: &Sector) -> bool {
    let diff = fk.body().sub(fj.body());
    let Some((e, c)) = diff.leading() else {
        return true;
    };
    let kappa = e.as_f64();
    let phase = c.im.atan2(c.re);
    // sample just inside the exit edge, backing off while the sign is unclear
    let mut back = 1e-6 * overlap.width();
    for _ in 0..24 {
        let v = (phase + kappa * (overlap.hi - back)).cos();
        if v.abs() > 1e-9 {
            return v < 0.0;
        }
        back *= 2.0;
    }
    true
}

/// The zero-pattern on an overlap: `allowed(j,k)` iff `Re(f_k - f_j) ≤ 0`
/// asymptotically throughout (leading-term comparison); ties allow both
/// directions and the diagonal is always allowed.
pub fn dominance_pattern(factors: &[ExponentialFactor], overlap: &Sector) -> DominancePattern {
    pattern_with(factors, overlap, dominated_throughout)
}

/// Pattern used to validate transition matrices. On an overlap containing
/// the Stokes direction of a pair the inequality is required only on the
/// exit side: the bases being compared are asymptotic on the two adjoining
/// sectors, and only the exit sector constrains the new entry.
pub fn transition_pattern(factors: &[ExponentialFactor], overlap: &Sector) -> DominancePattern {
    pattern_with(factors, overlap, |fj, fk, o| {
        dominated_throughout(fj, fk, o) || dominated_at_exit(fj, fk, o)
    })
}

fn pattern_with(
    factors: &[ExponentialFactor],
    overlap: &Sector,
    rule: impl Fn(&ExponentialFactor, &ExponentialFactor, &Sector) -> bool + Sync + Send,
) -> DominancePattern {
    let m = factors.len();
    let allowed = par::map_indexed(m, |j| {
        (0..m)
            .map(|k| j == k || rule(&factors[j], &factors[k], overlap))
            .collect::<Vec<bool>>()
    });
    DominancePattern {
        allowed,
        context: *overlap,
    }
}

/// A cyclic family of sectors with the base changes between consecutive
/// asymptotic bases.
///
/// `matrices[i]` is the Stokes matrix of the overlap of sectors `i` and
/// `i+1`, in the convention `u^{θ'}_j = Σ_k s_{jk} u^{θ}_k`; the last matrix
/// closes the period against the deck-shifted first basis. In
/// `formal_monodromy` column `j` holds the coordinates of the continued
/// `j`-th formal solution over one full period.
#[derive(Clone, Debug)]
pub struct StokesMatrixSet {
    pub cover: Vec<Sector>,
    pub matrices: Vec<DMatrix<Complex64>>,
    pub formal_monodromy: DMatrix<Complex64>,
    /// Factor attached to each basis index (repeated for multiplicities).
    pub factors: Vec<ExponentialFactor>,
    pub ram: u32,
    pub warnings: Vec<String>,
}

/// One violation found by [`StokesMatrixSet::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub overlap: usize,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    NotInvertible,
    ForbiddenEntry,
    NotUnipotent,
    Determinations,
}

/// Validation outcome; violations are data, not errors.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl StokesMatrixSet {
    /// The overlap carrying `matrices[i]`; the last index wraps against the
    /// deck-shifted first sector. A single full-period sector abuts its own
    /// shift, so its seam is taken as a thin band below the top edge.
    pub fn overlap(&self, i: usize) -> Sector {
        let n = self.cover.len();
        let period = TAU * self.ram as f64;
        if i + 1 < n {
            overlap_of(&self.cover[i], &self.cover[i + 1]).expect("consecutive sectors overlap")
        } else {
            let first = self.cover[0];
            let shifted = Sector::new(first.lo + period, first.hi + period);
            overlap_of(&self.cover[n - 1], &shifted).unwrap_or_else(|| {
                let s = self.cover[n - 1];
                Sector::new(s.hi - 0.05 * s.width(), s.hi)
            })
        }
    }

    /// Checks invertibility, zero-pattern compliance, and unipotency on
    /// strictly one-sided overlaps.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (i, s) in self.matrices.iter().enumerate() {
            if s.nrows() != self.factors.len() || s.ncols() != self.factors.len() {
                report.violations.push(Violation {
                    overlap: i,
                    kind: ViolationKind::NotInvertible,
                    detail: format!("matrix {i} has the wrong shape"),
                });
                continue;
            }
            if s.clone().try_inverse().is_none() {
                report.violations.push(Violation {
                    overlap: i,
                    kind: ViolationKind::NotInvertible,
                    detail: format!("matrix {i} is singular"),
                });
            }
            let overlap = self.overlap(i);
            let pattern = transition_pattern(&self.factors, &overlap);
            let scale = s.iter().map(|c| c.norm()).fold(1.0, f64::max);
            for j in 0..s.nrows() {
                for k in 0..s.ncols() {
                    if !pattern.allowed[j][k] && s[(j, k)].norm() > ENTRY_TOL * scale {
                        report.violations.push(Violation {
                            overlap: i,
                            kind: ViolationKind::ForbiddenEntry,
                            detail: format!(
                                "entry ({j},{k}) = {} breaks the dominance pattern",
                                s[(j, k)]
                            ),
                        });
                    }
                }
            }
            if pattern.is_strictly_one_sided() {
                for j in 0..s.nrows() {
                    if (s[(j, j)] - Complex64::new(1.0, 0.0)).norm() > ENTRY_TOL * scale {
                        report.violations.push(Violation {
                            overlap: i,
                            kind: ViolationKind::NotUnipotent,
                            detail: format!("diagonal entry ({j},{j}) = {} is not 1", s[(j, j)]),
                        });
                    }
                }
            }
        }
        report
    }

    /// Total monodromy over one full period of the cover, in the basis of
    /// the first sector: the ordered product of the transitions composed
    /// with the formal monodromy.
    pub fn total_monodromy(&self) -> Result<DMatrix<Complex64>> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(Error::InvalidStokesSet(format!(
                "{} violations, first: {}",
                report.violations.len(),
                report.violations[0].detail
            )));
        }
        let n = self.factors.len();
        let mut prod = DMatrix::identity(n, n);
        for s in &self.matrices {
            prod = prod * s.transpose();
        }
        let inv = prod
            .try_inverse()
            .ok_or_else(|| Error::InvalidStokesSet("transition product is singular".into()))?;
        Ok(&self.formal_monodromy * inv)
    }

    /// Splits a sector in two with an identity transition between the
    /// halves; the total monodromy is unchanged.
    pub fn refine_at(&self, sector: usize, theta: f64) -> Result<Self> {
        let s = self.cover[sector];
        if !s.contains(theta) {
            return Err(Error::Unsupported(
                "refinement angle must lie inside the sector".into(),
            ));
        }
        let hw = 0.25 * (s.hi - theta).min(theta - s.lo);
        let mut out = self.clone();
        out.cover[sector] = Sector::new(s.lo, theta + hw);
        out.cover.insert(sector + 1, Sector::new(theta - hw, s.hi));
        out.matrices.insert(
            sector,
            DMatrix::identity(self.factors.len(), self.factors.len()),
        );
        Ok(out)
    }
}

/// A row of the polar growth plot: the angle, `ρ + σ·Re f_j(R e^{iθ})` per
/// factor, and the index of the pointwise dominant factor.
#[derive(Clone, Debug)]
pub struct PolarSample {
    pub theta: f64,
    pub values: Vec<f64>,
    pub dominant: usize,
}

/// Samples the factor growth profiles on `|z| = radius` over one full period
/// of the cover; `samples` rows with strictly increasing angles.
pub fn polar_profiles(
    factors: &[ExponentialFactor],
    radius: f64,
    rho: f64,
    sigma: f64,
    samples: usize,
    ram: u32,
) -> Vec<PolarSample> {
    let period = TAU * ram as f64;
    par::map_indexed(samples, |i| {
        let theta = period * i as f64 / samples as f64;
        let raw: Vec<f64> = factors.iter().map(|f| f.re_at(radius, theta)).collect();
        let dominant = raw
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        PolarSample {
            theta,
            values: raw.iter().map(|v| rho + sigma * v).collect(),
            dominant,
        }
    })
}

/// Scale making the largest curve amplitude equal `target` at the given
/// radius; 1 when every factor is flat.
pub fn plot_scale(factors: &[ExponentialFactor], radius: f64, ram: u32, target: f64) -> f64 {
    let amp = polar_profiles(factors, radius, 0.0, 1.0, 512, ram)
        .iter()
        .flat_map(|row| row.values.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    if amp > 0.0 {
        target / amp
    } else {
        1.0
    }
}
