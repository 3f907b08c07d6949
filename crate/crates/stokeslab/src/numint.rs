//! Numerical realization of asymptotic solutions.
//!
//! Solutions are transported along polar paths `z = r(τ) e^{iθ(τ)}` with an
//! adaptive Dormand–Prince 5(4) integrator on the companion system. The
//! angle is a coordinate on the universal cover, so determinations of
//! fractional powers and logs never jump. Growth across many orders of
//! magnitude is absorbed into a per-solution log scale: a stored state
//! `(s, L)` represents the true state `s·e^{L}`.
//!
//! Matching seeds the integrator at a large radius with the value and
//! derivatives of a truncated formal solution; Stokes matrices come from
//! comparing neighbouring bases on the ray of the Stokes direction they
//! share, where the exponentials involved are of equal size and the linear
//! solve is well conditioned.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::diffop::DiffOp;
use crate::error::{Error, Result};
use crate::hlt::{FormalSolution, HltDatum};
use crate::par;
use crate::rational::RationalExp;
use crate::series::PuiseuxSeries;
use crate::stokesgeo::{Sector, StokesMatrixSet};

const TAU: f64 = 2.0 * std::f64::consts::PI;
const ZERO_C: Complex64 = Complex64::new(0.0, 0.0);
const ONE_C: Complex64 = Complex64::new(1.0, 0.0);

/// Default matching radius in the local coordinate (`|z| = 12` for a study
/// at infinity).
pub const DEFAULT_MATCH_RADIUS: f64 = 1.0 / 12.0;
/// Target relative local error per integration step.
pub const INTEGRATION_RTOL: f64 = 1e-12;
/// Magnitude triggering renormalization of a transported state.
const RESCALE_AT: f64 = 1e30;
/// Required consistency of the base change across the radius chain.
const CHAIN_TOL: f64 = 1e-6;

/// A solution state `(u, u', …, u^{(m-1)})` stored as `state · e^{log_scale}`.
#[derive(Clone, Debug)]
pub struct PathState {
    pub state: Vec<Complex64>,
    pub log_scale: f64,
}

impl PathState {
    pub fn new(state: Vec<Complex64>) -> Self {
        PathState {
            state,
            log_scale: 0.0,
        }
    }

    /// Materialized leading value `u`; may overflow for extreme scales.
    pub fn value(&self) -> Complex64 {
        self.state[0] * self.log_scale.exp()
    }

    fn renormalized(mut self) -> Self {
        let mag = self.state.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if mag > RESCALE_AT || (mag > 0.0 && mag < 1.0 / RESCALE_AT) {
            for c in self.state.iter_mut() {
                *c /= mag;
            }
            self.log_scale += mag.ln();
        }
        self
    }
}

/// A straight segment in polar coordinates (linear radius and angle).
#[derive(Clone, Copy, Debug)]
struct Segment {
    r0: f64,
    th0: f64,
    r1: f64,
    th1: f64,
}

struct Companion<'a> {
    op: &'a DiffOp,
}

impl Companion<'_> {
    fn order(&self) -> usize {
        self.op.order()
    }

    /// `dy/dτ` along the segment at parameter `t`.
    fn rhs(&self, seg: &Segment, t: f64, y: &[Complex64], out: &mut [Complex64]) -> Result<()> {
        let r = seg.r0 + t * (seg.r1 - seg.r0);
        let theta = seg.th0 + t * (seg.th1 - seg.th0);
        let dir = Complex64::new(0.0, theta).exp();
        let dz = (Complex64::new(seg.r1 - seg.r0, 0.0)
            + Complex64::new(0.0, r * (seg.th1 - seg.th0)))
            * dir;
        let m = self.order();
        let am = self.op.coeff(m).eval_polar(r, theta);
        if !am.is_finite() || am.norm() < 1e-300 {
            return Err(Error::PathSingular { radius: r });
        }
        let mut top = ZERO_C;
        for j in 0..m {
            let aj = self.op.coeff(j);
            if !aj.is_zero() {
                top -= aj.eval_polar(r, theta) * y[j];
            }
        }
        for j in 0..m - 1 {
            out[j] = dz * y[j + 1];
        }
        out[m - 1] = dz * top / am;
        if out.iter().any(|c| !c.is_finite()) {
            return Err(Error::PathSingular { radius: r });
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn integrate_segment(op: &DiffOp, seg: Segment, init: &PathState) -> Result<PathState> {
    let sys = Companion { op };
    let m = sys.order();
    let mut y = init.state.clone();
    let mut log_scale = init.log_scale;
    let mut t = 0.0f64;
    let mut h = 1e-3f64;
    let mut k = vec![vec![ZERO_C; m]; 7];
    let mut steps = 0usize;
    while t < 1.0 {
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::StepUnderflow { radius: seg.r0 });
        }
        if t + h > 1.0 {
            h = 1.0 - t;
        }
        sys.rhs(&seg, t, &y, &mut k[0])?;
        let mut ytmp = vec![ZERO_C; m];
        for stage in 1..7 {
            for (j, slot) in ytmp.iter_mut().enumerate() {
                let mut acc = y[j];
                for (s, ks) in k.iter().enumerate().take(stage) {
                    let a = DP_A[stage - 1][s];
                    if a != 0.0 {
                        acc += h * a * ks[j];
                    }
                }
                *slot = acc;
            }
            let (_, tail) = k.split_at_mut(stage);
            sys.rhs(&seg, t + DP_C[stage] * h, &ytmp, &mut tail[0])?;
        }
        let mut y5 = vec![ZERO_C; m];
        let mut err = 0.0f64;
        let ymax = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (j, slot) in y5.iter_mut().enumerate() {
            let mut acc5 = y[j];
            let mut acc4 = y[j];
            for s in 0..7 {
                if DP_B5[s] != 0.0 {
                    acc5 += h * DP_B5[s] * k[s][j];
                }
                if DP_B4[s] != 0.0 {
                    acc4 += h * DP_B4[s] * k[s][j];
                }
            }
            *slot = acc5;
            let scale = INTEGRATION_RTOL * (acc5.norm() + 1e-3 * ymax + 1e-290);
            err = err.max((acc5 - acc4).norm() / scale);
        }
        if err <= 1.0 || h <= 1e-13 {
            if h <= 1e-13 && err > 100.0 {
                return Err(Error::StepUnderflow {
                    radius: seg.r0 + t * (seg.r1 - seg.r0),
                });
            }
            t += h;
            y = y5;
            let mag = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if mag > RESCALE_AT || (mag > 0.0 && mag < 1.0 / RESCALE_AT) {
                for c in y.iter_mut() {
                    *c /= mag;
                }
                log_scale += mag.ln();
            }
        }
        let factor = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
        h *= factor.clamp(0.2, 5.0);
        h = h.min(1.0);
    }
    Ok(PathState {
        state: y,
        log_scale,
    })
}

/// Transports a state along the ray of constant direction `theta` from
/// radius `r0` to `r1`.
pub fn integrate_radial(
    op: &DiffOp,
    theta: f64,
    r0: f64,
    r1: f64,
    init: &PathState,
) -> Result<PathState> {
    integrate_segment(
        op,
        Segment {
            r0,
            th0: theta,
            r1,
            th1: theta,
        },
        init,
    )
}

/// Transports a state along the arc of constant radius from angle `th0` to
/// `th1` (angles on the universal cover).
pub fn integrate_arc(
    op: &DiffOp,
    r: f64,
    th0: f64,
    th1: f64,
    init: &PathState,
) -> Result<PathState> {
    integrate_segment(
        op,
        Segment {
            r0: r,
            th0,
            r1: r,
            th1,
        },
        init,
    )
}

/// A solution carried along one ray, with geometric checkpoints.
#[derive(Clone, Debug)]
pub struct RaySolution {
    pub direction: f64,
    /// `(radius, state, log_scale)`, ordered by traversal.
    pub samples: Vec<(f64, Vec<Complex64>, f64)>,
    pub matched_index: Option<usize>,
    pub match_radius: f64,
}

/// Integrates along the ray `arg z = theta` from `r0` to `r1`, storing
/// `checkpoints` spaced samples (geometric when both radii are positive).
pub fn integrate_ray(
    op: &DiffOp,
    theta: f64,
    r0: f64,
    r1: f64,
    init: &PathState,
    checkpoints: usize,
) -> Result<RaySolution> {
    assert!(r0 != r1, "ray endpoints must differ");
    let n = checkpoints.max(2);
    let mut samples = vec![(r0, init.state.clone(), init.log_scale)];
    let mut cur = init.clone();
    let geometric = r0 > 0.0 && r1 > 0.0;
    for i in 1..=n {
        let r_next = if geometric {
            r0 * (r1 / r0).powf(i as f64 / n as f64)
        } else {
            r0 + (r1 - r0) * i as f64 / n as f64
        };
        let r_prev = samples.last().unwrap().0;
        cur = integrate_radial(op, theta, r_prev, r_next, &cur)?.renormalized();
        samples.push((r_next, cur.state.clone(), cur.log_scale));
    }
    Ok(RaySolution {
        direction: theta,
        samples,
        matched_index: None,
        match_radius: r0,
    })
}

/// The state of the truncated formal solution `û^N` at `z = r e^{iθ}`:
/// symbolic derivatives of `e^{f} z^{λ} Σ_k â_k (log z)^k`, with the growth
/// `Re(f + λ log z)` split off into the log scale.
pub fn seed_state(order: usize, sol: &FormalSolution, r: f64, theta: f64) -> PathState {
    let body = sol.factor.body();
    let lambda = sol.exponent;
    // W_0 = Σ â_k log^k; W_{i+1} = W_i' + (f' + λ/z) W_i; u^{(i)} = e^g W_i
    let twist = body
        .derivative()
        .add(&PuiseuxSeries::monomial(lambda, RationalExp::from_integer(-1)));
    let log_z = Complex64::new(r.ln(), theta);
    let g = body.eval_polar(r, theta) + lambda * log_z;
    let inv_z = PuiseuxSeries::monomial(ONE_C, RationalExp::from_integer(-1));
    let mut levels: Vec<PuiseuxSeries> = sol.levels.clone();
    let mut state = vec![ZERO_C; order];
    for slot in state.iter_mut() {
        let mut val = ZERO_C;
        let mut pow = ONE_C;
        for w in &levels {
            val += w.eval_polar(r, theta) * pow;
            pow *= log_z;
        }
        *slot = val * Complex64::new(0.0, g.im).exp();
        // advance W_i -> W_{i+1}
        levels = levels
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let mut d = w.derivative();
                if let Some(up) = levels.get(k + 1) {
                    d = d.add(&up.scale(Complex64::new((k + 1) as f64, 0.0)).mul(&inv_z));
                }
                d.add(&twist.mul(w))
            })
            .collect();
    }
    PathState {
        state,
        log_scale: g.re,
    }
}

/// A matched asymptotic basis on one sector: member `j` realizes the `j`-th
/// formal solution, seeded at the central direction of the sector.
#[derive(Clone, Debug)]
pub struct SectorBasis {
    pub sector: Sector,
    pub states: Vec<PathState>,
    pub radius: f64,
    pub theta: f64,
}

/// Growth exponent of solution `j` at `(r, θ)`: `Re f_j + Re λ_j ln r`.
fn growth(sol: &FormalSolution, r: f64, theta: f64) -> f64 {
    sol.factor.body().eval_polar(r, theta).re + sol.exponent.re * r.ln()
}

/// Seeds a basis of asymptotic solutions on a sector from the truncated
/// formal solutions, checking that the expansions have converged at the
/// matching radius, and re-orthogonalizing each seed against the more
/// recessive ones.
pub fn match_basis(
    op: &DiffOp,
    datum: &HltDatum,
    sector: &Sector,
    r_match: f64,
) -> Result<SectorBasis> {
    let theta = sector.center();
    let m = op.order();
    // crude relative error of the truncated expansions at the seed radius
    let err_est = r_match.powf((datum.solutions[0].truncation + 1) as f64 / datum.ram as f64);
    if err_est * 1e3 > 1.0 {
        return Err(Error::SeparationFailed {
            radius: r_match,
            gap: err_est,
            required: 1e-3,
        });
    }
    let mut states: Vec<PathState> = datum
        .solutions
        .iter()
        .map(|s| seed_state(m, s, r_match, theta))
        .collect();
    // dominance order at the seed ray, most recessive first
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by(|&a, &b| {
        growth(&datum.solutions[a], r_match, theta)
            .total_cmp(&growth(&datum.solutions[b], r_match, theta))
    });
    // one re-orthogonalization pass: project out the already-matched
    // recessive directions from each more dominant seed
    for (pos, &j) in order.iter().enumerate() {
        for &k in order.iter().take(pos) {
            let rel = (states[k].log_scale - states[j].log_scale).exp();
            if !rel.is_finite() || rel == 0.0 {
                continue;
            }
            let num: Complex64 = states[j]
                .state
                .iter()
                .zip(states[k].state.iter())
                .map(|(a, b)| a * b.conj())
                .sum();
            let den: f64 = states[k].state.iter().map(|b| b.norm_sqr()).sum();
            let proj = num / den * rel;
            let coeffs: Vec<Complex64> = states[k].state.iter().map(|b| proj * b).collect();
            for (a, cc) in states[j].state.iter_mut().zip(coeffs) {
                *a -= cc;
            }
        }
    }
    Ok(SectorBasis {
        sector: *sector,
        states,
        radius: r_match,
        theta,
    })
}

/// Materializes the base change between two bases evaluated at one point:
/// column `k` of the result expresses the later basis member `k` in the
/// earlier basis. Columns are normalized into their log scales first, so the
/// solve stays well conditioned wherever the true solutions are comparable.
fn point_solve(early_raw: &[PathState], later_raw: &[PathState]) -> Result<DMatrix<Complex64>> {
    let normalize = |sts: &[PathState]| -> Vec<PathState> {
        sts.iter()
            .map(|s| {
                let mag = s.state.iter().map(|c| c.norm()).fold(0.0, f64::max);
                if mag > 0.0 {
                    PathState {
                        state: s.state.iter().map(|c| c / mag).collect(),
                        log_scale: s.log_scale + mag.ln(),
                    }
                } else {
                    s.clone()
                }
            })
            .collect()
    };
    let early = normalize(early_raw);
    let later = normalize(later_raw);
    let m = early.len();
    let e = DMatrix::from_fn(m, m, |i, j| early[j].state[i]);
    let l = DMatrix::from_fn(m, m, |i, j| later[j].state[i]);
    let x = e
        .lu()
        .solve(&l)
        .ok_or(Error::BasisInconsistent { residual: f64::NAN })?;
    let mut c = DMatrix::from_element(m, m, ZERO_C);
    for j in 0..m {
        for kk in 0..m {
            let expo = later[kk].log_scale - early[j].log_scale;
            c[(j, kk)] = if expo < -600.0 {
                ZERO_C
            } else if expo > 600.0 && x[(j, kk)].norm() > 1e-300 {
                return Err(Error::BasisInconsistent { residual: expo });
            } else {
                x[(j, kk)] * expo.exp()
            };
        }
    }
    Ok(c)
}

/// States of a matched basis on the ray `theta`, at the matching radius.
///
/// A member whose arc transport from the sector center would excite the
/// other solutions beyond the error budget (it is dominant somewhere along
/// the path and comparable at the ray) is instead taken directly from its
/// truncated expansion at the ray, which its sector-wide asymptotics justify
/// to the same accuracy as the seeding itself.
fn basis_states_at(
    op: &DiffOp,
    datum: &HltDatum,
    basis: &SectorBasis,
    theta_x: f64,
) -> Result<Vec<PathState>> {
    let r = basis.radius;
    let m = op.order();
    let n = datum.solutions.len();
    // growth profiles along the arc, sampled
    let samples = 129usize;
    let profile: Vec<Vec<f64>> = (0..samples)
        .map(|i| {
            let th = basis.theta + (theta_x - basis.theta) * i as f64 / (samples - 1) as f64;
            datum.solutions.iter().map(|s| growth(s, r, th)).collect()
        })
        .collect();
    let kappa_budget = (1e3f64).ln(); // contamination ε·e^{κ} stays ≤ 1e-9
    par::map_indexed(n, |j| {
        let mut kappa = f64::NEG_INFINITY;
        for o in 0..n {
            if o == j {
                continue;
            }
            let max_excess = profile
                .iter()
                .map(|row| row[j] - row[o])
                .fold(f64::NEG_INFINITY, f64::max);
            let at_ray = profile[samples - 1][o] - profile[samples - 1][j];
            kappa = kappa.max(max_excess + at_ray);
        }
        if kappa <= kappa_budget {
            integrate_arc(op, r, basis.theta, theta_x, &basis.states[j])
                .map(PathState::renormalized)
        } else {
            Ok(seed_state(m, &datum.solutions[j], r, theta_x))
        }
    })
    .into_iter()
    .collect()
}

/// Computes the Stokes matrices of a cover: each transition expresses the
/// basis of the later sector in the basis of the earlier one, solved on the
/// shared Stokes ray. The comparison is repeated independently at a chain of
/// three matching radii whose results must agree within 1e-6. The last
/// transition closes the period against the deck-shifted first basis; the
/// formal monodromy of the datum completes the set.
pub fn stokes_matrices(
    op: &DiffOp,
    datum: &HltDatum,
    cover: &[Sector],
    r_match: f64,
) -> Result<StokesMatrixSet> {
    let n = cover.len();
    let period = TAU * datum.ram as f64;
    let chain = [r_match, 0.92 * r_match, 0.85 * r_match];
    let mut candidates: Vec<Vec<DMatrix<Complex64>>> = vec![];
    for &r in &chain {
        let bases: Vec<SectorBasis> = par::map_slice(cover, |s| match_basis(op, datum, s, r))
            .into_iter()
            .collect::<Result<_>>()?;
        let shifted_first = Sector::new(cover[0].lo + period, cover[0].hi + period);
        let shifted_basis = match_basis(op, datum, &shifted_first, r)?;
        let mut at_radius = vec![];
        for i in 0..n {
            let (early, later): (&SectorBasis, &SectorBasis) = if i + 1 < n {
                (&bases[i], &bases[i + 1])
            } else {
                (&bases[n - 1], &shifted_basis)
            };
            // the shared Stokes ray sits midway between the widened edges
            let theta_x = 0.5 * (early.sector.hi + later.sector.lo);
            let e_states = basis_states_at(op, datum, early, theta_x)?;
            let l_states = basis_states_at(op, datum, later, theta_x)?;
            at_radius.push(point_solve(&e_states, &l_states)?);
        }
        candidates.push(at_radius);
    }
    let mut matrices = vec![];
    for i in 0..n {
        let first = &candidates[0][i];
        let scale = first.iter().map(|c| c.norm()).fold(1.0, f64::max);
        for cand in candidates.iter().skip(1) {
            let dev = (first - &cand[i])
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max);
            if dev > CHAIN_TOL * scale {
                return Err(Error::BasisInconsistent { residual: dev });
            }
        }
        // spec orientation: u^{later}_j = Σ_k s_{jk} u^{early}_k
        matrices.push(first.transpose());
    }
    // zero out numerical dust so validation and reports are stable
    for m in matrices.iter_mut() {
        let scale = m.iter().map(|c| c.norm()).fold(1.0, f64::max);
        for c in m.iter_mut() {
            if c.norm() < 1e-9 * scale {
                *c = ZERO_C;
            }
        }
    }
    let factors = datum.solutions.iter().map(|s| s.factor.clone()).collect();
    Ok(StokesMatrixSet {
        cover: cover.to_vec(),
        matrices,
        formal_monodromy: datum.formal_monodromy(),
        factors,
        ram: datum.ram,
        warnings: datum.warnings.clone(),
    })
}

/// Continues the identity frame at `(r, θ = 0)` around `turns` full circles
/// and expresses the continued frame in the original one: direct numerical
/// monodromy, independent of any formal data.
pub fn loop_monodromy(op: &DiffOp, r: f64, turns: u32) -> Result<DMatrix<Complex64>> {
    let m = op.order();
    let starts: Vec<PathState> = (0..m)
        .map(|i| {
            let mut v = vec![ZERO_C; m];
            v[i] = ONE_C;
            PathState::new(v)
        })
        .collect();
    let moved: Vec<PathState> = par::map_slice(&starts, |st| {
        integrate_arc(op, r, 0.0, TAU * turns as f64, st).map(PathState::renormalized)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    point_solve(&starts, &moved)
}

/// Outcome of the asymptotic-estimate test along one ray.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimateVerdict {
    Pass,
    Inconclusive,
    Fail,
}

#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub verdict: EstimateVerdict,
    /// Fitted slope of `log|u - û^N| - Re f` against `log r`, when the
    /// difference rises above the rounding floor over at least a decade.
    pub fitted_slope: Option<f64>,
    /// `Re λ + N/d`, the exponent the estimate asserts.
    pub target_slope: f64,
    /// `(ln r, log-difference minus Re f)` sample pairs used for the fit.
    pub points: Vec<(f64, f64)>,
    pub note: String,
}

/// Verifies the asymptotic estimate for solution `j` along the ray `theta`:
/// the distance between the transported solution and its truncated expansion
/// must vanish at least like `e^{Re f} r^{Re λ + N/d}` toward the puncture.
///
/// The solution is seeded where its truncated expansion is most accurate and
/// transported in its direction of relative growth, which keeps the
/// contamination by the other solutions below the quantity being measured.
pub fn estimate_check(
    op: &DiffOp,
    datum: &HltDatum,
    j: usize,
    theta: f64,
    r_inner: f64,
    r_outer: f64,
) -> Result<EstimateReport> {
    let sol = &datum.solutions[j];
    let m = op.order();
    let target_slope = sol.exponent.re + sol.truncation as f64 / datum.ram as f64;

    // recessive toward the puncture: seed small and integrate outward;
    // dominant: seed large and integrate inward
    let recessive = growth(sol, r_inner, theta) < growth(sol, r_outer, theta);
    let (r_from, r_to) = if recessive {
        (r_inner, r_outer)
    } else {
        (r_outer, r_inner)
    };
    let nsamp = 25usize;
    let mut points = vec![];
    let mut floor_hits = 0usize;
    let mut cur = seed_state(m, sol, r_from, theta);
    let mut r_prev = r_from;
    for i in 1..=nsamp {
        let r = r_from * (r_to / r_from).powf(i as f64 / nsamp as f64);
        cur = integrate_radial(op, theta, r_prev, r, &cur)?.renormalized();
        r_prev = r;
        let formal = seed_state(m, sol, r, theta);
        // normalized difference of leading values, relative to e^{Re g}
        let rel = (cur.log_scale - formal.log_scale).exp();
        if !rel.is_finite() {
            continue;
        }
        let diff = (cur.state[0] * rel - formal.state[0]).norm();
        let floor = 1e-12 * formal.state[0].norm().max(1e-6);
        if diff <= floor {
            floor_hits += 1;
            continue;
        }
        // log|u - û| - Re f = Re(λ) ln r - Im(λ) θ + ln(normalized diff)
        let y = sol.exponent.re * r.ln() - sol.exponent.im * theta + diff.ln();
        points.push((r.ln(), y));
    }

    if points.len() < 2 {
        let verdict = if floor_hits >= nsamp - 1 {
            EstimateVerdict::Pass
        } else {
            EstimateVerdict::Inconclusive
        };
        return Ok(EstimateReport {
            verdict,
            fitted_slope: None,
            target_slope,
            points,
            note: "difference at rounding floor".into(),
        });
    }
    let span = points
        .iter()
        .map(|(x, _)| *x)
        .fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
    if span < std::f64::consts::LN_10 {
        return Ok(EstimateReport {
            verdict: EstimateVerdict::Inconclusive,
            fitted_slope: None,
            target_slope,
            points,
            note: "usable samples span less than one decade".into(),
        });
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let verdict = if slope >= target_slope - 0.25 {
        EstimateVerdict::Pass
    } else {
        EstimateVerdict::Fail
    };
    Ok(EstimateReport {
        verdict,
        fitted_slope: Some(slope),
        target_slope,
        points,
        note: String::new(),
    })
}
