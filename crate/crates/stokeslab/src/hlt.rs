//! Newton polygon, exponential factors, and truncated formal solutions.
//!
//! The slope-peeling recursion below computes, for an operator singular at
//! the origin, the factors `f_j ∈ z^{-1/d} ℂ[z^{-1/d}]` and exponents `λ_j`
//! such that `P u = 0` has a formal basis
//! `û_j = z^{λ_j} e^{f_j} Σ_k â_{jk}(z) (log z)^k`. Each positive Newton
//! slope contributes leading terms through the roots of its characteristic
//! equation; gauging a leading term away and recursing on the strictly
//! smaller slopes terminates because every step peels one term off a factor.
//!
//! Series coefficients come from the indicial recursion; when indicial roots
//! collide modulo the exponent lattice the solver grows the log depth on
//! demand instead of deciding a normal form up front.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::diffop::{DeltaForm, DiffOp};
use crate::error::{Error, Result};
use crate::rational::{lcm_u32, RationalExp};
use crate::series::{ExponentialFactor, PuiseuxSeries};

/// Default bound on the slope-peeling recursion depth (= factor term count).
pub const DEFAULT_MAX_DEPTH: usize = 16;
/// Default truncation order for formal solutions, in units of `1/d`.
pub const DEFAULT_TRUNCATION: i64 = 20;

/// Merge radius for characteristic-equation roots.
const ROOT_MERGE_TOL: f64 = 1e-8;
/// Tolerance for detecting a resonance `λ_i - λ_j ∈ (1/d)ℤ`.
const RESONANCE_TOL: f64 = 1e-10;

const ZERO_C: Complex64 = Complex64::new(0.0, 0.0);

/// Newton polygon of the δ-form: the points `(j, ord b_j)`, the lower hull of
/// the part right of the regular block, and the slope/length list.
#[derive(Clone, Debug)]
pub struct NewtonPolygon {
    points: Vec<(usize, RationalExp)>,
    hull: Vec<(usize, RationalExp)>,
    slopes: Vec<(RationalExp, usize)>,
}

impl NewtonPolygon {
    pub fn points(&self) -> &[(usize, RationalExp)] {
        &self.points
    }

    pub fn hull(&self) -> &[(usize, RationalExp)] {
        &self.hull
    }

    /// `(slope, horizontal length)` pairs, slopes strictly increasing. The
    /// slope-0 entry counts the regular-type solutions; the lengths add up to
    /// the order of the operator.
    pub fn slopes(&self) -> &[(RationalExp, usize)] {
        &self.slopes
    }

    /// Maximal slope; zero for Fuchsian operators.
    pub fn irregularity(&self) -> RationalExp {
        self.slopes
            .last()
            .map(|(k, _)| *k)
            .unwrap_or(RationalExp::ZERO)
    }

    pub fn is_fuchsian(&self) -> bool {
        self.slopes.iter().all(|(k, _)| k.is_zero())
    }
}

/// Computes the polygon of the δ-form; only nonzero `b_j` contribute.
pub fn newton_polygon(op: &DiffOp) -> NewtonPolygon {
    polygon_of(&op.to_delta_form())
}

pub(crate) fn polygon_of(delta: &DeltaForm) -> NewtonPolygon {
    let points: Vec<(usize, RationalExp)> = delta
        .coeffs()
        .iter()
        .enumerate()
        .filter_map(|(j, b)| b.valuation().map(|v| (j, v)))
        .collect();
    assert!(!points.is_empty(), "operator with all-zero coefficients");

    let vmin = points.iter().map(|(_, v)| *v).min().unwrap();
    // regular block: solutions of power-log type, counted by the rightmost
    // point attaining the minimal ordinate
    let j0 = points
        .iter()
        .filter(|(_, v)| *v == vmin)
        .map(|(j, _)| *j)
        .max()
        .unwrap();

    // lower convex hull of the points right of the regular block
    let right: Vec<(usize, RationalExp)> =
        points.iter().copied().filter(|(j, _)| *j >= j0).collect();
    let mut hull: Vec<(usize, RationalExp)> = vec![];
    for p in right {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b unless (a, b, p) turns strictly left
            let lhs = b.1.sub(&a.1).scale((p.0 - a.0) as i64);
            let rhs = p.1.sub(&a.1).scale((b.0 - a.0) as i64);
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }

    let mut slopes = vec![];
    if j0 >= 1 {
        slopes.push((RationalExp::ZERO, j0));
    }
    for w in hull.windows(2) {
        let (j1, v1) = w[0];
        let (j2, v2) = w[1];
        let k = v2.sub(&v1).unscale((j2 - j1) as i64);
        slopes.push((k, j2 - j1));
    }
    NewtonPolygon {
        points,
        hull,
        slopes,
    }
}

/// Maximal Newton slope of the operator (0 for Fuchsian ones).
pub fn irregularity(op: &DiffOp) -> RationalExp {
    newton_polygon(op).irregularity()
}

/// Exponential factors with multiplicities, plus non-fatal diagnostics.
#[derive(Clone, Debug)]
pub struct FactorSet {
    pub factors: Vec<(ExponentialFactor, usize)>,
    pub warnings: Vec<String>,
}

/// Total order on factor bodies used for canonical output ordering.
pub(crate) fn factor_sort_key(body: &PuiseuxSeries) -> Vec<(RationalExp, u64, u64)> {
    fn key_bits(x: f64) -> u64 {
        let b = x.to_bits();
        if x.is_sign_negative() {
            !b
        } else {
            b ^ (1 << 63)
        }
    }
    body.terms()
        .map(|(e, c)| (*e, key_bits(c.re), key_bits(c.im)))
        .collect()
}

/// Recursive slope-peeling extraction of exponential factors.
///
/// For each positive slope the characteristic equation of the hull edge is
/// solved for the leading constants; each root is gauged away (after
/// ramifying when the slope is fractional) and the recursion continues on
/// the strictly smaller slopes of the transformed operator. The slope-0
/// block reports the zero factor.
pub fn exponential_factors(op: &DiffOp, max_depth: usize) -> Result<FactorSet> {
    let mut warnings = vec![];
    let raw = factors_rec(op, None, 0, max_depth, &mut warnings)?;
    let mut merged: Vec<(PuiseuxSeries, usize)> = vec![];
    for (body, mult) in raw {
        if let Some(slot) = merged
            .iter_mut()
            .find(|(b, _)| b.sub(&body).max_abs_coeff() < ROOT_MERGE_TOL)
        {
            slot.1 += mult;
        } else {
            merged.push((body, mult));
        }
    }
    merged.sort_by(|a, b| factor_sort_key(&a.0).cmp(&factor_sort_key(&b.0)));
    let factors = merged
        .into_iter()
        .map(|(body, mult)| ExponentialFactor::new(body).map(|f| (f, mult)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorSet { factors, warnings })
}

fn factors_rec(
    op: &DiffOp,
    cap: Option<RationalExp>,
    depth: usize,
    max_depth: usize,
    warnings: &mut Vec<String>,
) -> Result<Vec<(PuiseuxSeries, usize)>> {
    if depth > max_depth {
        return Err(Error::DepthExceeded(max_depth));
    }
    let delta = op.to_delta_form();
    let poly = polygon_of(&delta);
    let mut out = vec![];
    for &(slope, len) in poly.slopes() {
        if let Some(c) = cap {
            if slope >= c {
                continue;
            }
        }
        if slope.is_zero() {
            out.push((PuiseuxSeries::zero(), len));
            continue;
        }
        let q = slope.den();
        if q == 1 {
            out.extend(edge_factors(
                op, &delta, &poly, slope, len, depth, max_depth, warnings,
            )?);
        } else {
            // substitute z = t^q so the slope becomes integral
            let rop = op.ramify(q as u32);
            let rdelta = rop.to_delta_form();
            let rpoly = polygon_of(&rdelta);
            let rslope = slope.scale(q);
            let sub = edge_factors(
                &rop, &rdelta, &rpoly, rslope, len, depth, max_depth, warnings,
            )?;
            let back = RationalExp::new(1, q);
            out.extend(
                sub.into_iter()
                    .map(|(body, mult)| (body.scale_exponents(back), mult)),
            );
        }
    }
    Ok(out)
}

/// Handles one positive integral slope: root-solve the edge equation, gauge
/// each root away, recurse below the slope.
#[allow(clippy::too_many_arguments)]
fn edge_factors(
    op: &DiffOp,
    delta: &DeltaForm,
    poly: &NewtonPolygon,
    slope: RationalExp,
    len: usize,
    depth: usize,
    max_depth: usize,
    warnings: &mut Vec<String>,
) -> Result<Vec<(PuiseuxSeries, usize)>> {
    let chi = edge_char_poly(delta, poly, slope);
    let roots = clustered_roots(&nonzero_roots(&chi), ROOT_MERGE_TOL, warnings);
    let total: usize = roots.iter().map(|(_, m)| m).sum();
    if total != len {
        warnings.push(format!(
            "slope {slope}: characteristic roots account for {total} of {len} solutions"
        ));
    }
    let mut out = vec![];
    for (root, mult) in roots {
        // u ~ e^{c z^{-k}} has δ-symbol w = -k c on the edge
        let c = -root / slope.as_f64();
        let flead = PuiseuxSeries::monomial(c, slope.neg());
        let gauged = op.gauge_exp(&flead, ZERO_C)?;
        let sub = factors_rec(&gauged, Some(slope), depth + 1, max_depth, warnings)?;
        let got: usize = sub.iter().map(|(_, m)| m).sum();
        if got != mult {
            warnings.push(format!(
                "slope {slope}: branch at root {root} continues with {got} of {mult} solutions"
            ));
        }
        out.extend(sub.into_iter().map(|(body, m)| (flead.add(&body), m)));
    }
    Ok(out)
}

/// Coefficients (low to high in `w`) of the characteristic polynomial carried
/// by the hull edge of the given slope.
fn edge_char_poly(delta: &DeltaForm, poly: &NewtonPolygon, slope: RationalExp) -> Vec<Complex64> {
    let edge = poly
        .hull()
        .windows(2)
        .find(|w| {
            let k = w[1].1.sub(&w[0].1).unscale((w[1].0 - w[0].0) as i64);
            k == slope
        })
        .expect("edge for requested slope");
    let (j_lo, v_lo) = edge[0];
    let (j_hi, _) = edge[1];
    (j_lo..=j_hi)
        .map(|j| {
            let v_line = v_lo.add(&slope.scale((j - j_lo) as i64));
            delta.coeff(j).coeff(&v_line)
        })
        .collect()
}

/// All roots of a complex polynomial (coefficients low to high), zeros
/// included. Degree ≤ 2 is handled in closed form, the rest by the
/// Durand–Kerner iteration with Newton polish; both are deterministic.
pub(crate) fn poly_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return vec![];
    }
    let mut hi = coeffs.len();
    while hi > 0 && coeffs[hi - 1].norm() < 1e-14 * scale {
        hi -= 1;
    }
    let mut lo = 0;
    while lo < hi && coeffs[lo].norm() < 1e-14 * scale {
        lo += 1;
    }
    let mut roots: Vec<Complex64> = vec![ZERO_C; lo];
    let red = &coeffs[lo..hi];
    let deg = red.len().saturating_sub(1);
    match deg {
        0 => {}
        1 => roots.push(-red[0] / red[1]),
        2 => {
            let (a, b, c) = (red[2], red[1], red[0]);
            let disc = (b * b - 4.0 * a * c).sqrt();
            let q = if (b + disc).norm() >= (b - disc).norm() {
                -0.5 * (b + disc)
            } else {
                -0.5 * (b - disc)
            };
            roots.push(q / a);
            roots.push(if q.norm() > 0.0 { c / q } else { ZERO_C });
        }
        _ => {
            let monic: Vec<Complex64> = red.iter().map(|c| c / red[deg]).collect();
            let radius = 1.0 + monic[..deg].iter().map(|c| c.norm()).fold(0.0, f64::max);
            let mut guess: Vec<Complex64> = (0..deg)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / deg as f64 + 0.4;
                    Complex64::new(a.cos(), a.sin()) * radius * 0.7
                })
                .collect();
            let eval = |s: Complex64| {
                let mut acc = ZERO_C;
                for c in monic.iter().rev() {
                    acc = acc * s + c;
                }
                acc
            };
            for _ in 0..600 {
                let mut moved = 0.0f64;
                for i in 0..deg {
                    let mut denom = Complex64::new(1.0, 0.0);
                    for j in 0..deg {
                        if j != i {
                            denom *= guess[i] - guess[j];
                        }
                    }
                    if denom.norm() == 0.0 {
                        continue;
                    }
                    let delta = eval(guess[i]) / denom;
                    guess[i] -= delta;
                    moved = moved.max(delta.norm());
                }
                if moved < 1e-15 * radius {
                    break;
                }
            }
            let dmonic: Vec<Complex64> = monic
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, c)| c * j as f64)
                .collect();
            let deval = |s: Complex64| {
                let mut acc = ZERO_C;
                for c in dmonic.iter().rev() {
                    acc = acc * s + c;
                }
                acc
            };
            for g in guess.iter_mut() {
                for _ in 0..3 {
                    let d = deval(*g);
                    if d.norm() > 1e-30 {
                        *g -= eval(*g) / d;
                    }
                }
            }
            roots.extend(guess);
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

fn nonzero_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    poly_roots(coeffs)
        .into_iter()
        .filter(|r| r.norm() > 1e-12 * scale)
        .collect()
}

/// Greedy clustering of nearby roots. Merged clusters are flagged because the
/// branch structure then rests on a numerically thin separation.
fn clustered_roots(
    roots: &[Complex64],
    tol: f64,
    warnings: &mut Vec<String>,
) -> Vec<(Complex64, usize)> {
    let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
    let mut clusters: Vec<(Complex64, usize)> = vec![];
    for r in roots {
        if let Some((center, mult)) = clusters
            .iter_mut()
            .find(|(center, _)| (*center - r).norm() < tol * scale)
        {
            let n = *mult as f64;
            *center = (*center * n + r) / (n + 1.0);
            *mult += 1;
        } else {
            clusters.push((*r, 1));
        }
    }
    for (center, mult) in &clusters {
        if *mult > 1 {
            warnings.push(format!(
                "characteristic root near {center} taken with multiplicity {mult} (separation below {tol:.0e})"
            ));
        }
    }
    clusters
}

/// One formal solution `z^λ e^{f} Σ_k â_k(z) (log z)^k`.
#[derive(Clone, Debug)]
pub struct FormalSolution {
    /// Exponential factor in the local coordinate.
    pub factor: ExponentialFactor,
    /// Exponent λ of the power prefactor.
    pub exponent: Complex64,
    /// Series coefficients of `(log z)^k`, `k = 0 ..= log_depth`, each
    /// truncated. The top level is monic.
    pub levels: Vec<PuiseuxSeries>,
    /// Truncation order in units of `1/d` of the ambient datum.
    pub truncation: i64,
    /// Whether a resonance forced log terms or tied this branch to another.
    pub resonant: bool,
}

impl FormalSolution {
    pub fn log_depth(&self) -> usize {
        self.levels.len() - 1
    }
}

/// The full formal data at the singular point.
#[derive(Clone, Debug)]
pub struct HltDatum {
    pub solutions: Vec<FormalSolution>,
    /// Overall ramification: all factor exponents and series lattices live on
    /// `(1/ram)ℤ`.
    pub ram: u32,
    /// Partition of solution indices under `z^{1/d} ↦ e^{2πi/d} z^{1/d}`.
    pub galois_orbits: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Runs the factor extraction and the indicial recursion for every branch.
///
/// `n_trunc` is the truncation order in units of `1/d`, with `d` the overall
/// ramification of the datum.
pub fn formal_solutions(op: &DiffOp, n_trunc: i64) -> Result<HltDatum> {
    let fs = exponential_factors(op, DEFAULT_MAX_DEPTH)?;
    let mut warnings = fs.warnings.clone();
    let mut d_global = op.ram();
    for (f, _) in &fs.factors {
        d_global = lcm_u32(d_global, f.ramification());
    }
    let mut solutions = vec![];
    for (factor, mult) in &fs.factors {
        solutions.extend(branch_solutions(
            op,
            factor,
            *mult,
            n_trunc,
            d_global,
            &mut warnings,
        )?);
    }
    let mut ram = d_global;
    for s in &solutions {
        for lvl in &s.levels {
            ram = lcm_u32(ram, lvl.ram());
        }
    }
    solutions.sort_by(|a, b| {
        factor_sort_key(a.factor.body())
            .cmp(&factor_sort_key(b.factor.body()))
            .then(a.exponent.re.total_cmp(&b.exponent.re))
            .then(a.exponent.im.total_cmp(&b.exponent.im))
            .then(a.log_depth().cmp(&b.log_depth()))
    });
    let galois_orbits = deck_orbits(&solutions, &mut warnings);
    Ok(HltDatum {
        solutions,
        ram,
        galois_orbits,
        warnings,
    })
}

fn div_ceil_i64(a: i64, b: i64) -> i64 {
    (a + b - 1) / b
}

fn branch_solutions(
    op: &DiffOp,
    factor: &ExponentialFactor,
    mult: usize,
    n_trunc: i64,
    d_global: u32,
    warnings: &mut Vec<String>,
) -> Result<Vec<FormalSolution>> {
    let q = factor.ramification();
    let rop = op.ramify(q);
    let fbody = factor
        .body()
        .scale_exponents(RationalExp::from_integer(q as i64));
    let gauged = rop.gauge_exp(&fbody, ZERO_C)?;
    let delta = gauged.to_delta_form();
    let m = delta.order();

    // lattice of the branch: t-exponents on (1/big_d)ℤ, z = t^q
    let mut big_d = 1u32;
    for b in delta.coeffs() {
        big_d = lcm_u32(big_d, b.ram());
    }
    let vstar = delta
        .coeffs()
        .iter()
        .filter_map(|b| b.valuation())
        .min()
        .expect("nonzero operator");

    // symbol: phi[n][j] = coefficient of t^{v* + n/big_d} in b_j
    let mut phi: BTreeMap<usize, Vec<Complex64>> = BTreeMap::new();
    for (j, b) in delta.coeffs().iter().enumerate() {
        for (e, c) in b.terms() {
            let off = e.sub(&vstar).scale(big_d as i64);
            debug_assert!(off.is_integer());
            let entry = phi
                .entry(off.num() as usize)
                .or_insert_with(|| vec![ZERO_C; m + 1]);
            entry[j] += c;
        }
    }
    let chi0 = phi.get(&0).cloned().unwrap_or_else(|| vec![ZERO_C; m + 1]);
    let chi_scale = chi0.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let chi_deg = chi0
        .iter()
        .rposition(|c| c.norm() > 1e-10 * chi_scale.max(1.0))
        .unwrap_or(0);
    if chi_deg != mult {
        warnings.push(format!(
            "indicial equation of branch e^({factor}) has degree {chi_deg}, expected {mult}"
        ));
    }
    let roots = clustered_roots(&poly_roots(&chi0[..=chi_deg]), ROOT_MERGE_TOL, warnings);

    // run far enough for the z-exponents to reach n_trunc / d_global
    let steps = div_ceil_i64(n_trunc * big_d as i64 * q as i64, d_global as i64).max(1) as usize;
    let back = RationalExp::new(1, q as i64);
    let trunc_t = RationalExp::new(steps as i64 + 1, big_d as i64);

    let mut out = vec![];
    for (lambda_t, nu0) in &roots {
        for start_depth in 0..*nu0 {
            let (levels_tab, grew) =
                frobenius_branch(*lambda_t, start_depth, &phi, &chi0, &roots, steps, big_d)?;
            let levels: Vec<PuiseuxSeries> = levels_tab
                .iter()
                .map(|row| {
                    PuiseuxSeries::from_terms(row.iter().enumerate().filter_map(|(l, c)| {
                        (*c != ZERO_C).then(|| (RationalExp::new(l as i64, big_d as i64), *c))
                    }))
                    .with_truncation(trunc_t)
                    .scale_exponents(back)
                })
                .collect();
            out.push(FormalSolution {
                factor: factor.clone(),
                exponent: lambda_t / q as f64,
                levels,
                truncation: n_trunc,
                resonant: grew || start_depth > 0,
            });
        }
    }
    Ok(out)
}

pub(crate) fn binom(k: usize, i: usize) -> f64 {
    let mut acc = 1.0;
    for v in 0..(k - i) {
        acc = acc * (k - v) as f64 / (v + 1) as f64;
    }
    acc
}

/// `r`-th derivative of a polynomial (coefficients low to high) at `s`.
fn poly_deriv_at(coeffs: &[Complex64], s: Complex64, r: usize) -> Complex64 {
    let mut acc = ZERO_C;
    for j in (r..coeffs.len()).rev() {
        let mut fall = 1.0;
        for v in 0..r {
            fall *= (j - v) as f64;
        }
        acc = acc * s + coeffs[j] * fall;
    }
    acc
}

/// One solution of the indicial recursion, starting at the given log depth.
/// Returns the coefficient table `levels[k][ℓ]` and whether the depth grew.
fn frobenius_branch(
    lambda: Complex64,
    start_depth: usize,
    phi: &BTreeMap<usize, Vec<Complex64>>,
    chi0: &[Complex64],
    chi_roots: &[(Complex64, usize)],
    steps: usize,
    big_d: u32,
) -> Result<(Vec<Vec<Complex64>>, bool)> {
    let h = 1.0 / big_d as f64;
    let mut levels: Vec<Vec<Complex64>> = (0..=start_depth)
        .map(|k| {
            let mut row = vec![ZERO_C; steps + 1];
            if k == start_depth {
                row[0] = Complex64::new(1.0, 0.0);
            }
            row
        })
        .collect();
    let mut grew = false;

    for n in 1..=steps {
        let s_n = lambda + n as f64 * h;
        let kcur = levels.len() - 1;
        let mut rhs = vec![ZERO_C; kcur + 1];
        let mut scale = 1.0f64;
        for (&e, pol) in phi.range(1..=n) {
            let s_prev = lambda + (n - e) as f64 * h;
            for k in 0..=kcur {
                let a = levels[k][n - e];
                if a == ZERO_C {
                    continue;
                }
                scale = scale.max(a.norm());
                for i in 0..=k {
                    rhs[i] -= binom(k, i) * poly_deriv_at(pol, s_prev, k - i) * a;
                }
            }
        }
        let nu: usize = chi_roots
            .iter()
            .filter(|(r, _)| (r - s_n).norm() < RESONANCE_TOL * (1.0 + s_n.norm()))
            .map(|(_, m)| m)
            .sum();
        if nu == 0 {
            let diag = poly_deriv_at(chi0, s_n, 0);
            for i in (0..=kcur).rev() {
                let mut acc = rhs[i];
                for k in (i + 1)..=kcur {
                    acc -= binom(k, i) * poly_deriv_at(chi0, s_n, k - i) * levels[k][n];
                }
                levels[i][n] = acc / diag;
            }
        } else {
            // resonance: the diagonal vanishes to order nu. Spend the free
            // normalization below depth nu and grow the log depth until the
            // top rows become consistent.
            let tol = 1e-8 * scale.max(1.0);
            let mut grow = 0usize;
            loop {
                let ktot = kcur + grow;
                let mut a_n = vec![ZERO_C; ktot + 1];
                let mut consistent = true;
                for i in (0..=ktot).rev() {
                    let r_i = if i <= kcur { rhs[i] } else { ZERO_C };
                    if i + nu > ktot {
                        if r_i.norm() > tol {
                            consistent = false;
                            break;
                        }
                        continue;
                    }
                    let mut acc = r_i;
                    for k in (i + nu + 1)..=ktot {
                        acc -= binom(k, i) * poly_deriv_at(chi0, s_n, k - i) * a_n[k];
                    }
                    let pivot = binom(i + nu, i) * poly_deriv_at(chi0, s_n, nu);
                    a_n[i + nu] = acc / pivot;
                }
                if consistent {
                    while levels.len() < ktot + 1 {
                        levels.push(vec![ZERO_C; steps + 1]);
                        grew = true;
                    }
                    for (k, v) in a_n.into_iter().enumerate() {
                        levels[k][n] = v;
                    }
                    break;
                }
                grow += 1;
                if grow > nu + 2 {
                    return Err(Error::RecursionSingular {
                        step: n,
                        msg: "resonant rows stay inconsistent while growing the log depth".into(),
                    });
                }
            }
        }
    }
    Ok((levels, grew))
}

/// Matches each solution's deck image to another solution; returns the cycle
/// partition of the resulting permutation.
fn deck_orbits(solutions: &[FormalSolution], warnings: &mut Vec<String>) -> Vec<Vec<usize>> {
    let n = solutions.len();
    let mut sigma: Vec<usize> = (0..n).collect();
    for (j, s) in solutions.iter().enumerate() {
        let image = s.factor.deck_image();
        let hit = solutions.iter().enumerate().find(|(_, t)| {
            image.body().sub(t.factor.body()).max_abs_coeff() < 1e-6
                && (t.exponent - s.exponent).norm() < 1e-6
                && t.log_depth() == s.log_depth()
        });
        match hit {
            Some((i, _)) => sigma[j] = i,
            None => warnings.push(format!(
                "no deck partner found for solution {j}; orbits may be incomplete"
            )),
        }
    }
    let mut seen = vec![false; n];
    let mut orbits = vec![];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut orbit = vec![];
        let mut cur = start;
        while !seen[cur] {
            seen[cur] = true;
            orbit.push(cur);
            cur = sigma[cur];
        }
        orbits.push(orbit);
    }
    orbits
}

impl HltDatum {
    pub fn rank(&self) -> usize {
        self.solutions.len()
    }

    /// Monodromy of the formal basis over one full period `θ ↦ θ + 2πd` of
    /// the cover: fractional powers of `z` return to themselves, `z^{λ}`
    /// picks up `e^{2πidλ}`, and `log z` shifts by `2πid`, mixing the log
    /// levels of a resonant group. Column `j` holds the coordinates of the
    /// continued `j`-th solution in the basis.
    pub fn formal_monodromy(&self) -> DMatrix<Complex64> {
        let n = self.solutions.len();
        let d = self.ram as f64;
        let mut m = DMatrix::from_element(n, n, ZERO_C);
        let shift = Complex64::new(0.0, 2.0 * std::f64::consts::PI * d);

        // group solutions by factor and by λ mod the exponent lattice
        let mut groups: Vec<Vec<usize>> = vec![];
        'outer: for j in 0..n {
            for g in groups.iter_mut() {
                let rep = &self.solutions[g[0]];
                let s = &self.solutions[j];
                let same_factor = rep.factor.body().sub(s.factor.body()).max_abs_coeff() < 1e-9;
                let dl = (s.exponent - rep.exponent) * d;
                let congruent =
                    dl.im.abs() < RESONANCE_TOL && (dl.re - dl.re.round()).abs() < RESONANCE_TOL;
                if same_factor && congruent {
                    g.push(j);
                    continue 'outer;
                }
            }
            groups.push(vec![j]);
        }

        for g in &groups {
            let lam_star = g
                .iter()
                .map(|&j| self.solutions[j].exponent)
                .min_by(|a, b| a.re.total_cmp(&b.re))
                .unwrap();
            // members written as z^{λ*} Σ_k w_k (log z)^k with shifted series
            let aligned: Vec<Vec<PuiseuxSeries>> = g
                .iter()
                .map(|&j| {
                    let s = &self.solutions[j];
                    let off = ((s.exponent - lam_star).re * self.ram as f64).round() as i64;
                    let mono = PuiseuxSeries::monomial(
                        Complex64::new(1.0, 0.0),
                        RationalExp::new(off, self.ram as i64),
                    );
                    s.levels.iter().map(|w| w.mul(&mono)).collect()
                })
                .collect();
            let max_depth = aligned.iter().map(|l| l.len()).max().unwrap();

            for (cj, &j) in g.iter().enumerate() {
                let s = &self.solutions[j];
                let twist = (s.exponent * shift).exp();
                // continuation: (log z + 2πid)^k expands over lower levels
                let mut cont: Vec<PuiseuxSeries> = vec![PuiseuxSeries::zero(); max_depth];
                for (k, w) in aligned[cj].iter().enumerate() {
                    for i in 0..=k {
                        let coef = twist * binom(k, i) * shift.powu((k - i) as u32);
                        cont[i] = cont[i].add(&w.scale(coef));
                    }
                }
                let kappa = express_in_basis(&cont, &aligned, max_depth);
                for (ci, &i) in g.iter().enumerate() {
                    m[(i, j)] = kappa[ci];
                }
            }
        }
        m
    }
}

/// Least-squares expression of a log-series in a basis of log-series, by
/// matching coefficients on the union of supports.
fn express_in_basis(
    target: &[PuiseuxSeries],
    basis: &[Vec<PuiseuxSeries>],
    max_depth: usize,
) -> Vec<Complex64> {
    let g = basis.len();
    let mut exps: Vec<(usize, RationalExp)> = vec![];
    for k in 0..max_depth {
        let mut seen: Vec<RationalExp> = vec![];
        for b in basis {
            if let Some(w) = b.get(k) {
                seen.extend(w.terms().map(|(e, _)| *e));
            }
        }
        if let Some(w) = target.get(k) {
            seen.extend(w.terms().map(|(e, _)| *e));
        }
        seen.sort();
        seen.dedup();
        exps.extend(seen.into_iter().map(|e| (k, e)));
    }
    let rows = exps.len().max(g);
    let mut a = DMatrix::from_element(rows, g, ZERO_C);
    let mut b = DMatrix::from_element(rows, 1, ZERO_C);
    for (r, (k, e)) in exps.iter().enumerate() {
        for (c, member) in basis.iter().enumerate() {
            a[(r, c)] = member.get(*k).map(|w| w.coeff(e)).unwrap_or(ZERO_C);
        }
        b[(r, 0)] = target.get(*k).map(|w| w.coeff(e)).unwrap_or(ZERO_C);
    }
    // normal equations; the bases met here are tiny and well separated
    let ah = a.adjoint();
    let lhs = &ah * &a;
    let rhs = &ah * &b;
    lhs.lu()
        .solve(&rhs)
        .map(|x| x.column(0).iter().copied().collect())
        .unwrap_or_else(|| vec![ZERO_C; g])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn r(n: i64, d: i64) -> RationalExp {
        RationalExp::new(n, d)
    }

    fn op(text: &str) -> DiffOp {
        DiffOp::parse(text).unwrap()
    }

    fn airy_inf() -> DiffOp {
        op("D^2 - z").at_infinity().unwrap()
    }

    /// Brute-force lower-hull oracle on integer-scaled points.
    fn hull_oracle(points: &[(usize, RationalExp)]) -> Vec<(RationalExp, usize)> {
        // minimal v, rightmost attaining index
        let vmin = points.iter().map(|(_, v)| *v).min().unwrap();
        let j0 = points.iter().filter(|(_, v)| *v == vmin).map(|(j, _)| *j).max().unwrap();
        let mut out = vec![];
        if j0 >= 1 {
            out.push((RationalExp::ZERO, j0));
        }
        // repeatedly pick the smallest slope edge from the current vertex
        let mut cur = (j0, vmin);
        loop {
            let mut best: Option<(RationalExp, (usize, RationalExp))> = None;
            for &(j, v) in points.iter().filter(|(j, _)| *j > cur.0) {
                let k = v.sub(&cur.1).unscale((j - cur.0) as i64);
                match &best {
                    Some((bk, (bj, _))) if k > *bk || (k == *bk && j <= *bj) => {}
                    _ => best = Some((k, (j, v))),
                }
            }
            match best {
                Some((k, next)) => {
                    // extend to the farthest collinear point
                    let far = points
                        .iter()
                        .filter(|(j, v)| {
                            *j > cur.0 && v.sub(&cur.1) == k.scale((*j - cur.0) as i64)
                        })
                        .map(|(j, v)| (*j, *v))
                        .max_by_key(|(j, _)| *j)
                        .unwrap_or(next);
                    out.push((k, far.0 - cur.0));
                    cur = far;
                }
                None => break,
            }
        }
        out
    }

    #[test]
    fn polygon_examples() {
        let toy = newton_polygon(&op("z*D - (1/2)"));
        assert_eq!(toy.slopes(), &[(RationalExp::ZERO, 1)]);
        assert!(toy.is_fuchsian());

        let p = newton_polygon(&op("z^2*D + 1"));
        assert_eq!(p.slopes(), &[(r(1, 1), 1)]);
        assert_eq!(hull_oracle(p.points()), p.slopes());

        let a = newton_polygon(&airy_inf());
        assert_eq!(a.slopes(), &[(r(3, 2), 2)]);
        assert_eq!(hull_oracle(a.points()), a.slopes());

        // ordinary point: only the regular block
        let a0 = newton_polygon(&op("D^2 - z"));
        assert_eq!(a0.slopes(), &[(RationalExp::ZERO, 2)]);
    }

    #[test]
    fn polygon_matches_oracle_on_mixed_operators() {
        for text in [
            "z^3*D^2 + z*D + 1",
            "z^4*D^2 + z^2*D + 1",
            "z^6*D^3 + z*D + 1",
            "z*D^2 + D",
        ] {
            let p = newton_polygon(&op(text));
            assert_eq!(hull_oracle(p.points()), p.slopes(), "operator {text}");
            let m = op(text).order();
            let total: usize = p.slopes().iter().map(|(_, l)| l).sum();
            assert_eq!(total, m, "lengths must sum to the order for {text}");
        }
    }

    #[test]
    fn irregularity_examples() {
        assert_eq!(irregularity(&op("z*D - (1/2)")), RationalExp::ZERO);
        assert_eq!(irregularity(&op("z^2*D + 1")), r(1, 1));
        assert_eq!(irregularity(&airy_inf()), r(3, 2));
    }

    #[test]
    fn factors_of_rank_one_examples() {
        // z^2 D + 1 has the single factor 1/z
        let fs = exponential_factors(&op("z^2*D + 1"), DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(fs.factors.len(), 1);
        let (f, mult) = &fs.factors[0];
        assert_eq!(*mult, 1);
        let want = PuiseuxSeries::monomial(c(1.0, 0.0), r(-1, 1));
        assert!(f.body().sub(&want).max_abs_coeff() < 1e-10);

        // Fuchsian: only the zero factor, with full multiplicity
        let fs = exponential_factors(&op("z*D - (1/2)"), DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(fs.factors.len(), 1);
        assert!(fs.factors[0].0.is_zero());
        assert_eq!(fs.factors[0].1, 1);
    }

    #[test]
    fn airy_factors() {
        let fs = exponential_factors(&airy_inf(), DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(fs.factors.len(), 2);
        let want = 2.0 / 3.0;
        let mut coeffs: Vec<f64> = fs
            .factors
            .iter()
            .map(|(f, m)| {
                assert_eq!(*m, 1);
                let (e, cc) = f.body().leading().unwrap();
                assert_eq!(e, r(-3, 2));
                assert!(cc.im.abs() < 1e-10);
                cc.re
            })
            .collect();
        coeffs.sort_by(f64::total_cmp);
        assert!((coeffs[0] + want).abs() < 1e-10);
        assert!((coeffs[1] - want).abs() < 1e-10);
    }

    #[test]
    fn factor_slope_consistency() {
        for text in ["z^2*D + 1", "z^3*D^2 + z*D + 1", "z^4*D^2 + z^2*D + 1"] {
            let p = op(text);
            let poly = newton_polygon(&p);
            let fs = exponential_factors(&p, DEFAULT_MAX_DEPTH).unwrap();
            for (slope, len) in poly.slopes().iter().filter(|(k, _)| !k.is_zero()) {
                let total: usize = fs
                    .factors
                    .iter()
                    .filter(|(f, _)| {
                        f.body().valuation().map(|v| v.neg()) == Some(*slope)
                    })
                    .map(|(_, m)| m)
                    .sum();
                assert_eq!(total, *len, "slope {slope} of {text}");
            }
        }
    }

    #[test]
    fn gauge_equivariance_of_factors() {
        let p = op("z^3*D^2 + z*D + 1");
        let g = PuiseuxSeries::monomial(c(0.5, 0.25), r(-1, 1));
        let q = p.gauge_exp(&g, c(0.0, 0.0)).unwrap();
        let fs_p = exponential_factors(&p, DEFAULT_MAX_DEPTH).unwrap();
        let fs_q = exponential_factors(&q, DEFAULT_MAX_DEPTH).unwrap();
        assert_eq!(fs_p.factors.len(), fs_q.factors.len());
        // factors of the twist are the originals shifted by -g
        for ((fq, mq), (fp, mp)) in fs_q.factors.iter().zip(fs_p.factors.iter()) {
            assert_eq!(mq, mp);
            let want = fp.body().sub(&g);
            assert!(fq.body().sub(&want).max_abs_coeff() < 1e-8);
        }
    }

    #[test]
    fn toy_formal_solution() {
        let h = formal_solutions(&op("z*D - (1/2)"), 6).unwrap();
        assert_eq!(h.rank(), 1);
        let s = &h.solutions[0];
        assert!(s.factor.is_zero());
        assert!((s.exponent - c(0.5, 0.0)).norm() < 1e-12);
        assert_eq!(s.log_depth(), 0);
        assert_eq!(s.levels[0].coeff(&r(0, 1)), c(1.0, 0.0));
        assert_eq!(s.levels[0].num_terms(), 1);
    }

    #[test]
    fn rank_one_irregular_formal_solution() {
        // u = e^{1/z}: factor 1/z, λ = 0, series identically 1
        let h = formal_solutions(&op("z^2*D + 1"), 8).unwrap();
        assert_eq!(h.rank(), 1);
        let s = &h.solutions[0];
        assert!((s.exponent).norm() < 1e-12);
        assert_eq!(s.log_depth(), 0);
        assert_eq!(s.levels[0].coeff(&r(0, 1)), c(1.0, 0.0));
        assert_eq!(s.levels[0].num_terms(), 1);
        // substitute-and-verify: the gauged operator kills the constant
        let twisted = op("z^2*D + 1")
            .gauge_exp(&s.factor.body().clone(), c(0.0, 0.0))
            .unwrap();
        assert!(twisted.apply(&PuiseuxSeries::one()).is_zero());
    }

    /// Residual oracle: applying the gauge-transformed operator to the
    /// truncated series must leave only terms beyond `(N - m)/d`.
    fn residual_valuation(p: &DiffOp, s: &FormalSolution) -> Option<RationalExp> {
        let q = s.factor.ramification();
        let rop = p.ramify(q);
        let fbody = s
            .factor
            .body()
            .scale_exponents(RationalExp::from_integer(q as i64));
        let gauged = rop.gauge_exp(&fbody, c(0.0, 0.0)).unwrap().to_delta_form();
        assert_eq!(s.log_depth(), 0, "residual oracle here only covers log-free");
        // u(t) = t^{λ_t} w(t); δ(t^{λ} v) = t^{λ}(λ + δ)v, so iterate (λ + δ)
        let w_t = s.levels[0].scale_exponents(RationalExp::from_integer(q as i64));
        let lambda_t = s.exponent * q as f64;
        let mut acc = PuiseuxSeries::zero();
        let mut v = w_t.clone();
        for (j, b) in gauged.coeffs().iter().enumerate() {
            if j > 0 {
                v = v.delta_derivative().add(&v.scale(lambda_t));
            }
            if !b.is_zero() {
                acc = acc.add(&b.mul(&v));
            }
        }
        acc.valuation()
    }

    #[test]
    fn airy_formal_solutions() {
        let p = airy_inf();
        let n = 12;
        let h = formal_solutions(&p, n).unwrap();
        assert_eq!(h.rank(), 2);
        assert_eq!(h.ram, 2);
        for s in &h.solutions {
            // λ = 1/4 in the local coordinate at infinity
            assert!((s.exponent - c(0.25, 0.0)).norm() < 1e-9, "λ = {}", s.exponent);
            assert_eq!(s.log_depth(), 0);
            // series 1 ∓ (5/48) w^{3/2} + …, sign tied to the factor sign
            let lead = s.factor.body().leading().unwrap().1.re;
            let got = s.levels[0].coeff(&r(3, 2));
            let want = if lead < 0.0 { -5.0 / 48.0 } else { 5.0 / 48.0 };
            assert!(
                (got - c(want, 0.0)).norm() < 1e-9,
                "coefficient {got} vs {want}"
            );
            assert!(s.levels[0].num_terms() >= 4, "series unexpectedly short");
            // residual oracle; a vanishing residual beats the bound outright
            let bound = r(n - p.order() as i64, h.ram as i64);
            if let Some(val) = residual_valuation(&p, s) {
                assert!(val >= bound, "residual valuation {val} below {bound}");
            }
        }
        // the two branches form a single deck orbit
        assert_eq!(h.galois_orbits.len(), 1);
        assert_eq!(h.galois_orbits[0].len(), 2);
    }

    #[test]
    fn euler_double_root_produces_log() {
        let h = formal_solutions(&op("delta^2"), 6).unwrap();
        assert_eq!(h.rank(), 2);
        let depths: Vec<usize> = h.solutions.iter().map(|s| s.log_depth()).collect();
        assert_eq!(depths, vec![0, 1]);
        // u2 = log z exactly: top level 1, bottom level 0
        let s = &h.solutions[1];
        assert!(s.levels[0].is_zero());
        assert_eq!(s.levels[1].coeff(&r(0, 1)), c(1.0, 0.0));
        assert!(s.resonant);
    }

    #[test]
    fn integer_resonance_without_log() {
        // δ² - δ has roots 0 and 1, but u = 1 and u = z both close the
        // recursion without logs
        let h = formal_solutions(&op("delta^2 - delta"), 6).unwrap();
        assert_eq!(h.rank(), 2);
        assert!(h.solutions.iter().all(|s| s.log_depth() == 0));
    }

    #[test]
    fn bessel_type_log_solution() {
        // (z d/dz)^2 u = z u: one entire-type branch, one log branch
        let h = formal_solutions(&op("delta^2 - z"), 10).unwrap();
        assert_eq!(h.rank(), 2);
        let depths: Vec<usize> = h.solutions.iter().map(|s| s.log_depth()).collect();
        assert_eq!(depths, vec![0, 1]);
        // plain branch: a_n = a_{n-1}/n^2
        let plain = &h.solutions[0];
        let mut want = 1.0;
        for n in 1..=6 {
            want /= (n * n) as f64;
            let got = plain.levels[0].coeff(&r(n as i64, 1));
            assert!((got - c(want, 0.0)).norm() < 1e-12 * want.max(1.0));
        }
        // log branch: top series monic and equal to the plain one
        let logs = &h.solutions[1];
        assert!(logs.levels[1].sub(&plain.levels[0]).max_abs_coeff() < 1e-10);
    }

    #[test]
    fn ordinary_point_is_resonant_but_log_free() {
        let h = formal_solutions(&op("D^2 - z"), 9).unwrap();
        assert_eq!(h.rank(), 2);
        assert!(h.solutions.iter().all(|s| s.log_depth() == 0));
        let exps: Vec<f64> = h.solutions.iter().map(|s| s.exponent.re).collect();
        assert_eq!(exps, vec![0.0, 1.0]);
        // Taylor recursion oracle a_{k+3} = a_k/((k+3)(k+2)) for the λ=0 branch
        let s0 = &h.solutions[0];
        assert_eq!(s0.levels[0].coeff(&r(3, 1)), c(1.0 / 6.0, 0.0));
        assert_eq!(s0.levels[0].coeff(&r(6, 1)), c(1.0 / 180.0, 0.0));
    }

    #[test]
    fn formal_monodromy_of_toy_model() {
        let h = formal_solutions(&op("z*D - (1/2)"), 4).unwrap();
        let m = h.formal_monodromy();
        assert_eq!(m.nrows(), 1);
        // e^{2πi·(1/2)} = -1
        assert!((m[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn formal_monodromy_of_airy() {
        let h = formal_solutions(&airy_inf(), 10).unwrap();
        let m = h.formal_monodromy();
        // full period d = 2: diag(e^{2πi·2·(1/4)}) = -I
        assert_eq!(m.nrows(), 2);
        assert!((m[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-9);
        assert!((m[(1, 1)] - c(-1.0, 0.0)).norm() < 1e-9);
        assert!(m[(0, 1)].norm() < 1e-9);
        assert!(m[(1, 0)].norm() < 1e-9);
    }

    #[test]
    fn formal_monodromy_with_logs() {
        // basis (1, log z): continuation log ↦ log + 2πi
        let h = formal_solutions(&op("delta^2"), 4).unwrap();
        let m = h.formal_monodromy();
        assert!((m[(0, 0)] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((m[(1, 1)] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((m[(0, 1)] - c(0.0, 2.0 * std::f64::consts::PI)).norm() < 1e-9);
        assert!(m[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn fuchsian_iff_zero_factor() {
        for text in ["z*D - (1/2)", "z^2*D + 1", "z^3*D^2 + z*D + 1", "delta^2 - z"] {
            let p = op(text);
            let fs = exponential_factors(&p, DEFAULT_MAX_DEPTH).unwrap();
            let only_zero = fs.factors.len() == 1 && fs.factors[0].0.is_zero();
            assert_eq!(p.is_fuchsian(), only_zero, "{text}");
        }
    }
}
