//! Dense primal-dual interior-point solver for the convex subproblems of the
//! planner.
//!
//! Problem form:
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x + ρᵀ s
//! subject to  lb ≤ x ≤ ub
//!             G x − s ≤ h,   s ≥ 0
//! ```
//!
//! Every general row carries an elastic slack with linear penalty, so the
//! problem is always feasible once the box is non-empty. The slacks are
//! eliminated from the Newton system, which leaves a dense positive definite
//! system in `x` alone.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h_mat: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub penalty: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIterations,
    Numerical,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 80,
        }
    }
}

impl QpProblem {
    pub fn objective(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h_mat * x)) + self.g.dot(x) + self.penalty.dot(s)
    }

    /// Smallest slack that makes `x` feasible for the general rows.
    pub fn min_slack(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.rows * x - &self.rhs).map(|v| v.max(0.0))
    }
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    // dual multipliers for x ≥ lb, x ≤ ub, G x − s ≤ h, s ≥ 0
    zl: DVector<f64>,
    zu: DVector<f64>,
    zg: DVector<f64>,
    zs: DVector<f64>,
}

struct Slacks {
    tl: DVector<f64>,
    tu: DVector<f64>,
    tg: DVector<f64>,
}

fn slacks(p: &QpProblem, it: &Iterate) -> Slacks {
    Slacks {
        tl: &it.x - &p.lb,
        tu: &p.ub - &it.x,
        tg: &p.rhs - &p.rows * &it.x + &it.s,
    }
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dzl: DVector<f64>,
    dzu: DVector<f64>,
    dzg: DVector<f64>,
    dzs: DVector<f64>,
}

/// Largest step in `(0, 1]` keeping `v + alpha * dv` positive, scaled by `tau`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>, tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            alpha = alpha.min(-tau * vi / di);
        }
    }
    alpha
}

/// Solves the Newton system for complementarity targets `cl, cu, cg, cs`
/// (the desired `t∘z` products after the step).
#[allow(clippy::too_many_arguments)]
fn newton(
    p: &QpProblem,
    it: &Iterate,
    t: &Slacks,
    rd_x: &DVector<f64>,
    rd_s: &DVector<f64>,
    cl: &DVector<f64>,
    cu: &DVector<f64>,
    cg: &DVector<f64>,
    cs: &DVector<f64>,
) -> Option<Direction> {
    // primal residuals vanish by construction of the slacks, so each dual
    // step is dz = D (A dy) − c / t with D = z / t
    let dl = it.zl.component_div(&t.tl);
    let du = it.zu.component_div(&t.tu);
    let dg = it.zg.component_div(&t.tg);
    let dsv = it.zs.component_div(&it.s);
    let wl = cl.component_div(&t.tl);
    let wu = cu.component_div(&t.tu);
    let wg = cg.component_div(&t.tg);
    let ws = cs.component_div(&it.s);

    // constraint rows in A y ≤ b form: −x, x, [G, −I], [0, −I]
    // right-hand side  −rd − Aᵀ w
    let rx = -rd_x + &wl - &wu - p.rows.transpose() * &wg;
    let rs = -rd_s + &wg + &ws;

    let sum = &dg + &dsv;
    let eff = dg.component_mul(&dsv).component_div(&sum);
    let mut k = p.h_mat.clone();
    let scaled = DMatrix::from_fn(p.rows.nrows(), p.rows.ncols(), |i, j| p.rows[(i, j)] * eff[i]);
    k += p.rows.transpose() * scaled;
    for i in 0..k.nrows() {
        k[(i, i)] += dl[i] + du[i];
    }
    let coupling = dg.component_div(&sum);
    let rhs = &rx + p.rows.transpose() * rs.component_mul(&coupling);

    let dx = match k.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            let scale = k.diagonal().amax().max(1.0);
            for i in 0..k.nrows() {
                k[(i, i)] += 1e-12 * scale;
            }
            k.cholesky()?.solve(&rhs)
        }
    };
    let gdx = &p.rows * &dx;
    let ds = (&rs + dg.component_mul(&gdx)).component_div(&sum);

    let dzl = -dl.component_mul(&dx) + &wl;
    let dzu = du.component_mul(&dx) + &wu;
    let dzg = dg.component_mul(&(&gdx - &ds)) + &wg;
    let dzs = -dsv.component_mul(&ds) + &ws;
    if !dx.iter().chain(ds.iter()).all(|v| v.is_finite()) {
        return None;
    }
    Some(Direction {
        dx,
        ds,
        dzl,
        dzu,
        dzg,
        dzs,
    })
}

/// Solves the problem from `x0`, which is projected into the interior of the
/// box. Panics if dimensions disagree or some `lb > ub`.
pub fn solve(p: &QpProblem, x0: &DVector<f64>, settings: &QpSettings) -> QpSolution {
    let n = p.g.len();
    let m = p.rhs.len();
    assert_eq!(p.h_mat.shape(), (n, n));
    assert_eq!(p.rows.shape(), (m, n));
    assert_eq!(p.penalty.len(), m);
    assert!(p.lb.iter().zip(p.ub.iter()).all(|(l, u)| l <= u), "empty box");

    // a degenerate box side is widened slightly so an interior exists
    let lb = p.lb.zip_map(&p.ub, |l, u| if u - l < 1e-10 { l - 5e-11 } else { l });
    let ub = p.ub.zip_map(&p.lb, |u, l| if u - l < 1e-10 { u + 5e-11 } else { u });
    let orig = p;
    let prob = QpProblem { lb, ub, ..p.clone() };
    let p = &prob;

    let x = DVector::from_fn(n, |i, _| {
        let (l, u) = (p.lb[i], p.ub[i]);
        let margin = 0.01 * (u - l);
        x0[i].clamp(l + margin, u - margin)
    });
    let s = p.min_slack(&x).add_scalar(1.0);
    let mut it = Iterate {
        x,
        s,
        zl: DVector::from_element(n, 1.0),
        zu: DVector::from_element(n, 1.0),
        zg: p.penalty.map(|r| 0.5 * r.max(1e-8)),
        zs: p.penalty.map(|r| 0.5 * r.max(1e-8)),
    };

    let total = (2 * n + 2 * m) as f64;
    let scale = 1.0 + p.g.amax().max(p.penalty.amax());
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;
    for iter in 0..settings.max_iterations {
        iterations = iter + 1;
        let t = slacks(p, &it);
        let rd_x = &p.h_mat * &it.x + &p.g - &it.zl + &it.zu + p.rows.transpose() * &it.zg;
        let rd_s = &p.penalty - &it.zg - &it.zs;
        let gap = t.tl.dot(&it.zl) + t.tu.dot(&it.zu) + t.tg.dot(&it.zg) + it.s.dot(&it.zs);
        let mu = gap / total;
        let dual_res = rd_x.amax().max(rd_s.amax());
        if dual_res <= settings.tolerance * scale && mu <= settings.tolerance {
            status = QpStatus::Converged;
            break;
        }

        // predictor: pure Newton (target products zero)
        let cl = t.tl.component_mul(&it.zl);
        let cu = t.tu.component_mul(&it.zu);
        let cg = t.tg.component_mul(&it.zg);
        let cs = it.s.component_mul(&it.zs);
        let Some(aff) = newton(p, &it, &t, &rd_x, &rd_s, &-&cl, &-&cu, &-&cg, &-&cs) else {
            status = QpStatus::Numerical;
            break;
        };
        let (dtl, dtu, dtg) = (aff.dx.clone(), -&aff.dx, &aff.ds - &p.rows * &aff.dx);
        let alpha_aff = [
            max_step(&t.tl, &dtl, 1.0),
            max_step(&t.tu, &dtu, 1.0),
            max_step(&t.tg, &dtg, 1.0),
            max_step(&it.s, &aff.ds, 1.0),
            max_step(&it.zl, &aff.dzl, 1.0),
            max_step(&it.zu, &aff.dzu, 1.0),
            max_step(&it.zg, &aff.dzg, 1.0),
            max_step(&it.zs, &aff.dzs, 1.0),
        ]
        .into_iter()
        .fold(1.0, f64::min);
        let gap_aff = (&t.tl + alpha_aff * &dtl).dot(&(&it.zl + alpha_aff * &aff.dzl))
            + (&t.tu + alpha_aff * &dtu).dot(&(&it.zu + alpha_aff * &aff.dzu))
            + (&t.tg + alpha_aff * &dtg).dot(&(&it.zg + alpha_aff * &aff.dzg))
            + (&it.s + alpha_aff * &aff.ds).dot(&(&it.zs + alpha_aff * &aff.dzs));
        let sigma = (gap_aff / gap).powi(3).clamp(0.0, 1.0);
        let target = sigma * mu;

        // corrector with second-order terms
        let corr = |tv: &DVector<f64>, zv: &DVector<f64>, dt: &DVector<f64>, dz: &DVector<f64>| {
            (tv.component_mul(zv) + dt.component_mul(dz)).add_scalar(-target)
        };
        let Some(dir) = newton(
            p,
            &it,
            &t,
            &rd_x,
            &rd_s,
            &-corr(&t.tl, &it.zl, &dtl, &aff.dzl),
            &-corr(&t.tu, &it.zu, &dtu, &aff.dzu),
            &-corr(&t.tg, &it.zg, &dtg, &aff.dzg),
            &-corr(&it.s, &it.zs, &aff.ds, &aff.dzs),
        ) else {
            status = QpStatus::Numerical;
            break;
        };
        let (dtl, dtu, dtg) = (dir.dx.clone(), -&dir.dx, &dir.ds - &p.rows * &dir.dx);
        let tau = 0.995;
        let alpha = [
            max_step(&t.tl, &dtl, tau),
            max_step(&t.tu, &dtu, tau),
            max_step(&t.tg, &dtg, tau),
            max_step(&it.s, &dir.ds, tau),
            max_step(&it.zl, &dir.dzl, tau),
            max_step(&it.zu, &dir.dzu, tau),
            max_step(&it.zg, &dir.dzg, tau),
            max_step(&it.zs, &dir.dzs, tau),
        ]
        .into_iter()
        .fold(1.0, f64::min);
        it.x += alpha * &dir.dx;
        it.s += alpha * &dir.ds;
        it.zl += alpha * &dir.dzl;
        it.zu += alpha * &dir.dzu;
        it.zg += alpha * &dir.dzg;
        it.zs += alpha * &dir.dzs;
    }

    // the returned point is exactly box-feasible and carries minimal slacks
    let x = it.x.zip_zip_map(&orig.lb, &orig.ub, |v, l, u| v.clamp(l, u));
    let s = orig.min_slack(&x);
    QpSolution {
        objective: orig.objective(&x, &s),
        x,
        s,
        iterations,
        status,
    }
}
