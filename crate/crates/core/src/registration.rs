//! Registration energy, its exact discrete gradient and the Armijo
//! gradient-descent optimizer over time-varying momenta.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::{integrate_with, semi_lagrangian_step, FlowPath};
use crate::geometry::{gradient_central, GridGeometry, ScalarImage, Stencil, VectorField, MAX_DIM};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::momenta::{
    control_lattice, sparsity, sparsity_grad, GramOperator, MomentumSet, SparsityWeights, SynthesisOperator,
    TimeMomenta,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orders {
    ZerothOnly,
    ZerothAndFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Armijo {
    pub initial_step: f64,
    pub shrink: f64,
    pub slope: f64,
    pub max_shrinks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Armijo {
            initial_step: 1.0,
            shrink: 0.5,
            slope: 1e-4,
            max_shrinks: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub kernel: KernelSpec,
    pub orders: Orders,
    #[serde(rename = "T", default = "default_steps")]
    pub steps: usize,
    /// Sparsity weight per order, applied to the step-0 momenta.
    #[serde(default)]
    pub lambda: SparsityWeights,
    #[serde(default = "default_reg_weight")]
    pub reg_weight: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub armijo: Armijo,
    #[serde(default = "default_stop_rel_tol")]
    pub stop_rel_tol: f64,
    #[serde(default = "default_stride")]
    pub control_stride: usize,
    /// Smoothing of the L1 sparsity term.
    #[serde(default = "default_sparsity_eps")]
    pub sparsity_eps: f64,
    /// Solve on a 2x downsampled pair first and warm-start the full resolution.
    #[serde(default)]
    pub pyramid: bool,
}

fn default_steps() -> usize {
    10
}

fn default_reg_weight() -> f64 {
    1.0
}

fn default_max_iters() -> usize {
    200
}

fn default_stop_rel_tol() -> f64 {
    1e-5
}

fn default_stride() -> usize {
    2
}

fn default_sparsity_eps() -> f64 {
    1e-6
}

impl RegistrationConfig {
    /// Defaults with the kernel scale set to four grid spacings.
    pub fn new(family: KernelFamily, orders: Orders, grid: &GridGeometry) -> Self {
        RegistrationConfig {
            kernel: KernelSpec::default_for(family, grid),
            orders,
            steps: default_steps(),
            lambda: SparsityWeights::default(),
            reg_weight: default_reg_weight(),
            max_iters: default_max_iters(),
            armijo: Armijo::default(),
            stop_rel_tol: default_stop_rel_tol(),
            control_stride: default_stride(),
            sparsity_eps: default_sparsity_eps(),
            pyramid: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.lambda.validate()?;
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.steps == 0 {
            return bad("T must be at least 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if self.control_stride == 0 {
            return bad("control_stride must be at least 1".into());
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return bad(format!("reg_weight must be >= 0, got {}", self.reg_weight));
        }
        if !(self.sparsity_eps > 0.0) {
            return bad(format!("sparsity_eps must be positive, got {}", self.sparsity_eps));
        }
        if !(self.stop_rel_tol >= 0.0) {
            return bad(format!("stop_rel_tol must be >= 0, got {}", self.stop_rel_tol));
        }
        let a = &self.armijo;
        if !(a.initial_step > 0.0) || !(a.shrink > 0.0 && a.shrink < 1.0) || !(a.slope > 0.0 && a.slope < 1.0) {
            return bad(format!("bad Armijo parameters {a:?}"));
        }
        Ok(())
    }

    /// Kernel actually used on `grid`: an unset Wendland kink width becomes
    /// the smaller of half the scale and the control-lattice spacing, which
    /// keeps the lattice Gram matrix positive semi-definite.
    pub fn effective_kernel(&self, grid: &GridGeometry) -> KernelSpec {
        let mut k = self.kernel;
        if k.family == KernelFamily::WendlandC0Mult && k.kink_width.is_none() {
            let lattice = self.control_stride as f64 * grid.min_spacing();
            k.kink_width = Some(lattice.min(0.5 * k.scale));
        }
        k
    }
}

/// Energy terms of one configuration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub e_s: f64,
    pub e_r: f64,
    pub sparsity: f64,
    pub total: f64,
}

pub fn ssd(a: &ScalarImage, b: &ScalarImage) -> Result<f64> {
    if !a.geometry().same_shape(b.geometry()) {
        return Err(Error::GeometryMismatch("ssd of images on different grids".into()));
    }
    Ok(half_mean_sq_diff(a.values(), b.values()))
}

const SUM_CHUNK: usize = 4096;

/// `(1/2N) sum (a - b)^2`, summed in fixed chunks so the result does not
/// depend on the thread count.
fn half_mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(SUM_CHUNK)
        .zip(b.par_chunks(SUM_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
        .collect();
    0.5 * partial.iter().sum::<f64>() / a.len() as f64
}

/// `(1/N) (W - I1) grad W` with central differences.
pub fn eulerian_grad_ssd(warped: &ScalarImage, reference: &ScalarImage) -> Result<VectorField> {
    if !warped.geometry().same_shape(reference.geometry()) {
        return Err(Error::GeometryMismatch("gradient of images on different grids".into()));
    }
    let g = warped.geometry();
    let d = g.ndim();
    let n = g.len() as f64;
    let grad = gradient_central(warped);
    let mut data = grad.data().to_vec();
    data.par_chunks_mut(d).enumerate().for_each(|(i, v)| {
        let r = (warped.values()[i] - reference.values()[i]) / n;
        v.iter_mut().for_each(|x| *x *= r);
    });
    VectorField::new(g.clone(), data)
}

/// Fixed data of one registration problem: images, control points and the
/// precomputed synthesis and Gram operators.
pub struct Problem {
    cfg: RegistrationConfig,
    kernel: KernelSpec,
    template: ScalarImage,
    reference: ScalarImage,
    points: Arc<Vec<f64>>,
    synth: SynthesisOperator,
    gram: GramOperator,
}

struct Forward {
    terms: EnergyTerms,
    /// `u_0 ..= u_T`, inverse-map displacements.
    disps: Vec<Vec<f64>>,
    vels: Vec<Vec<f64>>,
    warped: Vec<f64>,
}

impl Problem {
    pub fn new(cfg: &RegistrationConfig, template: &ScalarImage, reference: &ScalarImage) -> Result<Self> {
        let points = control_lattice(template.geometry(), cfg.control_stride)?;
        Self::with_points(cfg, template, reference, points)
    }

    pub fn with_points(
        cfg: &RegistrationConfig,
        template: &ScalarImage,
        reference: &ScalarImage,
        points: Vec<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = template.geometry();
        if !grid.same_shape(reference.geometry()) {
            return Err(Error::GeometryMismatch("template and reference grids differ".into()));
        }
        let kernel = cfg.effective_kernel(grid);
        let synth = SynthesisOperator::new(&points, &kernel, grid)?;
        let gram = GramOperator::new(&points, grid.ndim(), &kernel)?;
        Ok(Problem {
            cfg: cfg.clone(),
            kernel,
            template: template.clone(),
            reference: reference.clone(),
            points: Arc::new(points),
            synth,
            gram,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &Arc<Vec<f64>> {
        &self.points
    }

    pub fn grid(&self) -> &GridGeometry {
        self.template.geometry()
    }

    pub fn zero_momenta(&self) -> TimeMomenta {
        TimeMomenta::zeros(self.grid().ndim(), self.points.clone(), self.cfg.steps).expect("valid lattice")
    }

    fn check(&self, tm: &TimeMomenta) -> Result<()> {
        if tm.num_steps() != self.cfg.steps {
            return Err(Error::InvalidInput(format!(
                "momenta have {} steps, config T = {}",
                tm.num_steps(),
                self.cfg.steps
            )));
        }
        if tm.points().as_slice() != self.points.as_slice() {
            return Err(Error::InvalidInput("momenta control points differ from the problem lattice".into()));
        }
        Ok(())
    }

    /// Coefficients with first-order blocks zeroed when only zeroth order is active.
    fn masked<'a>(&self, ms: &'a MomentumSet) -> std::borrow::Cow<'a, MomentumSet> {
        match self.cfg.orders {
            Orders::ZerothAndFirst => std::borrow::Cow::Borrowed(ms),
            Orders::ZerothOnly => {
                let mut m = ms.clone();
                m.zero_first_order();
                std::borrow::Cow::Owned(m)
            }
        }
    }

    fn forward(&self, tm: &TimeMomenta) -> Result<Forward> {
        self.check(tm)?;
        let grid = self.grid();
        let d = grid.ndim();
        let t = self.cfg.steps;
        let dt = 1.0 / t as f64;
        let mut disps = vec![vec![0.0; grid.len() * d]];
        let mut vels = Vec::with_capacity(t);
        let mut e_r = 0.0;
        for (k, ms) in tm.steps().iter().enumerate() {
            let ms = self.masked(ms);
            let v = self.synth.apply_raw(&ms);
            let u = semi_lagrangian_step(grid, &disps[k], &v, dt);
            if u.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence { step: k });
            }
            e_r += self.gram.energy(ms.coeffs());
            vels.push(v);
            disps.push(u);
        }
        e_r *= self.cfg.reg_weight / (2.0 * t as f64);
        let u = &disps[t];
        let i0 = self.template.values();
        let warped: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|n| {
                let x = grid.node_position(n);
                let mut p = [0.0; MAX_DIM];
                for a in 0..d {
                    p[a] = x[a] + u[n * d + a];
                }
                Stencil::new(grid, &p[..d]).scalar(i0)
            })
            .collect();
        let e_s = half_mean_sq_diff(&warped, self.reference.values());
        let m0 = self.masked(&tm.steps()[0]);
        let sp = if self.cfg.lambda.is_zero() {
            0.0
        } else {
            sparsity(&m0, &self.cfg.lambda, self.cfg.sparsity_eps)?
        };
        let total = e_s + e_r + sp;
        Ok(Forward {
            terms: EnergyTerms {
                e_s,
                e_r,
                sparsity: sp,
                total,
            },
            disps,
            vels,
            warped,
        })
    }

    pub fn energy(&self, tm: &TimeMomenta) -> Result<EnergyTerms> {
        Ok(self.forward(tm)?.terms)
    }

    /// Reverse accumulation through the discrete forward pipeline.
    fn backward(&self, tm: &TimeMomenta, fw: &Forward) -> TimeMomenta {
        let grid = self.grid();
        let d = grid.ndim();
        let t = self.cfg.steps;
        let dt = 1.0 / t as f64;
        let nn = grid.len();
        let n = nn as f64;
        let i0 = self.template.values();
        let i1 = self.reference.values();

        // Terminal: W(x) = I0(x + u_T(x)).
        let u_t = &fw.disps[t];
        let mut bar: Vec<f64> = vec![0.0; nn * d];
        bar.par_chunks_mut(d).enumerate().for_each(|(i, b)| {
            let r = (fw.warped[i] - i1[i]) / n;
            if r == 0.0 {
                return;
            }
            let x = grid.node_position(i);
            let mut p = [0.0; MAX_DIM];
            for a in 0..d {
                p[a] = x[a] + u_t[i * d + a];
            }
            let g = Stencil::new(grid, &p[..d]).scalar_grad(i0, d);
            for a in 0..d {
                b[a] = r * g[a];
            }
        });

        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); t];
        for k in (0..t).rev() {
            let v = &fw.vels[k];
            let u_k = &fw.disps[k];
            // u_{k+1}(x) = -dt v(x) + interp(u_k, x - dt v(x))
            let stencils: Vec<Stencil> = (0..nn)
                .into_par_iter()
                .map(|i| {
                    let x = grid.node_position(i);
                    let mut y = [0.0; MAX_DIM];
                    for a in 0..d {
                        y[a] = x[a] - dt * v[i * d + a];
                    }
                    Stencil::new(grid, &y[..d])
                })
                .collect();
            let mut vbar = vec![0.0; nn * d];
            vbar.par_chunks_mut(d).enumerate().for_each(|(i, vb)| {
                let b = &bar[i * d..(i + 1) * d];
                let jac = stencils[i].vector_jacobian(u_k, d);
                for a in 0..d {
                    let mut s = b[a];
                    for c in 0..d {
                        s += jac[c][a] * b[c];
                    }
                    vb[a] = -dt * s;
                }
            });
            let mut next = vec![0.0; nn * d];
            for (i, st) in stencils.iter().enumerate() {
                let b = &bar[i * d..(i + 1) * d];
                for c in 0..st.corners {
                    let w = st.weights[c];
                    if w == 0.0 {
                        continue;
                    }
                    let base = st.nodes[c] * d;
                    for a in 0..d {
                        next[base + a] += w * b[a];
                    }
                }
            }
            bar = next;

            let ms = self.masked(&tm.steps()[k]);
            let mut g = self.synth.apply_adjoint(&vbar);
            let rg = self.gram.apply(ms.coeffs());
            let scale = self.cfg.reg_weight / (2.0 * t as f64);
            g.iter_mut().zip(&rg).for_each(|(a, b)| *a += scale * b);
            if k == 0 && !self.cfg.lambda.is_zero() {
                let sg = sparsity_grad(&ms, &self.cfg.lambda, self.cfg.sparsity_eps);
                g.iter_mut().zip(&sg).for_each(|(a, b)| *a += b);
            }
            if self.cfg.orders == Orders::ZerothOnly {
                let off = ms.first_offset();
                g[off..].iter_mut().for_each(|x| *x = 0.0);
            }
            grads[k] = g;
        }
        let steps = tm
            .steps()
            .iter()
            .zip(grads)
            .map(|(ms, g)| ms.with_coeffs(g).expect("gradient layout matches"))
            .collect();
        TimeMomenta::new(steps).expect("gradient shares the control points")
    }

    pub fn gradient(&self, tm: &TimeMomenta) -> Result<(EnergyTerms, TimeMomenta)> {
        let fw = self.forward(tm)?;
        Ok((fw.terms, self.backward(tm, &fw)))
    }

    pub fn flow(&self, tm: &TimeMomenta) -> Result<FlowPath> {
        let masked = TimeMomenta::new(tm.steps().iter().map(|m| self.masked(m).into_owned()).collect())?;
        integrate_with(&masked, &self.synth)
    }

    pub fn warped(&self, tm: &TimeMomenta) -> Result<ScalarImage> {
        let fw = self.forward(tm)?;
        ScalarImage::new(self.grid().clone(), fw.warped)
    }
}

pub fn total_energy(
    cfg: &RegistrationConfig,
    tm: &TimeMomenta,
    template: &ScalarImage,
    reference: &ScalarImage,
) -> Result<EnergyTerms> {
    Problem::with_points(cfg, template, reference, tm.points().to_vec())?.energy(tm)
}

pub fn gradient(
    cfg: &RegistrationConfig,
    tm: &TimeMomenta,
    template: &ScalarImage,
    reference: &ScalarImage,
) -> Result<TimeMomenta> {
    Ok(Problem::with_points(cfg, template, reference, tm.points().to_vec())?
        .gradient(tm)?
        .1)
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub momenta: TimeMomenta,
    pub flow: FlowPath,
    pub warped: ScalarImage,
    /// Entry 0 is the initial configuration, then one entry per accepted step.
    pub energy_trace: Vec<EnergyTerms>,
    pub iterations_used: usize,
    pub converged: bool,
    /// The line search exhausted its shrinks.
    pub stagnated: bool,
    /// Kernel with the effective kink width filled in.
    pub kernel: KernelSpec,
}

fn axpy(x: &[f64], a: f64, g: &[f64]) -> Vec<f64> {
    x.iter().zip(g).map(|(x, g)| x - a * g).collect()
}

/// Gradient descent with Armijo backtracking on an existing problem.
pub fn descend(problem: &Problem, init: Option<&TimeMomenta>) -> Result<RegistrationResult> {
    let cfg = &problem.cfg;
    let mut tm = match init {
        Some(m) => m.clone(),
        None => problem.zero_momenta(),
    };
    let (mut terms, mut grad) = match problem.gradient(&tm) {
        Ok(r) => r,
        Err(Error::Divergence { .. }) => return Err(Error::NonFiniteEnergy),
        Err(e) => return Err(e),
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    let mut trace = vec![terms];
    let mut converged = false;
    let mut stagnated = false;
    let mut iterations = 0;
    let mut last_step: Option<f64> = None;
    let a = cfg.armijo;
    while iterations < cfg.max_iters {
        iterations += 1;
        let g = grad.flat();
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 == 0.0 || terms.total == 0.0 {
            converged = true;
            break;
        }
        let x = tm.flat();
        let mut alpha = last_step.map_or(a.initial_step, |s| (2.0 * s).min(a.initial_step));
        let mut accepted = None;
        for _ in 0..=a.max_shrinks {
            let cand = tm.from_flat(&axpy(&x, alpha, &g))?;
            match problem.energy(&cand) {
                Ok(e) if e.total.is_finite() && e.total <= terms.total - a.slope * alpha * g2 => {
                    accepted = Some(cand);
                    break;
                }
                Ok(_) | Err(Error::Divergence { .. }) => alpha *= a.shrink,
                Err(e) => return Err(e),
            }
        }
        let Some(cand) = accepted else {
            stagnated = true;
            break;
        };
        last_step = Some(alpha);
        tm = cand;
        (terms, grad) = problem.gradient(&tm)?;
        trace.push(terms);
        let k = trace.len() - 1;
        if k >= 5 {
            let old = trace[k - 5].total;
            if old == 0.0 || (old - terms.total) / old.abs() < cfg.stop_rel_tol {
                converged = true;
                break;
            }
        }
    }
    let flow = problem.flow(&tm)?;
    let warped = problem.warped(&tm)?;
    Ok(RegistrationResult {
        momenta: tm,
        flow,
        warped,
        energy_trace: trace,
        iterations_used: iterations,
        converged,
        stagnated,
        kernel: problem.kernel,
    })
}

pub fn optimize(cfg: &RegistrationConfig, template: &ScalarImage, reference: &ScalarImage) -> Result<RegistrationResult> {
    let problem = Problem::new(cfg, template, reference)?;
    if !cfg.pyramid {
        return descend(&problem, None);
    }
    // Coarse level on the same physical control points (those inside the coarse box).
    let ct = template.downsample()?;
    let cr = reference.downsample()?;
    let cg = ct.geometry().clone();
    let d = cg.ndim();
    let fine_pts = problem.points();
    let keep: Vec<usize> = (0..fine_pts.len() / d)
        .filter(|&j| cg.contains(&fine_pts[j * d..(j + 1) * d]))
        .collect();
    let coarse_pts: Vec<f64> = keep.iter().flat_map(|&j| fine_pts[j * d..(j + 1) * d].to_vec()).collect();
    let mut ccfg = cfg.clone();
    ccfg.kernel = problem.kernel;
    let coarse = Problem::with_points(&ccfg, &ct, &cr, coarse_pts)?;
    let cres = descend(&coarse, None)?;
    let mut init = problem.zero_momenta();
    for (fine, c) in init.steps_mut().iter_mut().zip(cres.momenta.steps()) {
        for (ci, &j) in keep.iter().enumerate() {
            fine.m0_mut(j).copy_from_slice(c.m0(ci));
            for i in 0..d {
                fine.m1_mut(j, i).copy_from_slice(c.m1(ci, i));
            }
        }
    }
    let mut res = descend(&problem, Some(&init))?;
    res.iterations_used += cres.iterations_used;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn pair(n: usize, shift: f64) -> (ScalarImage, ScalarImage) {
        let g = GridGeometry::unit(&[n, n]).unwrap();
        let c = n as f64 / 2.0;
        let blob = |p: &[f64], s: f64| {
            let r2 = (p[0] - c).powi(2) + (p[1] - c - s).powi(2);
            100.0 * (-r2 / (n as f64 * 0.6)).exp()
        };
        let a = ScalarImage::from_fn(g.clone(), |p| blob(p, 0.0)).unwrap();
        let b = ScalarImage::from_fn(g, |p| blob(p, shift)).unwrap();
        (a, b)
    }

    fn random_tm(p: &Problem, rng: &mut ChaCha8Rng, scale: f64) -> TimeMomenta {
        let z = p.zero_momenta();
        let flat: Vec<f64> = (0..z.flat().len()).map(|_| rng.gen_range(-scale..scale)).collect();
        z.from_flat(&flat).unwrap()
    }

    #[test]
    fn ssd_cases() {
        let g = GridGeometry::unit(&[4, 5]).unwrap();
        let a = ScalarImage::constant(g.clone(), 3.0);
        let b = ScalarImage::constant(g.clone(), 1.0);
        assert_eq!(ssd(&a, &a).unwrap(), 0.0);
        assert_eq!(ssd(&a, &b).unwrap(), 2.0);
        let other = ScalarImage::constant(GridGeometry::unit(&[5, 4]).unwrap(), 0.0);
        assert!(matches!(ssd(&a, &other), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn eulerian_grad_zero_cases() {
        let (a, b) = pair(12, 1.0);
        assert!(eulerian_grad_ssd(&a, &a).unwrap().max_norm() == 0.0);
        let c = ScalarImage::constant(a.geometry().clone(), 5.0);
        assert!(eulerian_grad_ssd(&c, &b).unwrap().max_norm() == 0.0);
    }

    #[test]
    fn eulerian_grad_matches_advection_fd() {
        let (a, b) = pair(16, 2.0);
        let g = a.geometry().clone();
        let grad = eulerian_grad_ssd(&a, &b).unwrap();
        let w = |p: &[f64]| {
            let bump = ((p[0] - 7.5) / 5.5).powi(2) + ((p[1] - 7.5) / 5.5).powi(2);
            let s = (1.0 - bump).max(0.0);
            [0.7 * s, -0.4 * s]
        };
        let advect = |eps: f64| {
            ScalarImage::from_fn(g.clone(), |p| {
                let v = w(p);
                Stencil::new(&g, &[p[0] - eps * v[0], p[1] - eps * v[1]]).scalar(a.values())
            })
            .unwrap()
        };
        let h = 1e-6;
        let fd = (ssd(&advect(h), &b).unwrap() - ssd(&advect(-h), &b).unwrap()) / (2.0 * h);
        let an: f64 = (0..g.len())
            .map(|n| {
                let v = w(&g.node_position(n));
                -(grad.get(n)[0] * v[0] + grad.get(n)[1] * v[1])
            })
            .sum();
        assert!((fd - an).abs() <= 1e-5 * an.abs(), "fd {fd} analytic {an}");
    }

    #[test]
    fn zero_momenta_energy() {
        let (a, b) = pair(12, 1.5);
        let cfg = RegistrationConfig::new(KernelFamily::Gaussian, Orders::ZerothAndFirst, a.geometry());
        let p = Problem::new(&cfg, &a, &a).unwrap();
        assert_eq!(p.energy(&p.zero_momenta()).unwrap().total, 0.0);
        let p = Problem::new(&cfg, &a, &b).unwrap();
        let e = p.energy(&p.zero_momenta()).unwrap();
        assert!((e.total - ssd(&a, &b).unwrap()).abs() < 1e-12);
        let (_, g) = Problem::new(&cfg, &a, &a).unwrap().gradient(&p.zero_momenta()).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    fn fd_check(family: KernelFamily, orders: Orders, lambda: Vec<f64>) {
        let (a, b) = pair(16, 1.5);
        let mut cfg = RegistrationConfig::new(family, orders, a.geometry());
        cfg.steps = 3;
        cfg.control_stride = 4;
        cfg.reg_weight = 0.5;
        cfg.lambda = SparsityWeights(lambda);
        cfg.sparsity_eps = 1e-2;
        let p = Problem::new(&cfg, &a, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tm = random_tm(&p, &mut rng, 0.5);
        let (_, g) = p.gradient(&tm).unwrap();
        let x = tm.flat();
        let gf = g.flat();
        for _ in 0..5 {
            let dir: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-4;
            let ep = p.energy(&tm.from_flat(&axpy(&x, -h, &dir)).unwrap()).unwrap().total;
            let em = p.energy(&tm.from_flat(&axpy(&x, h, &dir)).unwrap()).unwrap().total;
            let fd = (ep - em) / (2.0 * h);
            let an: f64 = gf.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel <= 1e-4, "{family:?} {orders:?}: fd {fd} adjoint {an} rel {rel}");
        }
    }

    #[test]
    fn gradient_matches_fd_gaussian() {
        fd_check(KernelFamily::Gaussian, Orders::ZerothAndFirst, vec![]);
    }

    #[test]
    fn gradient_matches_fd_wendland_with_sparsity() {
        fd_check(KernelFamily::WendlandC0Mult, Orders::ZerothAndFirst, vec![0.3, 0.1]);
    }

    #[test]
    fn zeroth_only_masks_first_order() {
        fd_check(KernelFamily::WendlandC0Mult, Orders::ZerothOnly, vec![]);
        let (a, b) = pair(16, 1.5);
        let mut cfg = RegistrationConfig::new(KernelFamily::WendlandC0Mult, Orders::ZerothOnly, a.geometry());
        cfg.steps = 2;
        cfg.control_stride = 4;
        let p = Problem::new(&cfg, &a, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tm = random_tm(&p, &mut rng, 0.5);
        let (_, g) = p.gradient(&tm).unwrap();
        for ms in g.steps() {
            assert!(ms.coeffs()[ms.first_offset()..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pure_regularizer_gradient_is_gram() {
        let (a, _) = pair(16, 0.0);
        let mut cfg = RegistrationConfig::new(KernelFamily::Gaussian, Orders::ZerothAndFirst, a.geometry());
        cfg.steps = 2;
        cfg.control_stride = 4;
        cfg.reg_weight = 2.0 * cfg.steps as f64;
        let flat = ScalarImage::constant(a.geometry().clone(), 1.0);
        let p = Problem::new(&cfg, &flat, &flat).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tm = random_tm(&p, &mut rng, 1.0);
        let (_, g) = p.gradient(&tm).unwrap();
        let gram = GramOperator::new(p.points(), 2, p.kernel()).unwrap();
        for (gs, ms) in g.steps().iter().zip(tm.steps()) {
            let want = gram.apply(ms.coeffs());
            for (x, y) in gs.coeffs().iter().zip(&want) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_images_converge_immediately() {
        let (a, _) = pair(16, 0.0);
        let cfg = RegistrationConfig::new(KernelFamily::WendlandC0Mult, Orders::ZerothAndFirst, a.geometry());
        let r = optimize(&cfg, &a, &a).unwrap();
        assert!(r.converged && r.iterations_used <= 2);
        assert!(r.momenta.is_zero());
    }

    #[test]
    fn descent_is_monotone_and_reduces_ssd() {
        let (a, b) = pair(24, 2.0);
        let mut cfg = RegistrationConfig::new(KernelFamily::Gaussian, Orders::ZerothOnly, a.geometry());
        cfg.steps = 4;
        cfg.max_iters = 30;
        cfg.reg_weight = 0.01;
        let r = optimize(&cfg, &a, &b).unwrap();
        for w in r.energy_trace.windows(2) {
            assert!(w[1].total <= w[0].total);
        }
        let last = r.energy_trace.last().unwrap();
        assert!(last.e_s < 0.5 * r.energy_trace[0].e_s, "{last:?}");
        let direct = ssd(&r.warped, &b).unwrap();
        assert!((direct - last.e_s).abs() < 1e-9);
    }

    #[test]
    fn pyramid_runs() {
        let (a, b) = pair(24, 2.0);
        let mut cfg = RegistrationConfig::new(KernelFamily::Gaussian, Orders::ZerothOnly, a.geometry());
        cfg.steps = 3;
        cfg.max_iters = 10;
        cfg.reg_weight = 0.01;
        cfg.pyramid = true;
        let r = optimize(&cfg, &a, &b).unwrap();
        assert!(r.energy_trace.last().unwrap().e_s < ssd(&a, &b).unwrap());
    }

    #[test]
    fn config_json_round_trip() {
        let g = GridGeometry::unit(&[8, 8]).unwrap();
        let cfg = RegistrationConfig::new(KernelFamily::WendlandC0Mult, Orders::ZerothAndFirst, &g);
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"T\":10"));
        let back: RegistrationConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let min: RegistrationConfig =
            serde_json::from_str(r#"{"kernel": {"family": "gaussian", "scale": 4}, "orders": "zeroth_only"}"#).unwrap();
        assert_eq!(min.steps, 10);
        assert_eq!(min.kernel.window, 9);
    }
}
