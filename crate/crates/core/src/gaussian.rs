//! Mixtures of diagonal Gaussians with log-domain, not necessarily normalized,
//! coefficients. Products, marginalizing integrals and sums stay in closed form.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, LogSum};

/// Smallest variance a component may be built with from parameters.
pub const VAR_FLOOR: f64 = 1e-6;

/// Variance from a log-variance parameter, floored at [`VAR_FLOOR`].
#[inline]
pub fn floored_var(log_var: f64) -> f64 {
    log_var.exp().max(VAR_FLOOR)
}

/// `d var / d log_var` for [`floored_var`]; zero on the floor.
#[inline]
pub fn floored_var_grad(log_var: f64) -> f64 {
    let v = log_var.exp();
    if v > VAR_FLOOR {
        v
    } else {
        0.0
    }
}

/// Log density of a univariate normal.
#[inline]
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub log_coef: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Component {
    pub fn new(log_coef: f64, mean: Vec<f64>, var: Vec<f64>) -> Self {
        debug_assert_eq!(mean.len(), var.len());
        Component {
            log_coef,
            mean,
            var,
        }
    }

    /// Log of the unnormalized density `rho * N(x | mean, diag(var))`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_coef
            + x.iter()
                .zip(&self.mean)
                .zip(&self.var)
                .map(|((&x, &m), &v)| log_normal(x, m, v))
                .sum::<f64>()
    }

    /// `log ∫ N(x | mean[r], var[r]) N(x | m, v) dx` over the dimensions in `r`.
    fn log_overlap(&self, range: std::ops::Range<usize>, other: &Component) -> f64 {
        self.mean[range.clone()]
            .iter()
            .zip(&self.var[range])
            .zip(other.mean.iter().zip(&other.var))
            .map(|((&m1, &v1), (&m2, &v2))| log_normal(m1, m2, v1 + v2))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub dim: usize,
    pub components: Vec<Component>,
}

impl GaussianMixture {
    /// The additive identity (zero function).
    pub fn empty(dim: usize) -> Self {
        GaussianMixture {
            dim,
            components: Vec::new(),
        }
    }

    pub fn new(dim: usize, components: Vec<Component>) -> Result<Self> {
        for c in &components {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::Shape(format!(
                    "component of dimension {} in a {dim}-dimensional mixture",
                    c.mean.len()
                )));
            }
            if c.var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Shape("variances must be strictly positive".into()));
            }
        }
        Ok(GaussianMixture { dim, components })
    }

    pub fn single(log_coef: f64, mean: Vec<f64>, var: Vec<f64>) -> Self {
        GaussianMixture {
            dim: mean.len(),
            components: vec![Component::new(log_coef, mean, var)],
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = LogSum::default();
        for c in &self.components {
            acc.add(c.log_density(x));
        }
        acc.value()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    fn check_dim(&self, other: &GaussianMixture) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "mixture dimensions differ: {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    /// Pointwise product of two mixtures over the same variable.
    ///
    /// Each component pair yields precision `1/v1 + 1/v2`, precision-weighted
    /// mean, and coefficient `rho1 * rho2 * N(m1 | m2, v1 + v2)`.
    pub fn product(&self, other: &GaussianMixture) -> Result<GaussianMixture> {
        self.check_dim(other)?;
        let mut components = Vec::with_capacity(self.len() * other.len());
        for a in &self.components {
            for b in &other.components {
                components.push(product_component(a, b));
            }
        }
        Ok(GaussianMixture {
            dim: self.dim,
            components,
        })
    }

    /// `log ∫ g(x) dx`; `-inf` for the empty mixture.
    pub fn total_integral(&self) -> f64 {
        let mut acc = LogSum::default();
        for c in &self.components {
            acc.add(c.log_coef);
        }
        acc.value()
    }

    /// Keep the `max_components` components with the largest coefficients.
    /// Ties are broken by ascending (mean, variance).
    pub fn prune(&self, max_components: usize) -> GaussianMixture {
        let max_components = max_components.max(1);
        if self.len() <= max_components {
            return self.clone();
        }
        let mut order: Vec<&Component> = self.components.iter().collect();
        order.sort_by(|a, b| {
            b.log_coef
                .total_cmp(&a.log_coef)
                .then_with(|| cmp_vec(&a.mean, &b.mean))
                .then_with(|| cmp_vec(&a.var, &b.var))
        });
        GaussianMixture {
            dim: self.dim,
            components: order.into_iter().take(max_components).cloned().collect(),
        }
    }

    pub fn scale(&mut self, log_factor: f64) {
        for c in &mut self.components {
            c.log_coef += log_factor;
        }
    }
}

fn cmp_vec(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

fn product_component(a: &Component, b: &Component) -> Component {
    let d = a.mean.len();
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    let mut log_coef = a.log_coef + b.log_coef;
    for k in 0..d {
        let (m1, v1, m2, v2) = (a.mean[k], a.var[k], b.mean[k], b.var[k]);
        log_coef += log_normal(m1, m2, v1 + v2);
        let v = v1 * v2 / (v1 + v2);
        var.push(v);
        mean.push(v * (m1 / v1 + m2 / v2));
    }
    Component::new(log_coef, mean, var)
}

/// Concatenate mixtures over the same space.
pub fn sum(gs: &[GaussianMixture], dim: usize) -> Result<GaussianMixture> {
    let mut out = GaussianMixture::empty(dim);
    for g in gs {
        if g.dim != dim {
            return Err(Error::Shape(format!(
                "mixture dimensions differ: {} vs {dim}",
                g.dim
            )));
        }
        out.components.extend(g.components.iter().cloned());
    }
    Ok(out)
}

/// Block layout `(d_a, d_b, d_c)` of a rule mixture over concatenated vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks(pub [usize; 3]);

impl Blocks {
    pub fn uniform(d: usize) -> Self {
        Blocks([d, d, d])
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        let start: usize = self.0[..block].iter().sum();
        start..start + self.0[block]
    }
}

fn check_blocks(joint: &GaussianMixture, blocks: Blocks) -> Result<()> {
    if joint.dim != blocks.total() {
        return Err(Error::Shape(format!(
            "joint dimension {} does not match blocks {:?}",
            joint.dim, blocks.0
        )));
    }
    Ok(())
}

/// `log ∫ N(x | t[block]) m(x) dx` for one joint component against a message.
fn log_block_mass(t: &Component, range: std::ops::Range<usize>, msg: &GaussianMixture) -> f64 {
    let mut acc = LogSum::default();
    for u in &msg.components {
        acc.add(u.log_coef + t.log_overlap(range.clone(), u));
    }
    acc.value()
}

/// `∬ joint(a, b, c) b_mix(b) c_mix(c) db dc` as a mixture over `a`, with
/// one output component per component triple.
pub fn integrate_against(
    joint: &GaussianMixture,
    blocks: Blocks,
    b_mix: &GaussianMixture,
    c_mix: &GaussianMixture,
) -> Result<GaussianMixture> {
    check_blocks(joint, blocks)?;
    if b_mix.dim != blocks.0[1] || c_mix.dim != blocks.0[2] {
        return Err(Error::Shape(format!(
            "child mixtures ({}, {}) do not match blocks {:?}",
            b_mix.dim, c_mix.dim, blocks.0
        )));
    }
    let (ra, rb, rc) = (blocks.range(0), blocks.range(1), blocks.range(2));
    let mut components = Vec::with_capacity(joint.len() * b_mix.len() * c_mix.len());
    for t in &joint.components {
        let mean = t.mean[ra.clone()].to_vec();
        let var = t.var[ra.clone()].to_vec();
        for u in &b_mix.components {
            let lb = u.log_coef + t.log_overlap(rb.clone(), u);
            for w in &c_mix.components {
                let lc = w.log_coef + t.log_overlap(rc.clone(), w);
                components.push(Component::new(t.log_coef + lb + lc, mean.clone(), var.clone()));
            }
        }
    }
    Ok(GaussianMixture {
        dim: blocks.0[0],
        components,
    })
}

/// Integrate every block except `keep` against its message and return the
/// result as a mixture over block `keep`. A `None` message is the constant
/// function 1. Components of the result that share a joint component are
/// merged exactly, so the output has at most `joint.len()` components.
pub fn marginalize(
    joint: &GaussianMixture,
    blocks: Blocks,
    messages: [Option<&GaussianMixture>; 3],
    keep: usize,
) -> Result<GaussianMixture> {
    check_blocks(joint, blocks)?;
    for (k, m) in messages.iter().enumerate() {
        if let Some(m) = m {
            if k != keep && m.dim != blocks.0[k] {
                return Err(Error::Shape(format!(
                    "message for block {k} has dimension {} (expected {})",
                    m.dim, blocks.0[k]
                )));
            }
        }
    }
    let rk = blocks.range(keep);
    let mut components = Vec::with_capacity(joint.len());
    'outer: for t in &joint.components {
        let mut log_coef = t.log_coef;
        for (k, m) in messages.iter().enumerate() {
            if k == keep {
                continue;
            }
            if let Some(m) = m {
                let l = log_block_mass(t, blocks.range(k), m);
                if l == f64::NEG_INFINITY {
                    continue 'outer;
                }
                log_coef += l;
            }
        }
        components.push(Component::new(
            log_coef,
            t.mean[rk.clone()].to_vec(),
            t.var[rk.clone()].to_vec(),
        ));
    }
    Ok(GaussianMixture {
        dim: blocks.0[keep],
        components,
    })
}

/// `log ∭ joint(a, b, c) m_a(a) m_b(b) m_c(c)` (a `None` message is 1).
pub fn joint_mass(
    joint: &GaussianMixture,
    blocks: Blocks,
    messages: [Option<&GaussianMixture>; 3],
) -> Result<f64> {
    check_blocks(joint, blocks)?;
    let mut acc = LogSum::default();
    for t in &joint.components {
        let mut l = t.log_coef;
        for (k, m) in messages.iter().enumerate() {
            if let Some(m) = m {
                l += log_block_mass(t, blocks.range(k), m);
            }
        }
        acc.add(l);
    }
    Ok(acc.value())
}

/// Gradient of `log ∫ N(x | mean, diag(var)) m(x) dx` with respect to the
/// mean and log-variance of the parameter Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapGrad {
    pub log_mass: f64,
    pub d_mean: Vec<f64>,
    /// Derivative with respect to the variance itself; chain through
    /// [`floored_var_grad`] for log-variance parameters.
    pub d_var: Vec<f64>,
}

/// Moment identities for a parameter Gaussian against a message. For a
/// `None` message the mass is 1 and the gradients vanish.
pub fn overlap_grad(mean: &[f64], var: &[f64], msg: Option<&GaussianMixture>) -> OverlapGrad {
    let d = mean.len();
    let Some(msg) = msg else {
        return OverlapGrad {
            log_mass: 0.0,
            d_mean: vec![0.0; d],
            d_var: vec![0.0; d],
        };
    };
    let logs: Vec<f64> = msg
        .components
        .iter()
        .map(|u| {
            u.log_coef
                + (0..d)
                    .map(|k| log_normal(mean[k], u.mean[k], var[k] + u.var[k]))
                    .sum::<f64>()
        })
        .collect();
    let log_mass = log_sum_exp(&logs);
    let mut d_mean = vec![0.0; d];
    let mut d_var = vec![0.0; d];
    if log_mass == f64::NEG_INFINITY {
        return OverlapGrad {
            log_mass,
            d_mean,
            d_var,
        };
    }
    for (u, l) in msg.components.iter().zip(&logs) {
        let w = (l - log_mass).exp();
        for k in 0..d {
            let s = var[k] + u.var[k];
            let diff = u.mean[k] - mean[k];
            d_mean[k] += w * diff / s;
            d_var[k] += w * (-0.5 / s + 0.5 * diff * diff / (s * s));
        }
    }
    OverlapGrad {
        log_mass,
        d_mean,
        d_var,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(log_coef: f64) -> GaussianMixture {
        GaussianMixture::single(log_coef, vec![0.0], vec![1.0])
    }

    /// Trapezoid-free Riemann sum on [-10, 10] with step 1e-3.
    fn quad_1d(f: impl Fn(f64) -> f64) -> f64 {
        let h = 1e-3;
        (0..=20_000).map(|i| f(-10.0 + i as f64 * h)).sum::<f64>() * h
    }

    #[test]
    fn product_of_standard_normals() {
        let g = std_normal(0.0).product(&std_normal(0.0)).unwrap();
        let c = &g.components[0];
        assert!((c.log_coef.exp() - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-12);
        assert!((c.log_coef.exp() - 0.28209479177387814).abs() < 1e-12);
        assert_eq!(c.mean, vec![0.0]);
        assert!((c.var[0] - 0.5).abs() < 1e-15);
        let q = quad_1d(|x| (2.0 * log_normal(x, 0.0, 1.0)).exp());
        assert!((q - c.log_coef.exp()).abs() / q < 1e-6);
    }

    #[test]
    fn product_with_broad_component() {
        let g = GaussianMixture::single(0.3, vec![0.7], vec![0.5]);
        let broad = GaussianMixture::single(0.0, vec![0.0], vec![1e8]);
        let p = g.product(&broad).unwrap();
        let c = &p.components[0];
        let shift = c.log_coef - 0.3;
        assert!((shift - log_normal(0.7, 0.0, 1e8)).abs() < 1e-8);
        assert!((c.mean[0] - 0.7).abs() < 1e-8);
        let q = quad_1d(|x| g.density(&[x]) * broad.density(&[x]));
        assert!((q - c.log_coef.exp()).abs() / q < 1e-6);
    }

    #[test]
    fn empty_is_annihilator() {
        let e = GaussianMixture::empty(1);
        assert!(e.product(&std_normal(0.0)).unwrap().is_empty());
        assert!(std_normal(0.0).product(&e).unwrap().is_empty());
        assert_eq!(e.total_integral(), f64::NEG_INFINITY);
        assert!(std_normal(0.0).product(&GaussianMixture::empty(2)).is_err());
    }

    #[test]
    fn total_integral_cases() {
        assert_eq!(std_normal(0.0).total_integral(), 0.0);
        let two = sum(&[std_normal(0.0), std_normal(0.0)], 1).unwrap();
        assert!((two.total_integral() - 2f64.ln()).abs() < 1e-15);
        let g = GaussianMixture::new(
            1,
            vec![
                Component::new(-0.4, vec![1.0], vec![0.3]),
                Component::new(0.2, vec![-2.0], vec![2.0]),
            ],
        )
        .unwrap();
        let q = quad_1d(|x| g.density(&[x]));
        assert!((q.ln() - g.total_integral()).abs() < 1e-6);
    }

    #[test]
    fn sum_contracts() {
        assert!(sum(&[], 2).unwrap().is_empty());
        let g = std_normal(0.5);
        assert_eq!(sum(&[g.clone()], 1).unwrap(), g);
        let h = GaussianMixture::single(-1.0, vec![2.0], vec![0.2]);
        let s = sum(&[g.clone(), h.clone()], 1).unwrap();
        let expect = crate::linalg::log_add_exp(g.total_integral(), h.total_integral());
        assert!((s.total_integral() - expect).abs() < 1e-15);
        assert!(sum(&[g, GaussianMixture::empty(2)], 1).is_err());
    }

    #[test]
    fn prune_keeps_largest() {
        let comps: Vec<Component> = [0.0, -1.0, -2.0]
            .iter()
            .enumerate()
            .map(|(i, &l)| Component::new(l, vec![i as f64], vec![1.0]))
            .collect();
        let g = GaussianMixture::new(1, comps).unwrap();
        assert_eq!(g.prune(5), g);
        let p = g.prune(2);
        assert_eq!(p.len(), 2);
        assert_eq!(p.components[0].log_coef, 0.0);
        assert_eq!(p.components[1].log_coef, -1.0);
        assert!(p.total_integral() <= g.total_integral());

        let tied = GaussianMixture::new(
            1,
            vec![
                Component::new(0.0, vec![1.0], vec![1.0]),
                Component::new(0.0, vec![-1.0], vec![1.0]),
            ],
        )
        .unwrap();
        assert_eq!(tied.prune(1).components[0].mean, vec![-1.0]);
    }

    #[test]
    fn integrate_against_standard_normals() {
        let joint = GaussianMixture::single(0.0, vec![0.0; 3], vec![1.0; 3]);
        let r = integrate_against(&joint, Blocks::uniform(1), &std_normal(0.0), &std_normal(0.0))
            .unwrap();
        assert_eq!(r.len(), 1);
        let expect = 1.0 / (4.0 * PI);
        assert!((r.components[0].log_coef.exp() - expect).abs() < 1e-14);
        assert_eq!(r.components[0].var, vec![1.0]);

        // 2-D quadrature of the defining integral at a = 0.3.
        let a = 0.3;
        let h = 2e-2;
        let n = 1000;
        let mut q = 0.0;
        for i in 0..=n {
            let b = -10.0 + i as f64 * h;
            for j in 0..=n {
                let c = -10.0 + j as f64 * h;
                q += joint.density(&[a, b, c]) * std_normal(0.0).density(&[b]) * std_normal(0.0).density(&[c]);
            }
        }
        q *= h * h;
        assert!((q - r.density(&[a])).abs() / q < 1e-6);
    }

    #[test]
    fn integrate_against_counts_and_peaks() {
        let joint = GaussianMixture::single(0.0, vec![0.5, -0.2, 0.1], vec![1.0, 0.5, 2.0]);
        let two = GaussianMixture::new(
            1,
            vec![
                Component::new(0.0, vec![0.0], vec![1.0]),
                Component::new(-0.5, vec![1.0], vec![0.5]),
            ],
        )
        .unwrap();
        let r = integrate_against(&joint, Blocks::uniform(1), &two, &two).unwrap();
        assert_eq!(r.len(), 4);

        // Narrow children pick out the joint's density at their means.
        let nb = GaussianMixture::single(0.0, vec![-0.2], vec![1e-6]);
        let nc = GaussianMixture::single(0.0, vec![0.1], vec![1e-6]);
        let r = integrate_against(&joint, Blocks::uniform(1), &nb, &nc).unwrap();
        let peak = log_normal(-0.2, -0.2, 0.5) + log_normal(0.1, 0.1, 2.0);
        assert!((r.components[0].log_coef - peak).abs() < 1e-5);

        assert!(integrate_against(&joint, Blocks([1, 1, 2]), &two, &two).is_err());
    }

    #[test]
    fn marginalize_merges_expanded_components() {
        let joint = GaussianMixture::new(
            3,
            vec![
                Component::new(0.1, vec![0.5, -0.2, 0.1], vec![1.0, 0.5, 2.0]),
                Component::new(-0.3, vec![-0.5, 0.4, 0.0], vec![0.7, 1.5, 0.9]),
            ],
        )
        .unwrap();
        let b = GaussianMixture::new(
            1,
            vec![
                Component::new(0.0, vec![0.0], vec![1.0]),
                Component::new(-0.5, vec![1.0], vec![0.5]),
            ],
        )
        .unwrap();
        let c = GaussianMixture::single(0.2, vec![0.3], vec![0.8]);
        let full = integrate_against(&joint, Blocks::uniform(1), &b, &c).unwrap();
        let merged = marginalize(&joint, Blocks::uniform(1), [None, Some(&b), Some(&c)], 0).unwrap();
        assert_eq!(merged.len(), 2);
        for x in [-1.0, 0.0, 0.4, 2.0] {
            assert!((full.log_density(&[x]) - merged.log_density(&[x])).abs() < 1e-12);
        }
        let total = joint_mass(&joint, Blocks::uniform(1), [Some(&c), Some(&b), Some(&c)]).unwrap();
        let via = merged.product(&c).unwrap().total_integral();
        assert!((total - via).abs() < 1e-12);
    }

    #[test]
    fn overlap_grad_matches_finite_differences() {
        let msg = GaussianMixture::new(
            2,
            vec![
                Component::new(0.1, vec![0.5, -0.2], vec![1.0, 0.5]),
                Component::new(-0.3, vec![-0.5, 0.4], vec![0.7, 1.5]),
            ],
        )
        .unwrap();
        let mean = [0.2, 0.1];
        let var = [0.8, 1.3];
        let g = overlap_grad(&mean, &var, Some(&msg));
        let f = |m: [f64; 2], v: [f64; 2]| overlap_grad(&m, &v, Some(&msg)).log_mass;
        let h = 1e-5;
        for k in 0..2 {
            let (mut mp, mut mm) = (mean, mean);
            mp[k] += h;
            mm[k] -= h;
            let num = (f(mp, var) - f(mm, var)) / (2.0 * h);
            assert!((num - g.d_mean[k]).abs() < 1e-8);
            let (mut vp, mut vm) = (var, var);
            vp[k] += h;
            vm[k] -= h;
            let num = (f(mean, vp) - f(mean, vm)) / (2.0 * h);
            assert!((num - g.d_var[k]).abs() < 1e-8);
        }
        let none = overlap_grad(&mean, &var, None);
        assert_eq!(none.log_mass, 0.0);
        let empty = overlap_grad(&mean, &var, Some(&GaussianMixture::empty(2)));
        assert_eq!(empty.log_mass, f64::NEG_INFINITY);
        assert_eq!(empty.d_mean, vec![0.0, 0.0]);
    }
}
