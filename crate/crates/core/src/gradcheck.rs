//! Central finite-difference gradient checking over [`Parameters`].

use crate::error::Result;
use crate::params::Parameters;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn max_rel(&self) -> f64 {
        self.checks.iter().map(|c| c.rel).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().max_by(|a, b| a.rel.total_cmp(&b.rel))
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel() <= tol
    }

    pub fn len(&self) -> usize {
        self.checks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }
}

fn nudge<M: Parameters<f64>>(model: &mut M, ordinal: usize, index: usize, value: Option<f64>) -> f64 {
    let mut seen = 0;
    let mut old = 0.0;
    model.visit_params("", &mut |p| {
        if seen == ordinal {
            old = p.value[index];
            if let Some(v) = value {
                p.value[index] = v;
            }
        }
        seen += 1;
    });
    old
}

/// Compares analytical gradients against central differences for every
/// element of every parameter.
///
/// `loss(model, true)` must evaluate the scalar loss and accumulate its
/// gradient into the (already zeroed) gradient buffers; `loss(model, false)`
/// must only evaluate it.
pub fn check_params<M, F>(model: &mut M, mut loss: F, h: f64) -> Result<Report>
where
    M: Parameters<f64>,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grads();
    loss(model, true)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit_params("", &mut |p| analytic.push((p.name, p.grad.to_vec())));
    model.zero_grads();

    let mut report = Report::default();
    for (ordinal, (name, grads)) in analytic.iter().enumerate() {
        for (index, &a) in grads.iter().enumerate() {
            let base = nudge(model, ordinal, index, None);
            nudge(model, ordinal, index, Some(base + h));
            let up = loss(model, false)?;
            nudge(model, ordinal, index, Some(base - h));
            let down = loss(model, false)?;
            nudge(model, ordinal, index, Some(base));
            let n = (up - down) / (2.0 * h);
            report.checks.push(Check {
                name: name.clone(),
                index,
                analytic: a,
                numeric: n,
                rel: rel_error(a, n),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamRef;

    struct Quad {
        w: Vec<f64>,
        g: Vec<f64>,
    }

    impl Parameters<f64> for Quad {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, f64>)) {
            f(ParamRef {
                name: crate::params::join(prefix, "w"),
                shape: vec![self.w.len()],
                value: &mut self.w,
                grad: &mut self.g,
            });
        }
    }

    fn quad_loss(m: &mut Quad, grad: bool) -> Result<f64> {
        if grad {
            for (g, w) in m.g.iter_mut().zip(&m.w) {
                *g += 2.0 * w;
            }
        }
        Ok(m.w.iter().map(|w| w * w).sum())
    }

    #[test]
    fn exact_gradient_passes() {
        let mut m = Quad { w: vec![1.0, -2.0, 0.5], g: vec![0.0; 3] };
        let r = check_params(&mut m, quad_loss, DEFAULT_STEP).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.max_rel() < 1e-8);
        assert_eq!(m.w, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut m = Quad { w: vec![1.0, 3.0], g: vec![0.0; 2] };
        let r = check_params(
            &mut m,
            |m: &mut Quad, grad| {
                if grad {
                    m.g[0] += 2.0 * m.w[0];
                    m.g[1] += m.w[1];
                }
                Ok(m.w.iter().map(|w| w * w).sum())
            },
            DEFAULT_STEP,
        )
        .unwrap();
        let w = r.worst().unwrap();
        assert_eq!(w.index, 1);
        assert!((w.rel - 0.5).abs() < 1e-6);
        assert!(!r.passed(1e-3));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-9, 0.0) - 1e-3).abs() < 1e-12);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
