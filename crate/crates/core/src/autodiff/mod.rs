//! Dense `f64` tensors, a reverse-mode tape, named parameters, Adam and a
//! central-difference gradient checker.

mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use params::{adam_step, AdamConfig, Grads, Init, ParamStore};
pub use tape::{binary_cross_entropy, cross_entropy, sigmoid, softplus, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("parameter '{0}' already exists")]
    DuplicateParam(String),
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compare analytic gradients against central differences over every coordinate.
///
/// The error for a coordinate is `|a - fd| / (|a| + |fd| + 1e-12)`; the report carries the maximum.
pub fn grad_check<F>(f: F, params: &ParamStore, h: f64) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (f64, Grads),
{
    let (_, grads) = f(params);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base = params.get(&name).expect("name from store").clone();
        for i in 0..base.len() {
            let mut up = base.clone();
            up.data[i] += h;
            probe.set(&name, up).expect("same shape");
            let f_up = f(&probe).0;
            let mut dn = base.clone();
            dn.data[i] -= h;
            probe.set(&name, dn).expect("same shape");
            let f_dn = f(&probe).0;
            probe.set(&name, base.clone()).expect("same shape");

            let fd = (f_up - f_dn) / (2.0 * h);
            let a = grads.get(&name).map(|g| g.data[i]).unwrap_or(0.0);
            let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
            report.coordinates += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some((name.clone(), i));
                    report.analytic = a;
                    report.numeric = fd;
                }
            }
        }
    }
    report
}
