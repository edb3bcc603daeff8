//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Anomaly, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckStatus {
    Pass,
    Fail,
    /// Every checked coordinate agreed, but some perturbations crossed a
    /// clamp/relu kink and were skipped.
    NonDifferentiable,
    /// The function produced NaN/Inf.
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub status: GradcheckStatus,
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub nondifferentiable: usize,
    pub anomalies: Vec<Anomaly>,
}

impl GradcheckReport {
    /// True unless a checked coordinate failed or a value was non-finite.
    pub fn passed(&self) -> bool {
        matches!(self.status, GradcheckStatus::Pass | GradcheckStatus::NonDifferentiable)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor in `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            tol: 1e-4,
            floor: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Checks a scalar function of one tensor.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradcheckReport>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let opts = GradcheckOptions {
        eps,
        tol,
        ..Default::default()
    };
    gradcheck_many(|_, xs| f(xs[0]), std::slice::from_ref(x), &opts)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], record: bool) -> Result<(Tape<f64>, f64, Option<u64>)>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = if record { Tape::new() } else { Tape::inference() };
    tape.track_kinks();
    tape.set_detect_anomaly(true);
    let (value, sig) = {
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = f(&tape, &vars)?;
        if y.value().numel() != 1 {
            return Err(Error::InvalidArgument {
                op: "gradcheck",
                msg: format!("function must be scalar-valued, got shape {:?}", y.shape()),
            });
        }
        if record {
            tape.backward(y)?;
        }
        (y.item(), tape.kink_signature())
    };
    Ok((tape, value, sig))
}

/// Checks a scalar function of several tensors against central differences.
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor<f64>], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    tape.track_kinks();
    tape.set_detect_anomaly(true);
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = f(&tape, &vars)?;
    if y.value().numel() != 1 {
        return Err(Error::InvalidArgument {
            op: "gradcheck",
            msg: format!("function must be scalar-valued, got shape {:?}", y.shape()),
        });
    }
    let base_sig = tape.kink_signature();
    let mut report = GradcheckReport {
        status: GradcheckStatus::Pass,
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        nondifferentiable: 0,
        anomalies: tape.anomalies(),
    };
    if !report.anomalies.is_empty() || !y.item().is_finite() {
        report.status = GradcheckStatus::NonFinite;
        return Ok(report);
    }
    tape.backward(y)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| v.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < x.numel() => {
                let mut c = sample(&mut rng, x.numel(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..x.numel()).collect(),
        };
        for j in coords {
            let orig = x.data()[j];
            probe[i].data_mut()[j] = orig + opts.eps;
            let (tp, fp, sp) = evaluate(&f, &probe, false)?;
            probe[i].data_mut()[j] = orig - opts.eps;
            let (tm, fm, sm) = evaluate(&f, &probe, false)?;
            probe[i].data_mut()[j] = orig;
            let mut bad = tp.anomalies();
            bad.extend(tm.anomalies());
            if !bad.is_empty() || !fp.is_finite() || !fm.is_finite() {
                report.anomalies.extend(bad);
                report.status = GradcheckStatus::NonFinite;
                return Ok(report);
            }
            if sp != base_sig || sm != base_sig {
                report.nondifferentiable += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((i, j));
                }
            }
        }
    }
    report.status = if report.max_rel_err >= opts.tol {
        GradcheckStatus::Fail
    } else if report.nondifferentiable > 0 {
        GradcheckStatus::NonDifferentiable
    } else {
        GradcheckStatus::Pass
    };
    Ok(report)
}
