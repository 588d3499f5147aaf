//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of every backward rule it is used to verify.

use crate::error::Result;

use super::{Graph, Tensor, Var};

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EntryCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// The ±h stencil crossed a non-differentiable point (ReLU kink or
    /// magnitude tie), so the central difference is not a valid oracle.
    pub straddles_kink: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub entries: Vec<EntryCheck>,
}

impl GradReport {
    pub fn checked(&self) -> impl Iterator<Item = &EntryCheck> {
        self.entries.iter().filter(|e| !e.straddles_kink)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checked().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&EntryCheck> {
        self.checked()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn kinks(&self) -> usize {
        self.entries.iter().filter(|e| e.straddles_kink).count()
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Which entries of which tensors to perturb.
#[derive(Debug, Clone)]
pub enum Selection {
    All,
    /// At most this many evenly spaced entries per tensor.
    Stride(usize),
}

/// Compares backward gradients of `loss(graph, params)` against central
/// differences at steps `h` and `h/2`, combined by one Richardson step so the
/// O(h²) truncation term cancels. Sine activations at ω₀ = 30 and spectral
/// magnitudes near zero otherwise leave truncation error above 1e-4.
pub fn check<F>(params: &[Tensor], h: f64, selection: Selection, loss: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let l = loss(&mut g, &vars)?;
        Ok((g.value(l)[0], g.kink_signature()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let l = loss(&mut g, &vars)?;
    let base_sig = g.kink_signature();
    g.backward(l)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    drop(g);

    let mut work = params.to_vec();
    let mut report = GradReport::default();
    for t in 0..params.len() {
        let n = params[t].len();
        let indices: Vec<usize> = match selection {
            Selection::All => (0..n).collect(),
            Selection::Stride(max) => {
                let step = n.div_ceil(max.max(1)).max(1);
                (0..n).step_by(step).collect()
            }
        };
        for idx in indices {
            let orig = work[t].data()[idx];
            let mut central = |step: f64| -> Result<(f64, bool)> {
                work[t].data_mut()[idx] = orig + step;
                let (plus, sig_p) = eval(&work)?;
                work[t].data_mut()[idx] = orig - step;
                let (minus, sig_m) = eval(&work)?;
                work[t].data_mut()[idx] = orig;
                Ok(((plus - minus) / (2.0 * step), sig_p != base_sig || sig_m != base_sig))
            };
            let (coarse, kink_c) = central(h)?;
            let (fine, kink_f) = central(h / 2.0)?;
            let numeric = (4.0 * fine - coarse) / 3.0;
            let a = analytic[t][idx];
            report.entries.push(EntryCheck {
                tensor: t,
                index: idx,
                analytic: a,
                numeric,
                rel_error: rel_error(a, numeric),
                straddles_kink: kink_c || kink_f,
            });
        }
    }
    Ok(report)
}
