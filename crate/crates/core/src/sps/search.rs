use std::io::Write;

use super::{AdamState, LossBreakdown, Objective, SpsConfig, ZInit};
use crate::distort::{Channel, CriticHandle};
use crate::error::{Error, Result};
use crate::keyring::derive_stream;
use crate::nn::{Decoder, ImagePlane, Tensor};

/// One row of the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Variable, optimizer moments and history of a running search.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub z: Tensor,
    pub adam: AdamState,
    pub iteration: usize,
    pub trace: Vec<TraceRow>,
}

impl SearchState {
    pub fn new(z: Tensor) -> Self {
        let adam = AdamState::new(&z);
        Self {
            z,
            adam,
            iteration: 0,
            trace: Vec::new(),
        }
    }

    /// Applies one Adam update with `grad` and the scheduled rate, and
    /// advances the counter.
    pub fn adam_step(&mut self, grad: &Tensor, cfg: &SpsConfig) -> Result<()> {
        let lr = cfg.lr_at(self.iteration);
        self.adam.step(&mut self.z, grad, lr, &cfg.adam)?;
        self.iteration += 1;
        Ok(())
    }
}

/// Result of [`search_perturbation`].
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Perturbation of the lowest-loss iterate.
    pub delta: Tensor,
    pub best_iteration: usize,
    pub trace: Vec<TraceRow>,
}

impl SearchOutcome {
    pub fn best(&self) -> &TraceRow {
        &self.trace[self.best_iteration]
    }
}

pub fn initial_z(cover: &ImagePlane, init: ZInit) -> Tensor {
    let (c, h, w) = cover.shape();
    match init {
        ZInit::Zero => Tensor::zeros(c, h, w),
        ZInit::Gaussian { seed, std } => {
            let mut r = derive_stream(seed, "search/z_init");
            let data = (0..c * h * w).map(|_| std * r.gaussian()).collect();
            Tensor::from_vec(c, h, w, data).expect("length matches")
        }
    }
}

/// Runs `cfg.total_iters` Adam iterations on the objective and returns the
/// perturbation with the lowest total loss seen.
pub fn search_perturbation(
    cover: &ImagePlane,
    secrets: &[ImagePlane],
    decoders: &[Decoder],
    critics: &[CriticHandle],
    channel: Channel,
    cfg: &SpsConfig,
) -> Result<SearchOutcome> {
    search_with_progress(cover, secrets, decoders, critics, channel, cfg, |_| {})
}

/// [`search_perturbation`] with a callback invoked after every evaluation.
#[allow(clippy::too_many_arguments)]
pub fn search_with_progress(
    cover: &ImagePlane,
    secrets: &[ImagePlane],
    decoders: &[Decoder],
    critics: &[CriticHandle],
    channel: Channel,
    cfg: &SpsConfig,
    mut progress: impl FnMut(&TraceRow),
) -> Result<SearchOutcome> {
    let objective = Objective::new(cover, secrets, decoders, critics, channel, cfg)?;
    let mut state = SearchState::new(initial_z(cover, cfg.z_init));
    let mut best: Option<(f64, usize, Tensor)> = None;
    while state.iteration < cfg.total_iters {
        let iter = state.iteration;
        let (loss, grad) = objective.evaluate(&state.z, iter)?;
        if !loss.is_finite() || !grad.is_finite() {
            let message = format!("non-finite loss or gradient: {loss:?}");
            return Err(Error::Numerical {
                iteration: iter,
                message,
            });
        }
        let row = TraceRow {
            iteration: iter,
            lr: cfg.lr_at(iter),
            loss,
        };
        progress(&row);
        if best.as_ref().is_none_or(|(b, _, _)| row.loss.total < *b) {
            best = Some((row.loss.total, iter, objective.perturbation(&state.z)?));
        }
        state.trace.push(row);
        state.adam_step(&grad, cfg)?;
    }
    let (_, best_iteration, delta) = best.expect("at least one iteration");
    Ok(SearchOutcome {
        delta,
        best_iteration,
        trace: state.trace,
    })
}

/// Writes the trace as CSV: iteration, lr, total, perturbation norm, gamma in
/// effect, one column per receiver and one per critic.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let receivers = trace.first().map_or(0, |r| r.loss.recovery_terms.len());
    let critics = trace.first().map_or(0, |r| r.loss.critic_terms.len());
    let mut header = vec![
        "iteration".to_string(),
        "lr".into(),
        "total".into(),
        "perturbation_norm".into(),
        "gamma_effective".into(),
    ];
    header.extend((0..receivers).map(|t| format!("recovery_{t}")));
    header.extend((0..critics).map(|i| format!("critic_{i}")));
    w.write_record(&header)?;
    for row in trace {
        let l = &row.loss;
        let mut rec = vec![
            row.iteration.to_string(),
            row.lr.to_string(),
            l.total.to_string(),
            l.perturbation_norm.to_string(),
            l.gamma_effective.to_string(),
        ];
        rec.extend(l.recovery_terms.iter().map(f64::to_string));
        rec.extend(l.critic_terms.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyring::InitAlgorithm;
    use crate::nn::DecoderSpec;

    fn setup() -> (Tensor, Vec<Tensor>, Vec<Decoder>) {
        let mut r = derive_stream(1, "search/test");
        let cover = Tensor::from_vec(3, 16, 16, (0..768).map(|_| r.next_f64()).collect()).unwrap();
        let secret = Tensor::from_vec(3, 8, 8, (0..192).map(|_| r.uniform(0.2, 0.8)).collect()).unwrap();
        let d = Decoder::from_seed(&DecoderSpec::standard([1, 1, 2]), 9, InitAlgorithm::Xavier).unwrap();
        (cover, vec![secret], vec![d])
    }

    fn short() -> SpsConfig {
        SpsConfig {
            total_iters: 60,
            gamma_start_iter: 50,
            lr_halve_every: 20,
            ..Default::default()
        }
    }

    #[test]
    fn best_iterate_is_minimum_and_in_box() {
        let (c, s, d) = setup();
        let cfg = short();
        let out = search_perturbation(&c, &s, &d, &[], Channel::Lossless, &cfg).unwrap();
        assert_eq!(out.trace.len(), 60);
        let min = out.trace.iter().map(|r| r.loss.total).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best().loss.total, min);
        assert!(min <= out.trace[0].loss.total);
        assert!(out.delta.max_abs() <= cfg.epsilon);
        assert!(c
            .add(&out.delta)
            .unwrap()
            .data()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.trace[20].lr, cfg.lr0 / 2.0);
    }

    #[test]
    fn search_is_deterministic() {
        let (c, s, d) = setup();
        let cfg = short();
        let a = search_perturbation(&c, &s, &d, &[], Channel::Lossless, &cfg).unwrap();
        let b = search_perturbation(&c, &s, &d, &[], Channel::Lossless, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (c, s, d) = setup();
        let cfg = SpsConfig {
            beta: f64::MAX,
            total_iters: 3,
            gamma_start_iter: 3,
            ..Default::default()
        };
        let err = search_perturbation(&c, &s, &d, &[], Channel::Lossless, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical { iteration: 0, .. }), "{err}");
    }

    #[test]
    fn trace_csv_layout() {
        let (c, s, d) = setup();
        let cfg = SpsConfig {
            total_iters: 3,
            gamma_start_iter: 3,
            ..Default::default()
        };
        let out = search_perturbation(&c, &s, &d, &[], Channel::Lossless, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&out.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "iteration,lr,total,perturbation_norm,gamma_effective,recovery_0"
        );
        assert!(lines[1].starts_with("0,"));
    }
}
