use super::{argmax, Agent, PolicyError, ReaderCache, Result, TraceStep};
use crate::env::{observe, EnvState};
use crate::graph::VertexId;
use crate::tensor::{self, Tape};

use super::EpisodeTrace;

#[derive(Clone)]
struct Hypothesis {
    state: EnvState,
    h: Vec<f64>,
    c: Vec<f64>,
    prev_row: usize,
    score: f64,
    steps: Vec<TraceStep>,
}

struct Expansion {
    step: TraceStep,
    log_probs: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl Agent<'_> {
    fn expand(&self, hyp: &Hypothesis, token_ids: &[usize], message: &[String], cache: &mut ReaderCache) -> Result<Expansion> {
        let policy = self.policy;
        let mut tape = Tape::with_params(&policy.params);
        let msg = policy.embed_message(&mut tape, token_ids)?;
        let h = tape.vector(hyp.h.clone());
        let c = tape.vector(hyp.c.clone());
        let (h, c) = policy.encode_history(&mut tape, h, c, hyp.prev_row, hyp.state.current)?;
        let actions = self.env.available_actions(&hyp.state);
        let reader = self.reader_scores(cache, hyp.state.current, &actions, message)?;
        let sv = policy.score_step(&mut tape, h, hyp.state.current, msg, &actions, reader.as_deref())?;
        let log_probs = tape.value(sv.log_probs).to_vec();
        let step = TraceStep {
            observation: observe(&hyp.state),
            actions,
            ffn: sv.ffn.map(|v| tape.value(v).to_vec()),
            bilinear: sv.bilinear.map(|v| tape.value(v).to_vec()),
            reader,
            distribution: tensor::softmax(tape.value(sv.logits)),
            chosen: argmax(&log_probs),
            log_prob: 0.0,
        };
        Ok(Expansion {
            step,
            log_probs,
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        })
    }

    /// Beam search over action sequences by cumulative log-probability.
    /// Returns the final vertex of the best sequence and its trace. Width 1
    /// gives exactly the greedy rollout.
    pub fn select_knowledge(
        &self,
        start: VertexId,
        message: &[String],
        beam_width: usize,
    ) -> Result<(VertexId, EpisodeTrace)> {
        if beam_width == 0 {
            return Err(PolicyError::Config("beam_width must be at least 1".into()));
        }
        let token_ids = self.policy.encode_message(message)?;
        let width = 2 * self.policy.config.dim;
        let mut cache = ReaderCache::new();
        let mut beam = vec![Hypothesis {
            state: self.env.reset(start, message.to_vec(), None)?,
            h: vec![0.0; width],
            c: vec![0.0; width],
            prev_row: self.policy.start_row(),
            score: 0.0,
            steps: Vec::new(),
        }];

        for _ in 0..self.env.config().horizon {
            let mut expansions = Vec::with_capacity(beam.len());
            let mut candidates = Vec::new();
            for (k, hyp) in beam.iter().enumerate() {
                let e = self.expand(hyp, &token_ids, message, &mut cache)?;
                for (i, &lp) in e.log_probs.iter().enumerate() {
                    candidates.push((k, i, hyp.score + lp, lp));
                }
                expansions.push(e);
            }
            // Stable: equal keys keep generation order.
            candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(b.3.total_cmp(&a.3)));
            candidates.truncate(beam_width);

            let mut next = Vec::with_capacity(candidates.len());
            for (k, i, score, lp) in candidates {
                let (parent, e) = (&beam[k], &expansions[k]);
                let mut step = e.step.clone();
                step.chosen = i;
                step.log_prob = lp;
                let action = step.actions[i];
                let mut steps = parent.steps.clone();
                steps.push(step);
                next.push(Hypothesis {
                    state: self.env.step(&parent.state, &action)?,
                    h: e.h.clone(),
                    c: e.c.clone(),
                    prev_row: self.policy.label_row(action.label),
                    score,
                    steps,
                });
            }
            beam = next;
        }
        let best = beam.into_iter().next().expect("beam is never empty");
        let trace = self.finish(start, best.steps, &best.state)?;
        Ok((trace.final_vertex, trace))
    }
}
