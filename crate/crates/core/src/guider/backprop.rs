//! Batched forward pass and backpropagation through time for the masked
//! cross-entropy loss.
//!
//! The batch is sorted by length, longest first, so at step `t` the rows that
//! are still consuming tokens form a prefix `0..active[t]`. Input projections
//! are computed once per batch as `embedding·W` tables and gathered by token.

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::{masked_softmax, sigmoid, GuiderModel, Params, Scalar};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::sampler::TrainingPair;

struct StepCache<T> {
    h_prev: Array2<T>,
    z: Array2<T>,
    r: Array2<T>,
    c: Array2<T>,
}

/// Mean negative log-likelihood of the labels plus its exact gradient.
pub fn loss_and_gradients<T: Scalar>(g: &Grammar, batch: &[TrainingPair], m: &GuiderModel<T>) -> Result<(T, Params<T>)> {
    forward_backward(g, batch, m, true).map(|(loss, grads, _)| (loss, grads.expect("requested")))
}

/// Forward only; returns the mean loss and the argmax rule per pair.
pub(crate) fn loss_and_predictions<T: Scalar>(g: &Grammar, batch: &[TrainingPair], m: &GuiderModel<T>) -> Result<(T, Vec<usize>)> {
    forward_backward(g, batch, m, false).map(|(loss, _, pred)| (loss, pred))
}

fn forward_backward<T: Scalar>(
    g: &Grammar,
    batch: &[TrainingPair],
    m: &GuiderModel<T>,
    with_grads: bool,
) -> Result<(T, Option<Params<T>>, Vec<usize>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for pair in batch {
        super::check_tokens(&pair.input.0, m)?;
        g.check_nonterminal(pair.nt)?;
        if g.rule_by_id(pair.label.index())?.lhs != pair.nt {
            return Err(Error::InapplicableLabel {
                rule: g.rule(pair.label).name.clone(),
                nt: g.nonterminal_name(pair.nt).to_string(),
            });
        }
    }
    let p = &m.params;
    let dims = p.dims();
    let hidden = dims.hidden;
    let n = batch.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(batch[i].input.len()));
    let max_len = batch[order[0]].input.len();
    let active: Vec<usize> = (0..max_len).map(|t| order.iter().take_while(|&&i| batch[i].input.len() > t).count()).collect();

    let proj_z = p.embedding.dot(&p.w_z);
    let proj_r = p.embedding.dot(&p.w_r);
    let proj_h = p.embedding.dot(&p.w_h);

    let mut h = Array2::<T>::zeros((n, hidden));
    let mut caches: Vec<StepCache<T>> = Vec::with_capacity(max_len);
    for (t, &rows) in active.iter().enumerate() {
        let gather = |table: &Array2<T>, bias: &Array1<T>| {
            let mut out = Array2::<T>::zeros((rows, hidden));
            for (k, mut row) in out.rows_mut().into_iter().enumerate() {
                let tok = batch[order[k]].input.0[t].index();
                row.assign(&(&table.row(tok) + bias));
            }
            out
        };
        let h_prev = h.slice(s![..rows, ..]).to_owned();
        let z = (gather(&proj_z, &p.b_z) + h_prev.dot(&p.u_z)).mapv(sigmoid);
        let r = (gather(&proj_r, &p.b_r) + h_prev.dot(&p.u_r)).mapv(sigmoid);
        let rh = &r * &h_prev;
        let c = (gather(&proj_h, &p.b_h) + rh.dot(&p.u_h)).mapv(T::tanh);
        let h_new = &h_prev + &(&z * &(&c - &h_prev));
        h.slice_mut(s![..rows, ..]).assign(&h_new);
        if with_grads {
            caches.push(StepCache { h_prev, z, r, c });
        }
    }

    let logits = h.dot(&p.w_out) + &p.b_out;
    let scale = T::one() / T::from(n).expect("cast");
    let mut loss = T::zero();
    let mut d_logits = Array2::<T>::zeros(logits.raw_dim());
    let mut predictions = vec![0usize; n];
    for k in 0..n {
        let pair = &batch[order[k]];
        let applicable = g.rule_ids_for(pair.nt);
        let row = logits.row(k);
        let probs = masked_softmax(row.as_slice().expect("contiguous"), applicable);
        loss = loss - probs[pair.label.index()].ln();
        // lowest id wins ties
        let mut best = applicable[0].index();
        for id in applicable {
            if probs[id.index()] > probs[best] {
                best = id.index();
            }
        }
        predictions[order[k]] = best;
        for id in applicable {
            let target = if *id == pair.label { T::one() } else { T::zero() };
            d_logits[[k, id.index()]] = (probs[id.index()] - target) * scale;
        }
    }
    loss = loss * scale;
    if !with_grads {
        return Ok((loss, None, predictions));
    }

    let mut grads = Params::<T>::zeros(dims);
    grads.w_out = h.t().dot(&d_logits);
    grads.b_out = d_logits.sum_axis(Axis(0));
    let mut dh = d_logits.dot(&p.w_out.t());

    let mut d_proj_z = Array2::<T>::zeros(proj_z.raw_dim());
    let mut d_proj_r = Array2::<T>::zeros(proj_r.raw_dim());
    let mut d_proj_h = Array2::<T>::zeros(proj_h.raw_dim());
    let one = T::one();
    for t in (0..max_len).rev() {
        let rows = active[t];
        let StepCache { h_prev, z, r, c } = &caches[t];
        let dh_new = dh.slice(s![..rows, ..]).to_owned();

        let mut d_az = Array2::<T>::zeros((rows, hidden));
        let mut d_ah = Array2::<T>::zeros((rows, hidden));
        let mut dh_prev = Array2::<T>::zeros((rows, hidden));
        Zip::from(&mut d_az).and(&dh_new).and(z).and(c).and(h_prev).for_each(|daz, &dhn, &zv, &cv, &hv| {
            *daz = dhn * (cv - hv) * zv * (one - zv);
        });
        Zip::from(&mut d_ah).and(&mut dh_prev).and(&dh_new).and(z).and(c).for_each(|dah, dhp, &dhn, &zv, &cv| {
            *dah = dhn * zv * (one - cv * cv);
            *dhp = dhn * (one - zv);
        });

        let rh = r * h_prev;
        grads.u_h = &grads.u_h + &rh.t().dot(&d_ah);
        let d_rh = d_ah.dot(&p.u_h.t());
        let mut d_ar = Array2::<T>::zeros((rows, hidden));
        Zip::from(&mut d_ar)
            .and(&mut dh_prev)
            .and(&d_rh)
            .and(r)
            .and(h_prev)
            .for_each(|dar, dhp, &drh, &rv, &hv| {
                *dar = drh * hv * rv * (one - rv);
                *dhp = *dhp + drh * rv;
            });

        grads.u_z = &grads.u_z + &h_prev.t().dot(&d_az);
        grads.u_r = &grads.u_r + &h_prev.t().dot(&d_ar);
        dh_prev = dh_prev + d_az.dot(&p.u_z.t()) + d_ar.dot(&p.u_r.t());
        grads.b_z = &grads.b_z + &d_az.sum_axis(Axis(0));
        grads.b_r = &grads.b_r + &d_ar.sum_axis(Axis(0));
        grads.b_h = &grads.b_h + &d_ah.sum_axis(Axis(0));

        for k in 0..rows {
            let tok = batch[order[k]].input.0[t].index();
            d_proj_z.row_mut(tok).scaled_add(one, &d_az.row(k));
            d_proj_r.row_mut(tok).scaled_add(one, &d_ar.row(k));
            d_proj_h.row_mut(tok).scaled_add(one, &d_ah.row(k));
        }
        dh.slice_mut(s![..rows, ..]).assign(&dh_prev);
    }

    grads.w_z = p.embedding.t().dot(&d_proj_z);
    grads.w_r = p.embedding.t().dot(&d_proj_r);
    grads.w_h = p.embedding.t().dot(&d_proj_h);
    grads.embedding = d_proj_z.dot(&p.w_z.t()) + d_proj_r.dot(&p.w_r.t()) + d_proj_h.dot(&p.w_h.t());
    Ok((loss, Some(grads), predictions))
}
