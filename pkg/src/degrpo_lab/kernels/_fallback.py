"""Pure numpy implementations of the hot loops (used when the extension is absent)."""

import numpy as np


def sample_tokens(class_ids, u, cdf, logp, num_classes, answer_vocab, scratch_vocab, t_short, t_think):
    n = len(class_ids)
    c, va, vs = num_classes, answer_vocab, scratch_vocab
    scr_off = 2 * c
    ans_off = scr_off + c * vs
    mode = (u[:, 0] >= cdf[2 * class_ids]).astype(np.int64)
    length = np.where(mode == 1, t_think, t_short)

    tokens = np.full((n, t_think), -1, dtype=np.int64)
    out_lp = np.zeros((n, t_think + 1))
    out_lp[:, 0] = logp[2 * class_ids + mode]

    scr_cdf = cdf[scr_off:ans_off].reshape(c, vs)[class_ids]           # (n, vs)
    scr = (u[:, 1:t_think, None] >= scr_cdf[:, None, :]).sum(axis=2)    # (n, t_think - 1)
    scr = np.minimum(scr, vs - 1)
    scr_fid = scr_off + class_ids[:, None] * vs + scr

    ans_row = 2 * class_ids + mode
    ans_cdf = cdf[ans_off:].reshape(2 * c, va)[ans_row]
    u_ans = u[np.arange(n), length]
    ans = np.minimum((u_ans[:, None] >= ans_cdf).sum(axis=1), va - 1)

    pos = np.arange(t_think - 1)
    is_scr = pos[None, :] < (length - 1)[:, None]
    tokens[:, :t_think - 1] = np.where(is_scr, scr + va, -1)
    out_lp[:, 1:t_think] = np.where(is_scr, logp[scr_fid], 0.0)
    tokens[np.arange(n), length - 1] = ans
    out_lp[np.arange(n), length] = logp[ans_off + ans_row * va + ans]
    return mode, tokens, out_lp


def surrogate(offsets, fid, old_lp, adv, w_ctrl, w_resp, w_kl, lp, ref_lp, epsilon, beta, scale, size):
    n = len(offsets) - 1
    counts = np.diff(offsets)
    row = np.repeat(np.arange(n), counts)
    is_ctrl = np.zeros(len(fid), dtype=bool)
    is_ctrl[offsets[:-1]] = True

    lq = lp[fid]
    a = adv[row]
    ratio = np.exp(lq - old_lp)
    unclipped = ratio * a
    clipped = np.minimum(np.maximum(ratio, 1.0 - epsilon), 1.0 + epsilon) * a
    clip_active = clipped < unclipped
    tok_loss = np.where(clip_active, clipped, unclipped)
    dloss = np.where(clip_active, 0.0, unclipped)

    log_rho = ref_lp[fid] - lq
    rho = np.exp(log_rho)
    k = np.maximum(rho - log_rho - 1.0, 0.0)

    w = np.where(is_ctrl, w_ctrl[row], w_resp[row])
    c = scale * (w * dloss - beta * w_kl[row] * (1.0 - rho))
    coef = np.bincount(fid, weights=c, minlength=size)

    starts = offsets[:-1]
    loss0 = tok_loss[starts].copy()
    resp = np.where(is_ctrl, 0.0, tok_loss)
    loss_resp = np.add.reduceat(resp, starts)
    klsum = np.add.reduceat(k, starts)
    return loss0, loss_resp, klsum, coef, int(clip_active.sum())
