"""Numeric kernels shared by the jit and pure-Python backends.

Everything here is written in scalar/loop style so numba compiles it
unchanged; with ``QCSIM_DISABLE_JIT=1`` the identical source runs under
CPython. ``math.exp`` is used instead of ``np.exp`` because it is
bit-identical between the two backends. In-loop shuffling uses xorshift64
(shift/xor only, so the fallback path stays free of integer-overflow
warnings) seeded per run.

The fused per-part loop :func:`simulate_stream` is the single implementation
of the production run; the object-level APIs in :mod:`qcsim.learner` delegate
to the same ``sgd_pass`` / ``predict_one`` functions so there is exactly one
copy of the math.
"""

import math

import numpy as np

from ._jit import maybe_njit

# Strategy codes used by the engine.
STRAT_RANDOM = 0
STRAT_PERIODIC = 1
STRAT_SPC = 2
STRAT_SMART = 3

# Verdicts.
PASS = 0
INSPECT = 1

# Reason codes (mirrored by strategies.Reason).
R_DEFAULT = 0
R_RANDOM_DRAW = 1
R_PERIODIC_TICK = 2
R_SPC_OUT_OF_CONTROL = 3
R_PREDICTED_DEFECT = 4
R_LOW_CONFIDENCE = 5
R_BUDGET_EXHAUSTED = 6

# simulate_stream status codes.
STATUS_OK = 0
STATUS_SPC_DEGENERATE = 1

# Retrain event kinds.
KIND_PRETRAIN = 0
KIND_RETRAIN = 1

_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@maybe_njit
def sigmoid(x):
    """Numerically stable standard logistic function."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@maybe_njit
def xorshift64(state):
    """Advance a 1-element uint64 xorshift64 state, returning the new value."""
    x = state[0]
    x = x ^ (x << np.uint64(13))
    x = x ^ (x >> np.uint64(7))
    x = x ^ (x << np.uint64(17))
    state[0] = x
    return x


@maybe_njit
def shuffle_indices(idx, n, state):
    """Fisher-Yates shuffle of 0..n-1 into idx[:n] using xorshift64 draws."""
    for i in range(n):
        idx[i] = i
    for i in range(n - 1, 0, -1):
        u = float(xorshift64(state) >> np.uint64(11)) * _INV_2_53
        j = int(u * (i + 1))
        t = idx[i]
        idx[i] = idx[j]
        idx[j] = t


@maybe_njit
def welford_push(mean, m2, count, x):
    """One Welford update of running feature mean / sum of squared deviations."""
    count[0] += 1
    n = count[0]
    for j in range(mean.shape[0]):
        d = x[j] - mean[j]
        mean[j] += d / n
        m2[j] += d * (x[j] - mean[j])


@maybe_njit
def predict_one(w, b, mean, m2, count, warmup, floor, x):
    """Defect probability for one feature row under the current model.

    Features are z-scored with the running statistics once ``warmup`` samples
    have been absorbed (variance floored at ``floor``); raw features are used
    before that.
    """
    n = count[0]
    s = b
    if n >= warmup and n > 0:
        for j in range(w.shape[0]):
            v = m2[j] / n
            if v < floor:
                v = floor
            s += w[j] * ((x[j] - mean[j]) / math.sqrt(v))
    else:
        for j in range(w.shape[0]):
            s += w[j] * x[j]
    return sigmoid(s)


@maybe_njit
def sgd_pass(w, b, mean, m2, count, X, y, n, eta, l2, gamma, warmup, floor, state, idx, z):
    """One shuffled pass of per-sample SGD steps over X[:n], y[:n].

    For each sample (in xorshift64-shuffled order): running stats absorb the
    raw features first, then one gradient step on the class-weighted logistic
    loss with L2 penalty is taken at the standardized features. ``b`` and
    ``count`` are 1-element arrays so the update is visible to the caller;
    ``idx`` and ``z`` are caller-provided scratch.
    """
    shuffle_indices(idx, n, state)
    dp = w.shape[0]
    for t in range(n):
        k = idx[t]
        welford_push(mean, m2, count, X[k])
        cnt = count[0]
        if cnt >= warmup:
            for j in range(dp):
                v = m2[j] / cnt
                if v < floor:
                    v = floor
                z[j] = (X[k, j] - mean[j]) / math.sqrt(v)
        else:
            for j in range(dp):
                z[j] = X[k, j]
        s = b[0]
        for j in range(dp):
            s += w[j] * z[j]
        p = sigmoid(s)
        yv = 1.0 if y[k] == 1 else 0.0
        g = p - yv
        if y[k] == 1:
            g *= gamma
        for j in range(dp):
            w[j] -= eta * (g * z[j] + l2 * w[j])
        b[0] -= eta * g


@maybe_njit
def balanced_accuracy(w, b, mean, m2, count, warmup, floor, threshold, Z, y):
    """(TPR + TNR) / 2 of thresholded predictions on Z, y; nan if single-class."""
    tp = 0
    fn = 0
    tn = 0
    fp = 0
    for i in range(Z.shape[0]):
        p = predict_one(w, b, mean, m2, count, warmup, floor, Z[i])
        pred = 1 if p >= threshold else 0
        if y[i] == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        else:
            if pred == 1:
                fp += 1
            else:
                tn += 1
    if tp + fn == 0 or tn + fp == 0:
        return np.nan
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


@maybe_njit
def simulate_stream(
    Z,
    x_mon,
    y_true,
    u_strat,
    strategy,
    pretrain_size,
    pretrain_epochs,
    retrain_epochs,
    eta,
    l2,
    gamma,
    threshold,
    warmup,
    floor,
    tau,
    rate_p,
    interval_k,
    spc_m,
    spc_mult,
    budget_capacity,
    budget_refill,
    delay,
    shuffle_seed,
    Z_eval,
    y_eval,
    eval_cadence,
    w,
    b,
    mean,
    m2,
    count,
    X_lab,
    y_lab,
    idx_scratch,
    z_scratch,
    out_verdict,
    out_reason,
    out_p,
    out_unc,
    sub_part,
    retrain_time,
    retrain_size,
    retrain_kind,
    ckpt_time,
    ckpt_labels,
    ckpt_ba,
):
    """Run the full per-part sampling loop over a pre-generated part stream.

    Per tick: predict, decide (first ``pretrain_size`` parts are forced
    inspections), submit, collect lab results due at this tick, train
    (pretrain once the commissioning labels are all back, afterwards
    ``retrain_epochs`` passes over the whole labeled set whenever a result
    returns), and record evaluation checkpoints every ``eval_cadence`` parts.
    After the last part the lab queue is flushed, a final retrain absorbs any
    late labels, and a final checkpoint is recorded at time N.

    Returns (status, n_submitted, n_labels, n_labels_nok, n_retrains,
    n_checkpoints). All decision/submission/checkpoint detail is written into
    the caller-provided output arrays.
    """
    N = Z.shape[0]
    state = np.empty(1, dtype=np.uint64)
    state[0] = shuffle_seed

    tokens = budget_capacity
    spc_cnt = 0
    spc_mean = 0.0
    spc_m2 = 0.0
    spc_mu = 0.0
    spc_limit = 0.0
    spc_ready = False

    n_sub = 0
    next_res = 0
    n_lab = 0
    nok = 0
    n_retrain = 0
    n_ckpt = 0
    pretrained = pretrain_size == 0
    status = STATUS_OK

    for i in range(N):
        p = predict_one(w, b[0], mean, m2, count, warmup, floor, Z[i])
        unc = 1.0 - abs(2.0 * p - 1.0)
        out_p[i] = p
        out_unc[i] = unc

        if strategy == STRAT_SMART:
            tokens = tokens + budget_refill
            if tokens > budget_capacity:
                tokens = budget_capacity

        if strategy == STRAT_SPC and spc_cnt < spc_m:
            # SPC calibration observes every produced part, commissioning included.
            spc_cnt += 1
            d = x_mon[i] - spc_mean
            spc_mean += d / spc_cnt
            spc_m2 += d * (x_mon[i] - spc_mean)
            if spc_cnt == spc_m:
                sd = math.sqrt(spc_m2 / spc_m)
                if sd <= 0.0:
                    status = STATUS_SPC_DEGENERATE
                    break
                spc_mu = spc_mean
                spc_limit = spc_mult * sd
                spc_ready = True

        verdict = PASS
        reason = R_DEFAULT
        if i < pretrain_size:
            verdict = INSPECT
        elif strategy == STRAT_RANDOM:
            if u_strat[i] < rate_p:
                verdict = INSPECT
                reason = R_RANDOM_DRAW
        elif strategy == STRAT_PERIODIC:
            if (i + 1) % interval_k == 0:
                verdict = INSPECT
                reason = R_PERIODIC_TICK
        elif strategy == STRAT_SPC:
            if spc_ready and abs(x_mon[i] - spc_mu) > spc_limit:
                verdict = INSPECT
                reason = R_SPC_OUT_OF_CONTROL
        else:  # STRAT_SMART
            cand_defect = p >= threshold
            cand_unc = unc >= tau
            if cand_defect or cand_unc:
                if tokens >= 1.0:
                    tokens -= 1.0
                    verdict = INSPECT
                    reason = R_PREDICTED_DEFECT if cand_defect else R_LOW_CONFIDENCE
                else:
                    reason = R_BUDGET_EXHAUSTED

        out_verdict[i] = verdict
        out_reason[i] = reason
        if verdict == INSPECT:
            sub_part[n_sub] = i
            n_sub += 1

        new = 0
        while next_res < n_sub and sub_part[next_res] + delay <= i:
            src = sub_part[next_res]
            next_res += 1
            for j in range(Z.shape[1]):
                X_lab[n_lab, j] = Z[src, j]
            y_lab[n_lab] = y_true[src]
            if y_true[src] == 1:
                nok += 1
            n_lab += 1
            new += 1

        if not pretrained:
            if n_lab >= pretrain_size:
                for _ in range(pretrain_epochs):
                    sgd_pass(w, b, mean, m2, count, X_lab, y_lab, n_lab, eta, l2, gamma,
                             warmup, floor, state, idx_scratch, z_scratch)
                pretrained = True
                retrain_time[n_retrain] = i
                retrain_size[n_retrain] = n_lab
                retrain_kind[n_retrain] = KIND_PRETRAIN
                n_retrain += 1
                ckpt_time[n_ckpt] = i
                ckpt_labels[n_ckpt] = n_lab
                ckpt_ba[n_ckpt] = balanced_accuracy(w, b[0], mean, m2, count, warmup,
                                                    floor, threshold, Z_eval, y_eval)
                n_ckpt += 1
        elif new > 0:
            for _ in range(retrain_epochs):
                sgd_pass(w, b, mean, m2, count, X_lab, y_lab, n_lab, eta, l2, gamma,
                         warmup, floor, state, idx_scratch, z_scratch)
            retrain_time[n_retrain] = i
            retrain_size[n_retrain] = n_lab
            retrain_kind[n_retrain] = KIND_RETRAIN
            n_retrain += 1

        if (i + 1) % eval_cadence == 0:
            ckpt_time[n_ckpt] = i
            ckpt_labels[n_ckpt] = n_lab
            ckpt_ba[n_ckpt] = balanced_accuracy(w, b[0], mean, m2, count, warmup,
                                                floor, threshold, Z_eval, y_eval)
            n_ckpt += 1

    if status == STATUS_OK:
        # Flush: remaining results return at their nominal due times > N-1.
        new = 0
        while next_res < n_sub:
            src = sub_part[next_res]
            next_res += 1
            for j in range(Z.shape[1]):
                X_lab[n_lab, j] = Z[src, j]
            y_lab[n_lab] = y_true[src]
            if y_true[src] == 1:
                nok += 1
            n_lab += 1
            new += 1

        if not pretrained and n_lab >= pretrain_size:
            for _ in range(pretrain_epochs):
                sgd_pass(w, b, mean, m2, count, X_lab, y_lab, n_lab, eta, l2, gamma,
                         warmup, floor, state, idx_scratch, z_scratch)
            pretrained = True
            retrain_time[n_retrain] = N
            retrain_size[n_retrain] = n_lab
            retrain_kind[n_retrain] = KIND_PRETRAIN
            n_retrain += 1
        elif pretrained and new > 0:
            for _ in range(retrain_epochs):
                sgd_pass(w, b, mean, m2, count, X_lab, y_lab, n_lab, eta, l2, gamma,
                         warmup, floor, state, idx_scratch, z_scratch)
            retrain_time[n_retrain] = N
            retrain_size[n_retrain] = n_lab
            retrain_kind[n_retrain] = KIND_RETRAIN
            n_retrain += 1

        ckpt_time[n_ckpt] = N
        ckpt_labels[n_ckpt] = n_lab
        ckpt_ba[n_ckpt] = balanced_accuracy(w, b[0], mean, m2, count, warmup, floor,
                                            threshold, Z_eval, y_eval)
        n_ckpt += 1

    return status, n_sub, n_lab, nok, n_retrain, n_ckpt
