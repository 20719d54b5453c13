"""Pure numpy implementation of the server window integrator.

The compiled module ``_kernels`` implements the same functions with the
same signatures; ``kernels`` picks one at import time.

Array conventions: ``x_c`` is ``(d,)``; ``I``, ``Ik``, ``L``, anchors are
``(K, d)``; ``R`` is ``(K, d)`` for diagonal resistances or ``(K, d, d)``
for dense ones.
"""

import numpy as np

STATUS_OK = 0
STATUS_DIVERGED = 2
STATUS_SUBSTEPS = 3


def be_solve_diag(x_c, I, Ik, R, L, G1, dt):
    q = dt / L
    den = 1.0 + q * R
    a = q / den
    b = (I + q * (R * Ik - G1)) / den
    xn = (x_c - dt * b.sum(axis=0)) / (1.0 + dt * a.sum(axis=0))
    return xn, a * xn + b


def be_solve_dense(x_c, I, Ik, R, L, G1, dt):
    K, d = I.shape
    eye = np.eye(d)
    sumA = np.zeros((d, d))
    sumb = np.zeros(d)
    As = np.empty((K, d, d))
    bs = np.empty((K, d))
    for i in range(K):
        q = dt / L[i]
        M = eye + q[:, None] * R[i]
        rhs = np.column_stack([np.diag(q), I[i] + q * (R[i] @ Ik[i] - G1[i])])
        sol = np.linalg.solve(M, rhs)
        As[i] = sol[:, :d]
        bs[i] = sol[:, d]
        sumA += As[i]
        sumb += bs[i]
    xn = np.linalg.solve(eye + dt * sumA, x_c - dt * sumb)
    In = np.einsum("kij,j->ki", As, xn) + bs
    return xn, In


def _drive(x_c, I, Ik, R, L, G, dense):
    dI = I - Ik
    RdI = np.einsum("kij,kj->ki", R, dI) if dense else R * dI
    return (x_c[None, :] - G - RdI) / L


def integrate_window(x_c, I, Ik, R, L, gbase, gslope, W, dt_init, gamma, growth,
                     max_backtracks, max_substeps, bound):
    """Advance the central system over ``[0, W]`` with adaptive BE steps.

    Returns ``(x_c, I, steps, next_dt, exhausted, status)`` where
    ``steps`` is an ``(n, 4)`` array of ``dt, lte_cap, lte_ind, backtracks``.
    """
    dense = R.ndim == 3
    solve = be_solve_dense if dense else be_solve_diag
    x_c = np.array(x_c, dtype=np.float64)
    I = np.array(I, dtype=np.float64)
    tau = 0.0
    sdt = float(dt_init)
    steps = []
    exhausted = 0
    status = STATUS_OK
    end = W * (1.0 - 1e-12)
    while tau < end:
        dt = min(sdt, W - tau)
        r0 = _drive(x_c, I, Ik, R, L, gbase + gslope * tau, dense)
        sI = I.sum(axis=0)
        bt = 0
        while True:
            G1 = gbase + gslope * (tau + dt)
            xn, In = solve(x_c, I, Ik, R, L, G1, dt)
            r1 = _drive(xn, In, Ik, R, L, G1, dense)
            cap = 0.5 * dt * np.max(np.abs(sI - In.sum(axis=0)))
            ind = 0.5 * dt * np.max(np.abs(r1 - r0))
            e = max(cap, ind)
            if not np.isfinite(e):
                e = np.inf
            if e <= gamma * (1.0 + 1e-12):
                break
            if bt >= max_backtracks:
                exhausted += 1
                break
            dt *= min(1.0, max(1e-6, gamma / e))
            bt += 1
        sdt = dt * min(growth, gamma / e) if e > 0 else dt * growth
        x_c, I = xn, In
        tau += dt
        steps.append((dt, cap, ind, bt))
        if not (np.all(np.isfinite(x_c)) and np.all(np.isfinite(I))) or \
                np.max(np.abs(x_c)) > bound or np.max(np.abs(I)) > bound:
            status = STATUS_DIVERGED
            break
        if len(steps) >= max_substeps and tau < end:
            status = STATUS_SUBSTEPS
            break
    if sdt <= 0 or not np.isfinite(sdt):
        sdt = float(dt_init)
    return x_c, I, np.asarray(steps, dtype=np.float64).reshape(-1, 4), sdt, exhausted, status
