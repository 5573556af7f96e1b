"""Numeric kernels shared by the solvers and the simulator.

Everything here sticks to the numpy subset numba compiles, takes and returns
plain float64 arrays, and reports failures through integer status codes
instead of exceptions. The public modules translate codes into exceptions
with context (player, stage, iteration).
"""

import numpy as np

from ._jit import njit

OK = 0
INNOVATION_1 = 1
INNOVATION_2 = 2
WEIGHT_1 = 3
WEIGHT_2 = 4
COUPLED = 5
CONVEXITY = 6
CONCAVITY = 7
SCHUR = 8
GAIN_ROUTES = 9

GAIN_ROUTE_TOL = 1e-8


@njit
def sym(M):
    return 0.5 * (M + M.T)


@njit
def cond(M):
    if M.shape[0] == 0:
        return 1.0
    c = np.linalg.cond(M)
    if np.isnan(c):
        return np.inf
    return c


@njit
def right_solve(X, M):
    """X @ inv(M) for symmetric M."""
    return np.linalg.solve(M, X.T).T


# ---------------------------------------------------------------- filtering


@njit
def filter_gains(Sig, Gam, C1, C2, V1, V2, cond_cap):
    """Equilibrium innovation gains at an a priori joint covariance.

    Returns (L1, L2, status, worst condition number seen).
    """
    n = C1.shape[1]
    p1 = C1.shape[0]
    p2 = C2.shape[0]
    S11 = Sig[:n, :n]
    S12 = Sig[:n, n:]
    S22 = Sig[n:, n:]
    G11 = Gam[:n, :n]
    G12 = Gam[:n, n:]
    G22 = Gam[n:, n:]
    L1 = np.zeros((n, p1))
    L2 = np.zeros((n, p2))

    In1 = C1 @ S11 @ C1.T + V1
    In2 = C2 @ S22 @ C2.T + V2
    c1 = cond(In1)
    if not c1 < cond_cap:
        return L1, L2, INNOVATION_1, c1
    c2 = cond(In2)
    if not c2 < cond_cap:
        return L1, L2, INNOVATION_2, c2
    worst = max(c1, c2)

    if not np.any(G12 != 0.0):
        # no coupling: two standard Kalman gains, weight diagonal irrelevant
        L1 = right_solve(S11 @ C1.T, In1)
        L2 = right_solve(S22 @ C2.T, In2)
        return L1, L2, OK, worst

    g1 = cond(G11)
    if not g1 < cond_cap:
        return L1, L2, WEIGHT_1, g1
    g2 = cond(G22)
    if not g2 < cond_cap:
        return L1, L2, WEIGHT_2, g2

    M1 = np.linalg.solve(G11, G12)
    M2 = np.linalg.solve(G22, G12.T)
    # L1 = H1 - M1 L2 N1,  L2 = H2 - M2 L1 N2
    H1 = right_solve(S11 @ C1.T + M1 @ S12.T @ C1.T, In1)
    H2 = right_solve(S22 @ C2.T + M2 @ S12 @ C2.T, In2)
    N1 = right_solve(C2 @ S12.T @ C1.T, In1)
    N2 = right_solve(C1 @ S12 @ C2.T, In2)

    k1 = n * p1
    k2 = n * p2
    Msys = np.eye(k1 + k2)
    # row-major vec: vec(M X N) = kron(M, N^T) vec(X)
    Msys[:k1, k1:] = np.kron(M1, N1.T)
    Msys[k1:, :k1] = np.kron(M2, N2.T)
    cs = cond(Msys)
    if not cs < cond_cap:
        return L1, L2, COUPLED, cs
    rhs = np.concatenate((H1.ravel(), H2.ravel()))
    sol = np.linalg.solve(Msys, rhs)
    L1 = sol[:k1].copy().reshape((n, p1))
    L2 = sol[k1:].copy().reshape((n, p2))
    return L1, L2, OK, max(worst, cs)


@njit
def coupled_abar(A, B1, B2, K1, K2):
    n = A.shape[0]
    Ab = np.empty((2 * n, 2 * n))
    BK1 = B1 @ K1
    BK2 = B2 @ K2
    Ab[:n, :n] = A + BK2
    Ab[:n, n:] = -BK2
    Ab[n:, :n] = -BK1
    Ab[n:, n:] = A + BK1
    return Ab


@njit
def block_diag2(X, Y):
    out = np.zeros((X.shape[0] + Y.shape[0], X.shape[1] + Y.shape[1]))
    out[: X.shape[0], : X.shape[1]] = X
    out[X.shape[0] :, X.shape[1] :] = Y
    return out


@njit
def apriori(Sig_post, Abar, W):
    return sym(Abar @ Sig_post @ Abar.T + block_diag2(W, W))


@njit
def aposteriori(Sig_prior, L1, L2, C1, C2, V1, V2):
    n = C1.shape[1]
    J = block_diag2(np.eye(n) - L1 @ C1, np.eye(n) - L2 @ C2)
    Lb = block_diag2(L1, L2)
    Vb = block_diag2(V1, V2)
    return sym(J @ Sig_prior @ J.T + Lb @ Vb @ Lb.T)


# ----------------------------------------------------------- dynamic program


@njit
def augment(A, B1, B2, C1, C2, A1, A2, Bb1, Bb2, Lb1, Lb2):
    n = A.shape[0]
    m1 = B1.shape[1]
    m2 = B2.shape[1]
    p1 = C1.shape[0]
    p2 = C2.shape[0]
    Aa = np.zeros((3 * n, 3 * n))
    Aa[:n, :n] = A
    Aa[n : 2 * n, :n] = A - A1
    Aa[n : 2 * n, n : 2 * n] = A1 - Lb1 @ C1
    Aa[2 * n :, :n] = A - A2
    Aa[2 * n :, 2 * n :] = A2 - Lb2 @ C2
    Ba1 = np.empty((3 * n, m1))
    Ba1[:n] = B1
    Ba1[n : 2 * n] = B1 - Bb1
    Ba1[2 * n :] = B1
    Ba2 = np.empty((3 * n, m2))
    Ba2[:n] = B2
    Ba2[n : 2 * n] = B2
    Ba2[2 * n :] = B2 - Bb2
    Ga = np.zeros((3 * n, n + p1 + p2))
    for k in range(3):
        Ga[k * n : (k + 1) * n, :n] = np.eye(n)
    Ga[n : 2 * n, n : n + p1] = -Lb1
    Ga[2 * n :, n + p1 :] = -Lb2
    return Aa, Ba1, Ba2, Ga


@njit
def noise_aug(W, V1, V2):
    n = W.shape[0]
    p1 = V1.shape[0]
    Wa = np.zeros((n + p1 + V2.shape[0], n + p1 + V2.shape[0]))
    Wa[:n, :n] = W
    Wa[n : n + p1, n : n + p1] = V1
    Wa[n + p1 :, n + p1 :] = V2
    return Wa


@njit
def q_blocks(P, Aa, Ba1, Ba2, Q, R, S):
    n = Q.shape[0]
    PA = P @ Aa
    PB1 = P @ Ba1
    PB2 = P @ Ba2
    Q00 = Aa.T @ PA
    Q00[:n, :n] += Q
    Q00 = sym(Q00)
    Q01 = Aa.T @ PB1
    Q02 = Aa.T @ PB2
    Q11 = sym(R + Ba1.T @ PB1)
    Q12 = Ba1.T @ PB2
    Q22 = sym(S + Ba2.T @ PB2)
    return Q00, Q01, Q02, Q11, Q12, Q22


@njit
def equilibrium_gains(Q01, Q02, Q11, Q12, Q22, cond_cap):
    """Augmented saddle-point gains (Kbar1, Kbar2), status, diagnostic value."""
    m1 = Q11.shape[0]
    m2 = Q22.shape[0]
    N = Q01.shape[0]
    Kb1 = np.zeros((m1, N))
    Kb2 = np.zeros((m2, N))
    e1 = np.linalg.eigvalsh(Q11)
    if not e1[0] > 0.0:
        return Kb1, Kb2, CONVEXITY, e1[0]
    e2 = np.linalg.eigvalsh(Q22)
    if not e2[-1] < 0.0:
        return Kb1, Kb2, CONCAVITY, e2[-1]
    Sc1 = Q11 - Q12 @ np.linalg.solve(Q22, Q12.T)
    Sc2 = Q22 - Q12.T @ np.linalg.solve(Q11, Q12)
    c = max(cond(Sc1), cond(Sc2))
    if not c < cond_cap:
        return Kb1, Kb2, SCHUR, c
    Kb1 = np.linalg.solve(Sc1, Q12 @ np.linalg.solve(Q22, Q02.T) - Q01.T)
    Kb2 = np.linalg.solve(Sc2, Q12.T @ np.linalg.solve(Q11, Q01.T) - Q02.T)

    # second route: joint solve of the stacked first-order conditions
    H = np.empty((m1 + m2, m1 + m2))
    H[:m1, :m1] = Q11
    H[:m1, m1:] = Q12
    H[m1:, :m1] = Q12.T
    H[m1:, m1:] = Q22
    rhs = np.empty((m1 + m2, N))
    rhs[:m1] = -Q01.T
    rhs[m1:] = -Q02.T
    joint = np.linalg.solve(H, rhs)
    scale = max(np.abs(Kb1).max() if Kb1.size else 0.0, np.abs(Kb2).max() if Kb2.size else 0.0, 1e-300)
    gap = max(np.abs(joint[:m1] - Kb1).max(), np.abs(joint[m1:] - Kb2).max()) / max(scale, 1.0)
    if gap > GAIN_ROUTE_TOL:
        return Kb1, Kb2, GAIN_ROUTES, gap
    return Kb1, Kb2, OK, gap


@njit
def closed_loop_embed(K1, K2):
    m1, n = K1.shape
    m2 = K2.shape[0]
    KK1 = np.zeros((m1, 3 * n))
    KK1[:, :n] = K1
    KK1[:, n : 2 * n] = -K1
    KK2 = np.zeros((m2, 3 * n))
    KK2[:, :n] = K2
    KK2[:, 2 * n :] = -K2
    return KK1, KK2


@njit
def cost_update(Q00, Q01, Q02, Q11, Q12, Q22, K1, K2):
    KK1, KK2 = closed_loop_embed(K1, K2)
    X = Q01 @ KK1
    Y = Q02 @ KK2
    Z = KK1.T @ Q12 @ KK2
    P = Q00 + X + X.T + Y + Y.T + KK1.T @ Q11 @ KK1 + KK2.T @ Q22 @ KK2 + Z + Z.T
    return sym(P)


# ------------------------------------------------------------- full passes


@njit
def forward_pass(A, B1, B2, W, C1, C2, V1, V2, K1, K2, Gam, X0, cond_cap):
    """Joint covariance recursion over t = 0..T with equilibrium filter gains.

    Stage arrays have a leading time axis of length T. ``Gam`` has T + 1
    entries. Returns prior and posterior covariance stacks (index 0 holds the
    initial posterior in both), innovation gains (zero at t = 0), status and
    the failing stage.
    """
    T = A.shape[0]
    n = X0.shape[0]
    p1 = V1.shape[1]
    p2 = V2.shape[1]
    prior = np.zeros((T + 1, 2 * n, 2 * n))
    post = np.zeros((T + 1, 2 * n, 2 * n))
    L1s = np.zeros((max(T, 1), n, p1))
    L2s = np.zeros((max(T, 1), n, p2))
    post[0] = block_diag2(X0, X0)
    prior[0] = post[0]
    worst = 0.0
    for t in range(T):
        if t == 0:
            Ab = block_diag2(A[0], A[0])
        else:
            Ab = coupled_abar(A[t], B1[t], B2[t], K1[t], K2[t])
        prior[t + 1] = apriori(post[t], Ab, W[t])
        if t + 1 < T:
            s = t + 1
            L1, L2, status, c = filter_gains(prior[s], Gam[s], C1[s], C2[s], V1[s], V2[s], cond_cap)
            if status != OK:
                return prior, post, L1s, L2s, status, s, c
            worst = max(worst, c)
            L1s[s] = L1
            L2s[s] = L2
            post[s] = aposteriori(prior[s], L1, L2, C1[s], C2[s], V1[s], V2[s])
    if T > 0:
        # no measurement at the final stage
        post[T] = prior[T]
    return prior, post, L1s, L2s, OK, -1, worst


@njit
def backward_pass(A, B1, B2, W, C1, C2, V1, V2, Q, R, S, QT, A1, A2, Bb1, Bb2, Lb1, Lb2, cond_cap):
    T = A.shape[0]
    n = QT.shape[0]
    m1 = R.shape[1]
    m2 = S.shape[1]
    Ps = np.zeros((T + 1, 3 * n, 3 * n))
    rs = np.zeros(T + 1)
    K1s = np.zeros((max(T, 1), m1, n))
    K2s = np.zeros((max(T, 1), m2, n))
    Ps[T, :n, :n] = QT
    for t in range(T - 1, -1, -1):
        Aa, Ba1, Ba2, Ga = augment(A[t], B1[t], B2[t], C1[t], C2[t], A1[t], A2[t], Bb1[t], Bb2[t], Lb1[t], Lb2[t])
        Q00, Q01, Q02, Q11, Q12, Q22 = q_blocks(Ps[t + 1], Aa, Ba1, Ba2, Q[t], R[t], S[t])
        Kb1, Kb2, status, val = equilibrium_gains(Q01, Q02, Q11, Q12, Q22, cond_cap)
        if status != OK:
            return Ps, rs, K1s, K2s, status, t, val
        K1 = Kb1[:, :n].copy()
        K2 = Kb2[:, :n].copy()
        K1s[t] = K1
        K2s[t] = K2
        Ps[t] = cost_update(Q00, Q01, Q02, Q11, Q12, Q22, K1, K2)
        Wa = noise_aug(W[t], V1[t], V2[t])
        rs[t] = rs[t + 1] + np.trace(Ps[t + 1] @ Ga @ Wa @ Ga.T)
    return Ps, rs, K1s, K2s, OK, -1, 0.0


@njit
def stationary_forward(A, B1, B2, W, C1, C2, V1, V2, Sig, K1, K2, Gam, cond_cap):
    """One application of the steady-state covariance map."""
    L1, L2, status, c = filter_gains(Sig, Gam, C1, C2, V1, V2, cond_cap)
    if status != OK:
        return Sig, L1, L2, status, c
    Ab = coupled_abar(A, B1, B2, K1, K2)
    return apriori(aposteriori(Sig, L1, L2, C1, C2, V1, V2), Ab, W), L1, L2, OK, c


@njit
def stationary_backward(A, B1, B2, C1, C2, Q, R, S, P, A1, A2, Lb1, Lb2, cond_cap):
    n = A.shape[0]
    Aa, Ba1, Ba2, Ga = augment(A, B1, B2, C1, C2, A1, A2, B1, B2, Lb1, Lb2)
    Q00, Q01, Q02, Q11, Q12, Q22 = q_blocks(P, Aa, Ba1, Ba2, Q, R, S)
    Kb1, Kb2, status, val = equilibrium_gains(Q01, Q02, Q11, Q12, Q22, cond_cap)
    if status != OK:
        return P, Kb1[:, :n].copy(), Kb2[:, :n].copy(), status, val
    K1 = Kb1[:, :n].copy()
    K2 = Kb2[:, :n].copy()
    return cost_update(Q00, Q01, Q02, Q11, Q12, Q22, K1, K2), K1, K2, OK, val


@njit
def value_iteration_step(A, B1, B2, W, C1, C2, V1, V2, Q, R, S, Sig, P, K1, K2, Gam, cond_cap):
    """Forward operator, filter refresh, backward operator, gain refresh.

    Returns the new (Sig, P, K1, K2), the filter gains used by the backward
    operator, a status code and which phase failed (0 forward, 1 filter
    refresh, 2 backward).
    """
    Sig_new, L1, L2, status, c = stationary_forward(A, B1, B2, W, C1, C2, V1, V2, Sig, K1, K2, Gam, cond_cap)
    if status != OK:
        return Sig, P, K1, K2, L1, L2, status, 0, c
    L1, L2, status, c = filter_gains(Sig_new, Gam, C1, C2, V1, V2, cond_cap)
    if status != OK:
        return Sig_new, P, K1, K2, L1, L2, status, 1, c
    A1 = A + B2 @ K2
    A2 = A + B1 @ K1
    P_new, K1n, K2n, status, val = stationary_backward(A, B1, B2, C1, C2, Q, R, S, P, A1, A2, A1 @ L1, A2 @ L2, cond_cap)
    if status != OK:
        return Sig_new, P, K1, K2, L1, L2, status, 2, val
    return Sig_new, P_new, K1n, K2n, L1, L2, OK, -1, c


# ---------------------------------------------------------------- rollouts


@njit(nogil=True)
def rollout_batch(
    A, B1, B2, C1, C2, K1, K2, A1, A2, Bb1, Bb2, Lb1, Lb2, Q, R, S, QT,
    x0, z10, z20, xi, Fw, Fv1, Fv2,
):
    """Simulate a batch of closed-loop rollouts from pre-drawn standard normals.

    Stage arrays carry a leading axis of length T or 1 (broadcast). ``xi`` has
    shape (N, T, n + p1 + p2). Returns summed trajectories of x, z1, z2 over
    the batch (T + 1, n), summed stage costs per time (T + 1, terminal cost
    last), per-rollout stage-cost totals, terminal costs, time-averaged
    estimation errors (N, 2n) and final augmented states (N, 3n).
    """
    N, T, d = xi.shape
    n = x0.shape[1]
    m1 = K1.shape[1]
    m2 = K2.shape[1]
    p1 = C1.shape[1]
    p2 = C2.shape[1]
    sum_x = np.zeros((T + 1, n))
    sum_z1 = np.zeros((T + 1, n))
    sum_z2 = np.zeros((T + 1, n))
    sum_cost = np.zeros(T + 1)
    stage_cost = np.zeros(N)
    terminal = np.zeros(N)
    err_mean = np.zeros((N, 2 * n))
    final = np.zeros((N, 3 * n))
    x = np.empty(n)
    z1 = np.empty(n)
    z2 = np.empty(n)
    xn = np.empty(n)
    z1n = np.empty(n)
    z2n = np.empty(n)
    u1 = np.empty(m1)
    u2 = np.empty(m2)
    w = np.empty(n)
    v1 = np.empty(p1)
    v2 = np.empty(p2)
    r1 = np.empty(p1)
    r2 = np.empty(p2)
    for k in range(N):
        for i in range(n):
            x[i] = x0[k, i]
            z1[i] = z10[k, i]
            z2[i] = z20[k, i]
        total = 0.0
        for t in range(T):
            ti = t if A.shape[0] > 1 else 0
            for i in range(n):
                sum_x[t, i] += x[i]
                sum_z1[t, i] += z1[i]
                sum_z2[t, i] += z2[i]
                err_mean[k, i] += x[i] - z1[i]
                err_mean[k, n + i] += x[i] - z2[i]
            # noise
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += Fw[ti, i, j] * xi[k, t, j]
                w[i] = acc
            for i in range(p1):
                acc = 0.0
                for j in range(p1):
                    acc += Fv1[ti, i, j] * xi[k, t, n + j]
                v1[i] = acc
            for i in range(p2):
                acc = 0.0
                for j in range(p2):
                    acc += Fv2[ti, i, j] * xi[k, t, n + p1 + j]
                v2[i] = acc
            # inputs
            for i in range(m1):
                acc = 0.0
                for j in range(n):
                    acc += K1[ti, i, j] * z1[j]
                u1[i] = acc
            for i in range(m2):
                acc = 0.0
                for j in range(n):
                    acc += K2[ti, i, j] * z2[j]
                u2[i] = acc
            # stage cost
            c = 0.0
            for i in range(n):
                for j in range(n):
                    c += x[i] * Q[ti, i, j] * x[j]
            for i in range(m1):
                for j in range(m1):
                    c += u1[i] * R[ti, i, j] * u1[j]
            for i in range(m2):
                for j in range(m2):
                    c += u2[i] * S[ti, i, j] * u2[j]
            total += c
            sum_cost[t] += c
            # measurements / innovations
            for i in range(p1):
                acc = v1[i]
                for j in range(n):
                    acc += C1[ti, i, j] * (x[j] - z1[j])
                r1[i] = acc
            for i in range(p2):
                acc = v2[i]
                for j in range(n):
                    acc += C2[ti, i, j] * (x[j] - z2[j])
                r2[i] = acc
            # propagate
            for i in range(n):
                acc = w[i]
                for j in range(n):
                    acc += A[ti, i, j] * x[j]
                for j in range(m1):
                    acc += B1[ti, i, j] * u1[j]
                for j in range(m2):
                    acc += B2[ti, i, j] * u2[j]
                xn[i] = acc
                a1 = 0.0
                for j in range(n):
                    a1 += A1[ti, i, j] * z1[j]
                for j in range(m1):
                    a1 += Bb1[ti, i, j] * u1[j]
                for j in range(p1):
                    a1 += Lb1[ti, i, j] * r1[j]
                z1n[i] = a1
                a2 = 0.0
                for j in range(n):
                    a2 += A2[ti, i, j] * z2[j]
                for j in range(m2):
                    a2 += Bb2[ti, i, j] * u2[j]
                for j in range(p2):
                    a2 += Lb2[ti, i, j] * r2[j]
                z2n[i] = a2
            for i in range(n):
                x[i] = xn[i]
                z1[i] = z1n[i]
                z2[i] = z2n[i]
        c = 0.0
        for i in range(n):
            sum_x[T, i] += x[i]
            sum_z1[T, i] += z1[i]
            sum_z2[T, i] += z2[i]
            for j in range(n):
                c += x[i] * QT[i, j] * x[j]
            final[k, i] = x[i]
            final[k, n + i] = x[i] - z1[i]
            final[k, 2 * n + i] = x[i] - z2[i]
        terminal[k] = c
        sum_cost[T] += c
        stage_cost[k] = total
        if T > 0:
            for i in range(2 * n):
                err_mean[k, i] /= T
    return sum_x, sum_z1, sum_z2, sum_cost, stage_cost, terminal, err_mean, final


def rollout_batch_numpy(
    A, B1, B2, C1, C2, K1, K2, A1, A2, Bb1, Bb2, Lb1, Lb2, Q, R, S, QT,
    x0, z10, z20, xi, Fw, Fv1, Fv2,
):
    """Vectorised-over-rollouts twin of :func:`rollout_batch`."""
    N, T, d = xi.shape
    n = x0.shape[1]
    p1 = C1.shape[1]
    x = x0.copy()
    z1 = z10.copy()
    z2 = z20.copy()
    sum_x = np.zeros((T + 1, n))
    sum_z1 = np.zeros((T + 1, n))
    sum_z2 = np.zeros((T + 1, n))
    sum_cost = np.zeros(T + 1)
    stage_cost = np.zeros(N)
    err_sum = np.zeros((N, 2 * n))
    for t in range(T):
        ti = t if A.shape[0] > 1 else 0
        sum_x[t] = x.sum(axis=0)
        sum_z1[t] = z1.sum(axis=0)
        sum_z2[t] = z2.sum(axis=0)
        err_sum[:, :n] += x - z1
        err_sum[:, n:] += x - z2
        w = xi[:, t, :n] @ Fw[ti].T
        v1 = xi[:, t, n : n + p1] @ Fv1[ti].T
        v2 = xi[:, t, n + p1 :] @ Fv2[ti].T
        u1 = z1 @ K1[ti].T
        u2 = z2 @ K2[ti].T
        c = (
            np.einsum("ki,ij,kj->k", x, Q[ti], x)
            + np.einsum("ki,ij,kj->k", u1, R[ti], u1)
            + np.einsum("ki,ij,kj->k", u2, S[ti], u2)
        )
        stage_cost += c
        sum_cost[t] = c.sum()
        r1 = (x - z1) @ C1[ti].T + v1
        r2 = (x - z2) @ C2[ti].T + v2
        xn = x @ A[ti].T + u1 @ B1[ti].T + u2 @ B2[ti].T + w
        z1 = z1 @ A1[ti].T + u1 @ Bb1[ti].T + r1 @ Lb1[ti].T
        z2 = z2 @ A2[ti].T + u2 @ Bb2[ti].T + r2 @ Lb2[ti].T
        x = xn
    sum_x[T] = x.sum(axis=0)
    sum_z1[T] = z1.sum(axis=0)
    sum_z2[T] = z2.sum(axis=0)
    terminal = np.einsum("ki,ij,kj->k", x, QT, x)
    sum_cost[T] = terminal.sum()
    err_mean = err_sum / T if T > 0 else err_sum
    final = np.concatenate((x, x - z1, x - z2), axis=1)
    return sum_x, sum_z1, sum_z2, sum_cost, stage_cost, terminal, err_mean, final


@njit
def value_iterate_loop(A, B1, B2, W, C1, C2, V1, V2, Q, R, S, Sig, P, K1, K2, Gam, tol, max_iter, refresh_gamma, cond_cap):
    """Run value-iteration steps until ||Sig - Sig_prev|| + ||P - P_prev|| <= tol.

    Returns the final iterate (or the lowest-residual one if the tolerance is
    never met), the residual history, the number of rejected Gamma refreshes
    and failure information (status, phase, iteration, value).
    """
    n = A.shape[0]
    history = np.empty(max_iter)
    best_res = np.inf
    bSig = Sig.copy()
    bP = P.copy()
    bK1 = K1.copy()
    bK2 = K2.copy()
    bL1 = np.zeros((n, C1.shape[0]))
    bL2 = np.zeros((n, C2.shape[0]))
    bGam = Gam.copy()
    rejected = 0
    it = 0
    for it in range(1, max_iter + 1):
        Sn, Pn, K1n, K2n, L1, L2, status, phase, val = value_iteration_step(
            A, B1, B2, W, C1, C2, V1, V2, Q, R, S, Sig, P, K1, K2, Gam, cond_cap
        )
        if status != OK:
            return bSig, bP, bK1, bK2, bL1, bL2, bGam, it, best_res, history[: it - 1], rejected, status, phase, val
        res = np.sqrt(np.sum((Sn - Sig) ** 2)) + np.sqrt(np.sum((Pn - P) ** 2))
        history[it - 1] = res
        gam_used = Gam
        Sig = Sn
        P = Pn
        K1 = K1n
        K2 = K2n
        if refresh_gamma:
            G = P[n:, n:].copy()
            if np.linalg.eigvalsh(G[:n, :n])[0] > 0.0 and np.linalg.eigvalsh(G[n:, n:])[-1] < 0.0:
                Gam = G
            else:
                rejected += 1
        if res < best_res or res <= tol:
            best_res = res
            bSig = Sig
            bP = P
            bK1 = K1
            bK2 = K2
            bL1 = L1
            bL2 = L2
            bGam = gam_used
        if res <= tol:
            break
    return bSig, bP, bK1, bK2, bL1, bL2, bGam, it, best_res, history[:it], rejected, OK, -1, 0.0


@njit
def lyapunov_direct(Acl, Wcl):
    """Solve X = Acl X Acl' + Wcl by a Kronecker-vectorised linear solve."""
    N = Acl.shape[0]
    M = np.eye(N * N) - np.kron(Acl, Acl)
    x = np.linalg.solve(M, Wcl.copy().ravel())
    X = x.reshape((N, N))
    return sym(X)


@njit
def lyapunov_iterative(Acl, Wcl, tol, max_iter):
    X = Wcl.copy()
    for _ in range(max_iter):
        Xn = Acl @ X @ Acl.T + Wcl
        d = np.abs(Xn - X).max()
        X = Xn
        if d <= tol * max(1.0, np.abs(X).max()):
            break
    return sym(X)
