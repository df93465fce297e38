"""Distributed primal-dual iteration: ops, invariants, and regret bounds."""
import numpy as np
import pytest

from orra.comm_graph import build_metropolis_weights, default_topology
from orra.degradation import IntervalCost
from orra.optimizer import (
    LearningSchedule,
    OrraOptimizer,
    constraint_h,
    dual_update,
    gradient_s,
    orra_iteration,
    primal_update,
    schedule_step,
    tracking_update,
)
from orra.oracle import centralized_solve, lemma1_check, lemma2_check


def quad_aging(theta_b, mu0=0.0, g_d=0.0, big_theta=0.0, b=2.0):
    return IntervalCost(
        mu0=mu0, g_d=g_d, g_c=0.0, theta_b=theta_b, big_theta=big_theta, b=b
    )


def fleet_weights():
    return build_metropolis_weights(default_topology())


def test_constraint_h_values():
    u = np.array([[0.4, 0.0], [0.0, 0.3]])
    aie = np.array([0.1, -0.2])
    assert constraint_h(u, aie) == pytest.approx([0.5, -0.5])


def test_gradient_s_shifts_both_coordinates():
    grads = np.array([[0.2, -0.2]])
    s = gradient_s(grads, np.array([1.0]))
    assert np.allclose(s, [[1.2, 1.2]])


def test_primal_update_step_and_projection():
    u = np.array([[0.5, 0.0], [0.0, 0.2]])
    s = np.array([[1.2, 1.2], [-0.5, -2.5]])
    intervals = np.array([[0.0, 1.0], [0.0, 0.3]])
    out = primal_update(u, s, 0.1, intervals, np.array([1, 0]))
    # discharge agent: d = 0.5 - 0.12, charge coordinate forced to zero
    assert out[0] == pytest.approx([0.38, 0.0])
    # charge agent: c = 0.2 - 0.25 clamps to the floor
    assert out[1] == pytest.approx([0.0, 0.0])
    high = primal_update(u, -s, 1.0, intervals, np.array([1, 0]))
    assert high[0, 0] == pytest.approx(1.0)  # ceiling clamp
    assert high[1, 1] == pytest.approx(0.3)


def test_dual_update_value():
    out = dual_update(np.array([1.0]), np.array([1.0]), 0.1, 0.5, 2.0)
    assert out == pytest.approx([0.7])


def test_tracking_update_value():
    out = tracking_update(np.array([0.4]), np.array([0.9]), np.array([0.5]))
    assert out == pytest.approx([0.8])


def test_schedule_rates_and_reset():
    sched = LearningSchedule(kappa0=1.0, eps0=1.0)
    kappa, eps, t_next, reset = schedule_step(4, 0.0, sched)
    assert (kappa, eps) == pytest.approx((0.5, 4.0**-0.75))
    assert t_next == 5 and not reset
    kappa, eps, t_next, reset = schedule_step(4, 0.06, sched)
    assert reset and t_next == 1
    assert (kappa, eps) == pytest.approx((1.0, 1.0))
    kappa, eps, t_next, reset = schedule_step(600, 0.0, sched)
    assert reset and t_next == 1
    # the first two counter values both run at full gain
    assert sched.rates(0) == sched.rates(1) == (1.0, 1.0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LearningSchedule(kappa0=-0.1)
    with pytest.raises(ValueError):
        LearningSchedule(alpha=0.8, beta=0.7)  # alpha > beta
    with pytest.raises(ValueError):
        LearningSchedule(alpha=0.3, beta=0.75)  # decay window violated
    with pytest.raises(ValueError):
        LearningSchedule(eps0=1.5)


def test_zero_aie_is_a_fixed_point():
    w = fleet_weights()
    opt = OrraOptimizer(w, LearningSchedule())
    n = w.shape[0]
    u = np.zeros((n, 2))
    intervals = np.tile([0.0, 1.0], (n, 1))
    modes = np.ones(n, dtype=int)
    for _ in range(50):
        grads = np.zeros((n, 2))  # flat cost at the origin
        u, info = opt.iterate(u, grads, np.zeros(n), 0.0, intervals, modes)
        assert np.allclose(u, 0.0)
        assert np.allclose(info["lam"], 0.0)
        assert info["bound"] == pytest.approx(0.0)


def test_identical_agents_stay_symmetric():
    # complete graph so the mixing cannot distinguish the two agents
    from orra.comm_graph import Topology

    w = build_metropolis_weights(Topology(2, ((0, 1),)))
    opt = OrraOptimizer(w, LearningSchedule())
    models = [quad_aging(0.2), quad_aging(0.2)]
    u = np.zeros((2, 2))
    intervals = np.tile([0.0, 1.0], (2, 1))
    modes = np.ones(2, dtype=int)
    aie = np.array([-0.3, -0.3])
    for _ in range(200):
        grads = np.array([m.gradient(ui[0], ui[1]) for m, ui in zip(models, u)])
        u, _ = opt.iterate(u, grads, aie, 0.0, intervals, modes)
        assert u[0] == pytest.approx(u[1], abs=1e-12)


def run_static_stage(steps=600):
    """Five heterogeneous agents against a constant aggregate error."""
    w = fleet_weights()
    n = w.shape[0]
    opt = OrraOptimizer(w)  # package-default gains
    models = [
        quad_aging(0.1, mu0=0.1, g_d=0.2, big_theta=0.5, b=2.03),
        quad_aging(0.25),
        quad_aging(0.15, mu0=0.3, g_d=0.1, big_theta=1.0, b=1.8),
        quad_aging(0.3),
        quad_aging(0.2, mu0=0.05, g_d=0.3, big_theta=0.8, b=2.2),
    ]
    aie = np.array([-0.10, -0.14, -0.12, -0.11, -0.13])
    intervals = np.tile([0.0, 1.0], (n, 1))
    modes = np.ones(n, dtype=int)
    u = np.zeros((n, 2))
    infos = []
    for _ in range(steps):
        grads = np.array([m.gradient(ui[0], ui[1]) for m, ui in zip(models, u)])
        u, info = opt.iterate(u, grads, aie, 0.0, intervals, modes)
        infos.append(info)
    return u, infos, models, aie, intervals, modes


def test_static_stage_converges_to_oracle():
    u, infos, models, aie, intervals, modes = run_static_stage()
    target = -aie.sum()
    sol = centralized_solve(models, modes, intervals, target)

    # aggregate balance decays below 2% of the initial error within the stage
    viol = [abs(i["h"].sum()) for i in infos]
    assert min(viol) < 0.02 * abs(aie.sum())
    assert viol[-1] < 0.02 * abs(aie.sum())
    # allocation lands near the centralized optimum
    assert np.abs(u[:, 0] - sol.d).max() < 0.02
    # interior agents agree on the cost slope within 5%
    marg = np.array(
        [m.gradient(ui[0], ui[1])[0] for m, ui in zip(models, u)]
    )
    interior = (u[:, 0] > 1e-6) & (u[:, 0] < 1.0 - 1e-6)
    spread = marg[interior].max() - marg[interior].min()
    assert spread <= 0.05 * abs(marg[interior].mean())
    # dual consensus at stage end: agents quote near-identical prices
    lam = infos[-1]["lam"]
    dev = np.abs(lam - lam.mean()).max()
    assert dev <= 0.01 * max(np.abs(lam).mean(), 1e-12)


def test_dual_bound_and_tracking_every_iteration():
    _, infos, *_ = run_static_stage()
    for k, info in enumerate(infos):
        assert np.abs(info["lam"]).max() <= info["bound"] + 1e-12
        if k > 0:
            # tracker mean equals the fleet-average constraint memory
            assert abs(info["y"].mean() - infos[k - 1]["h"].mean()) <= 1e-9


def test_frequency_spike_restarts_stage_and_clips_dual():
    w = fleet_weights()
    n = w.shape[0]
    opt = OrraOptimizer(w)
    models = [quad_aging(0.2)] * n
    aie = np.full(n, -0.12)
    intervals = np.tile([0.0, 1.0], (n, 1))
    modes = np.ones(n, dtype=int)
    u = np.zeros((n, 2))
    for k in range(80):
        grads = np.array([m.gradient(ui[0], ui[1]) for m, ui in zip(models, u)])
        df = 0.08 if k == 50 else 0.0
        u, info = opt.iterate(u, grads, aie, df, intervals, modes)
        if k == 50:
            assert info["reset"]
            assert info["stage"] == 1
            assert info["t"] == 0
            assert info["kappa"] == pytest.approx(opt.schedule.kappa0)
        assert np.abs(info["lam"]).max() <= info["bound"] + 1e-12
    assert opt.stage == 1


def random_instance(rng):
    """Small synthetic tracking problem with a slowly drifting error."""
    from orra.comm_graph import Topology

    n = int(rng.integers(2, 5))
    edges = [(i, i + 1) for i in range(n - 1)]
    extra = [(i, j) for i in range(n) for j in range(i + 2, n)]
    for e in extra:
        if rng.random() < 0.4:
            edges.append(e)
    w = build_metropolis_weights(Topology(n, tuple(edges)))
    modes = np.array([int(m) for m in rng.integers(0, 2, size=n)])
    models = []
    for m in modes:
        g = float(rng.uniform(0.05, 0.4))
        models.append(
            IntervalCost(
                mu0=float(rng.uniform(0.0, 0.3)),
                g_d=g if m == 1 else 0.0,
                g_c=g if m == 0 else 0.0,
                theta_b=float(rng.uniform(0.1, 0.5)),
                big_theta=float(rng.uniform(0.0, 1.5)),
                b=float(rng.uniform(1.5, 2.3)),
            )
        )
    hi = rng.uniform(0.4, 1.0, size=n)
    intervals = np.stack([np.zeros(n), hi], axis=1)
    signs = np.where(modes == 1, 1.0, -1.0)
    agg_lo = float(np.where(signs > 0, 0.0, -hi).sum())
    agg_hi = float(np.where(signs > 0, hi, 0.0).sum())
    mid = 0.5 * (agg_lo + agg_hi)
    span = 0.35 * (agg_hi - agg_lo)
    base = mid + float(rng.uniform(-0.5, 0.5)) * span
    T = int(rng.integers(10, 51))
    targets = base + np.cumsum(rng.uniform(-1, 1, size=T + 1)) * 0.02 * span
    targets = np.clip(targets, mid - span, mid + span)
    return w, modes, models, intervals, targets


def test_regret_bounds_on_random_instances():
    rng = np.random.default_rng(17)
    failures = []
    for trial in range(100):
        w, modes, models, intervals, targets = random_instance(rng)
        n = w.shape[0]
        T = len(targets) - 1
        opt = OrraOptimizer(w)
        gamma = opt.gamma
        u = np.zeros((n, 2))
        rows = {
            k: []
            for k in ("u", "ustar", "s", "lam", "lamx", "y", "yx", "kap",
                      "eps", "fd", "fo")
        }
        nu = None
        for t in range(T + 1):
            aie = np.full(n, -targets[t] / n)
            sol = centralized_solve(
                models, modes, intervals, targets[t], nu_hint=nu
            )
            nu = sol.nu
            u_star = np.stack([sol.d, sol.c], axis=1)
            grads = np.array(
                [m.gradient(ui[0], ui[1]) for m, ui in zip(models, u)]
            )
            fd = sum(m.value(ui[0], ui[1]) for m, ui in zip(models, u))
            fo = sum(
                m.value(us[0], us[1]) for m, us in zip(models, u_star)
            )
            rows["u"].append(u.copy())
            rows["ustar"].append(u_star)
            rows["fd"].append(fd)
            rows["fo"].append(fo)
            u, info = opt.iterate(u, grads, aie, 0.0, intervals, modes)
            for key, name in (
                ("s", "s"), ("lam", "lam"), ("lamx", "lam_mixed"),
                ("y", "y"), ("yx", "y_mixed"),
            ):
                rows[key].append(info[name])
            rows["kap"].append(info["kappa"])
            rows["eps"].append(info["eps"])
        args = dict(
            u=np.array(rows["u"]),
            u_star=np.array(rows["ustar"]),
            s=np.array(rows["s"]),
            lam=np.array(rows["lam"]),
            lam_mixed=np.array(rows["lamx"]),
            y=np.array(rows["y"]),
            y_mixed=np.array(rows["yx"]),
            kappa=np.array(rows["kap"]),
            eps=np.array(rows["eps"]),
        )
        c1 = lemma1_check(
            gamma=gamma, dist_costs=rows["fd"], oracle_costs=rows["fo"],
            **args,
        )
        B_u = float(intervals[:, 1].max())
        c2 = lemma2_check(
            np.array(rows["u"]), np.array(rows["ustar"]),
            np.array(rows["kap"]), B_u,
        )
        if not (c1.holds and c2.holds):
            failures.append((trial, c1.lhs, c1.rhs, c2.lhs, c2.rhs))
    assert not failures, f"bound violations: {failures[:5]}"
