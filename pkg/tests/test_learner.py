import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from almanac.examples import patience_game, two_spec_game
from almanac.game import check_policy, deterministic_policy, random_game
from almanac.learner import (
    Actor, Almanac, AlmanacConfig, NatGradState, Schedules, StateDiscountQLearning, TabularCritic,
    _Learner, diagnostics_csv, evaluate_critics, hasty_td_update, lagrange_update, log_prob,
    natgrad_update, patient_td_update, policy_update, q_learning_state_discount, run_almanac, score,
)
from almanac.product import build_product, make_task

LUCKY = [(0, 1, 1), (1, 0, 1), (0, 1, 1)]
LOOP = [(0, 0, 0)] * 5


def patience_product():
    return build_product(patience_game(), [make_task("F psi", 1.0, (0,))])


def small_product(agents=2):
    g = random_game(4, agents, 2, 2, 0.5, seed=3)
    return build_product(g, [make_task("F G p0", 1.0, tuple(range(agents)))])


def test_schedule_defaults_and_ordering():
    s = Schedules()
    t = 10**8
    for fast, slow in (("alpha", "beta_v"), ("beta_v", "beta_u"), ("beta_u", "eta")):
        ratio = Schedules.rate(getattr(s, slow), t) / Schedules.rate(getattr(s, fast), t)
        assert ratio < 0.2
    rates = [Schedules.rate(0.6, n) for n in range(100)]
    assert rates[0] == 1.0 and all(a >= b > 0 for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        Schedules(alpha=0.8, beta_v=0.7)
    with pytest.raises(ValueError):
        Schedules(alpha=0.4)


def test_config_validation_and_json():
    cfg = AlmanacConfig(seed=4, mode="local")
    assert AlmanacConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        AlmanacConfig.from_json('{"bogus": 1}')
    for bad in ({"gamma_v": 1.0}, {"reset_prob": 0.0}, {"mode": "central"}, {"natgrad_loss": "huber"}, {"x_bound": 0}):
        with pytest.raises(ValueError):
            AlmanacConfig(**bad)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.integers(0, 2), st.integers(0, 1))
def test_score_matches_finite_differences(theta, s, a):
    p = patience_product()
    actor = Actor(p)
    actor.theta[0][:] = theta
    grad = score(actor, s, a)
    h = 1e-6
    fd = np.zeros_like(grad)
    for k in range(len(theta)):
        up, down = actor.theta[0].copy(), actor.theta[0].copy()
        up[k] += h
        down[k] -= h
        fd[k] = (log_prob(actor, s, a, theta=up) - log_prob(actor, s, a, theta=down)) / (2 * h)
    assert np.abs(grad - fd).max() <= 1e-6


def test_local_actor_factorises_joint_policy():
    p = small_product()
    actor = Actor(p, "local", p.n_agents, p.agent_counts)
    rng = np.random.default_rng(0)
    for th in actor.theta:
        th[:] = rng.normal(size=th.shape)
    actor.refresh()
    pol = check_policy(p, actor.joint_policy())
    s = 0
    joint = pol[p.state_ptr[s] : p.state_ptr[s + 1]].reshape(p.agent_counts(s))
    assert np.allclose(joint, np.outer(actor.block_probs(0, s), actor.block_probs(1, s)))
    greedy = actor.greedy_policy()
    assert set(np.unique(greedy)) <= {0.0, 1.0}


def test_patient_update_one_rewarded_step():
    critic = TabularCritic(1, 3)
    buf = {0: None}
    patient_td_update(critic, 0, buf, 1, 1.0, lambda s: 0.5, 0.9)
    assert critic.value(0, 0) == pytest.approx(0.5)
    assert not buf


def test_patient_update_flushes_whole_buffer():
    critic = TabularCritic(1, 4)
    critic.step(0, 3, 2.0)
    buf = {0: None, 1: None, 2: None}
    patient_td_update(critic, 0, buf, 3, 1.0, lambda s: 1.0, 0.5)
    assert [critic.value(0, s) for s in range(3)] == [2.0, 2.0, 2.0]


def test_hasty_update():
    critic = TabularCritic(1, 2)
    critic.step(0, 1, 1.0)
    delta = hasty_td_update(critic, 0, 0, 0.0, 1, 0.1, 0.9)
    assert delta == pytest.approx(0.9)
    assert critic.value(0, 0) == pytest.approx(0.09)


def test_natgrad_moves_along_score_when_underpredicting():
    p = patience_product()
    actor = Actor(p)
    ng = NatGradState.zeros(actor)
    psi = np.array([0.5, -0.5])
    natgrad_update(ng, 0, psi, 0, [1.0], [1.0], [1.0], 1.0, [1.0], 0.1, 0.01)
    assert ng.x[0][0] > 0 > ng.x[0][1]
    assert np.allclose(ng.x[0][:2] / np.linalg.norm(ng.x[0][:2]), psi / np.linalg.norm(psi))


def test_natgrad_absolute_loss_uses_sign():
    p = patience_product()
    actor = Actor(p)
    ng = NatGradState.zeros(actor)
    psi = np.array([1.0, 0.0])
    natgrad_update(ng, 0, psi, 0, [50.0], [-50.0], [1.0], 1.0, [1.0], 0.1, 0.1, loss="absolute")
    assert ng.x[0][0] == pytest.approx(0.0)


def test_projection_and_multiplier_bounds():
    p = patience_product()
    actor = Actor(p)
    ng = NatGradState.zeros(actor, x_bound=2.0, lambda_max=3.0)
    rng = np.random.default_rng(1)
    ng.level[0] = 0.0
    for _ in range(200):
        s = int(rng.integers(3))
        psi = rng.normal(size=2)
        natgrad_update(ng, 0, psi, 2 * s, [1e3], [1e3], [1.0], 1.0, [1.0], 1.0, 1.0)
        lagrange_update(ng, 0, float(rng.normal() * 100), 1.0)
        assert np.linalg.norm(ng.x[0]) <= 2.0 + 1e-9
        assert abs(ng.sqnorm[0] - ng.x[0] @ ng.x[0]) < 1e-6
        assert 0.0 <= ng.lam[0] <= 3.0


def test_lagrange_inactive_before_level_recorded():
    actor = Actor(patience_product())
    ng = NatGradState.zeros(actor)
    lagrange_update(ng, 0, 5.0, 1.0)
    assert ng.lam[0] == 0.0


def test_policy_update_clamps_logits():
    actor = Actor(patience_product())
    ng = NatGradState.zeros(actor)
    actor.theta[0][0] = 10.0
    ng.x[0][0] = 5.0
    ng.x[0][1] = -50.0
    policy_update(actor, ng, 1.0, theta_bound=10.0)
    assert actor.theta[0][0] == 10.0
    assert actor.theta[0][1] == -10.0


def test_scripted_state_discount_q_learning():
    p = patience_product()
    q = q_learning_state_discount(p, 0.9, script=LUCKY)
    assert q[0][1] == pytest.approx(1.45, abs=1e-12)
    q = q_learning_state_discount(p, 0.9, script=LUCKY + LOOP)
    assert q[0][0] == pytest.approx(1.0357142857, abs=1e-9)
    # a few unlucky b-steps after the a-loops drag Q(s0,b) below the bootstrapped Q(s0,a)
    est = StateDiscountQLearning().fit(p, script=LUCKY + LOOP * 3 + [(0, 1, 2)] * 3)
    assert est.predict([0])[0] == 0


def test_run_is_deterministic_under_seed():
    p = small_product()
    a1, d1, _ = run_almanac(p, AlmanacConfig(episodes=60, seed=7))
    a2, d2, _ = run_almanac(p, AlmanacConfig(episodes=60, seed=7))
    assert all(np.array_equal(x, y) for x, y in zip(a1.theta, a2.theta))
    assert diagnostics_csv(d1) == diagnostics_csv(d2)
    a3, _, _ = run_almanac(p, AlmanacConfig(episodes=60, seed=8))
    assert not all(np.array_equal(x, y) for x, y in zip(a1.theta, a3.theta))


@pytest.mark.parametrize("mode", ["global", "local"])
@pytest.mark.parametrize("weighting", ["reweight", "truncate"])
def test_modes_run_and_stay_finite(mode, weighting):
    p = small_product()
    actor, diags, lr = run_almanac(p, AlmanacConfig(episodes=80, mode=mode, gamma_weighting=weighting, seed=1))
    check_policy(p, actor.joint_policy())
    assert len(diags) == 80
    assert {"episode", "outer", "loss_v", "loss_u", "return_0", "lambda_0", "xnorm_0"} <= set(diags[0])
    assert all(np.isfinite(t).all() for t in actor.theta)


def test_linear_critic_with_identity_features_matches_tabular():
    p = patience_product()
    cfg = AlmanacConfig(episodes=40, seed=2)
    _, _, tab = run_almanac(p, cfg)
    _, _, lin = run_almanac(p, cfg, features=np.eye(p.n_states))
    assert np.allclose(tab.critic_v.values(), lin.critic_v.values())
    assert np.allclose(tab.critic_u.values(), lin.critic_u.values())


def test_fixed_policy_critics_on_patience_product():
    p = patience_product()
    always_b = deterministic_policy(p, [1, 0, 0])
    v, u = evaluate_critics(p, always_b, AlmanacConfig(seed=0), episodes=3000)
    assert v[:, 0] == pytest.approx([1.0, 10.0, 0.0], abs=0.1)
    assert u[:, 0] == pytest.approx([1.0, 10.0, 0.0], abs=0.1)


def test_estimator_api():
    est = Almanac(episodes=100, seed=3)
    assert est.get_params()["episodes"] == 100
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict()
    p = patience_product()
    est.fit(p)
    assert est.predict().shape == (p.n_states,)
    check_policy(p, est.predict_proba())
    assert 0.0 <= est.score() <= 0.1 + 1e-9
    with pytest.raises(TypeError):
        est.fit(patience_game())


def test_learner_on_patience_product_prefers_b():
    est = Almanac(episodes=5000, seed=0).fit(patience_product())
    assert est.predict([0])[0] == 1


@pytest.mark.parametrize("options", [{}, {"gamma_weighting": "truncate"}, {"clock": "global"}])
def test_critic_episode_matches_generic_episode(options):
    g = random_game(5, 1, 2, 2, 0.4, seed=3)
    p = build_product(g, [make_task("F G p0", 0.5, (0,)), make_task("G F p1", 0.5, (0,))])
    rng = np.random.default_rng(0)
    policy = np.concatenate([rng.dirichlet(np.ones(p.n_actions(s))) for s in range(p.n_states)])
    cum = [np.cumsum(policy[p.state_ptr[s] : p.state_ptr[s + 1]]).tolist() for s in range(p.n_states)]
    for c in cum:
        c[-1] = 1.0
    cfg = AlmanacConfig(reset_prob=0.2, seed=5, **options)
    generic, fast = _Learner(p, cfg), _Learner(p, cfg)
    for e in range(2000):
        start = None if e % 2 else e % p.n_states
        generic.episode(learn_actor=False, start=start, policy_cum=cum, drain=bool(e % 3))
        fast.critic_episode(start, cum, drain=bool(e % 3))
    assert fast.critic_v.table == generic.critic_v.table
    assert fast.critic_u.table == generic.critic_u.table
    assert fast.visits_v == generic.visits_v and fast.visits_u == generic.visits_u and fast.t == generic.t
