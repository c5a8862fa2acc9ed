import numpy as np
import pytest

from sarfah.autodiff import Parameter, check_gradients
from sarfah.autodiff.gradcheck import rel_error
from sarfah.lfsp import ODEConfig
from sarfah.model import SARFAH, ModelConfig, despeckle, loss_l1, param_count
from sarfah.speckle import DomainError


# -- hand-audited parameter ledger --------------------------------------------
def _conv(i, o, k, bias=True):
    return i * o * k * k + (o if bias else 0)


def _cbr(i, o, deform=False):
    # bias-free conv, BN affine pair, optional 3x3 offset predictor (2 * 9 maps)
    return _conv(i, o, 3, False) + 2 * o + (_conv(i, 18, 3) if deform else 0)


def _lin(i, o):
    return i * o + o


def _ca(c):
    h = max(c // 16, 1)
    return _lin(c, h) + _lin(h, c)


def _vss(c, S=8):
    ss2d = 4 * (S * c + S * c + c * c + c + c * S + c)  # B, C, dt proj, dt bias, log A, skip
    return (_conv(c, c, 1) + 64 * c + 2 * c + _conv(c, c, 1) + 10 * c + _conv(c, c, 1) + ss2d + 2 * c
            + _conv(c, c, 1) + _conv(c, 2 * c, 1) + _conv(2 * c, c, 1))


def _dass(c, K=4):
    h = max(2 * c // 16, 1)
    dyn = _lin(2 * c, h) + _lin(h, K) + K * c * 2 * c + K * c
    return _ca(c) + _conv(2, 1, 7) + _vss(c) + dyn + 2 * c


def _ledger(c):
    h = c // 2
    lfsp = _cbr(c + 1, c) + 6 * _cbr(c, c) + 2 * _dass(c)
    hfde = (_cbr(c, h) + _ca(h) + _cbr(h, c) + _cbr(c, 2 * c) + _cbr(2 * c, 2 * c) + _cbr(2 * c, 2 * c, True)
            + _dass(2 * c) + _cbr(2 * c, c, True) + _cbr(c, h, True) + _cbr(h, c) + _cbr(c, c))
    cfre = _conv(4 * c, c, 1) + _cbr(c, c) + _conv(c, c, 3, False) + 2 * c + _conv(c, 4, 1)
    return 4 * _conv(1, c, 3) + lfsp + 3 * hfde + cfre


def test_param_count_matches_hand_audit():
    assert _ledger(4) == 29724
    assert param_count(ModelConfig(channels_C=4)) == 29724
    assert param_count(ModelConfig(channels_C=16)) == _ledger(16)


# -- forward contract ----------------------------------------------------------
def test_shape_contract(rng):
    m = SARFAH(ModelConfig(channels_C=4)).eval()
    out = m(rng.uniform(0, 255, (1, 1, 128, 128)))
    assert out.shape == (1, 1, 128, 128)
    assert despeckle(m, rng.uniform(0, 255, (16, 24))).shape == (16, 24)


@pytest.mark.parametrize("shape", [(1, 1, 10, 8), (1, 1, 8, 6), (1, 2, 8, 8), (8, 8)])
def test_bad_input_shape(shape, rng):
    with pytest.raises(DomainError):
        SARFAH(ModelConfig(channels_C=4))(rng.uniform(size=shape))


def test_identity_doubles_reconstruct_input(rng):
    m = SARFAH(ModelConfig(channels_C=4))
    ident = lambda x: x  # noqa: E731
    for name in ("lift_ll", "lift_lh", "lift_hl", "lift_hh", "lfsp", "hfde_lh", "hfde_hl", "hfde_hh", "cfre"):
        setattr(m, name, ident)
    x = rng.uniform(0, 255, (2, 1, 12, 16))
    np.testing.assert_allclose(m(x).data, x, rtol=0, atol=1e-12)


def test_end_to_end_gradient_sample(rng):
    m = SARFAH(ModelConfig(channels_C=4, ode=ODEConfig(N=2)))
    for p in m.parameters():
        p.data += rng.normal(scale=0.05, size=p.shape)
    m.eval()
    clean = rng.uniform(20, 235, (1, 1, 8, 8))
    noisy = clean * rng.gamma(1.0, 1.0, clean.shape)
    named = dict(m.named_parameters())
    total = sum(p.size for p in named.values())
    # 1% of all scalars, spread across tensors in proportion to their size
    picks = rng.choice(total, size=total // 100, replace=False)
    offsets = np.cumsum([0] + [p.size for p in named.values()])
    analytic, numeric = [], []
    for k, p in enumerate(named.values()):
        local = picks[(picks >= offsets[k]) & (picks < offsets[k + 1])] - offsets[k]
        if len(local):
            g, n = _sampled_gradients(lambda: loss_l1(m(noisy), clean), p, local)
            analytic.append(g)
            numeric.append(n)
    analytic, numeric = np.concatenate(analytic), np.concatenate(numeric)
    assert len(analytic) == total // 100
    assert rel_error(analytic, numeric) < 1e-4


def _sampled_gradients(loss_fn, p, entries, steps=(1e-5,)):
    """Backprop and central-difference gradients at the sampled entries.

    With several ``steps`` the numeric estimate is their median.
    """
    p.grad = None
    loss_fn().backward()
    g = p.grad.reshape(-1).copy()
    flat = p.data.reshape(-1)
    num = np.empty(len(entries))
    for j, i in enumerate(entries):
        orig = flat[i]
        est = []
        for h in steps:
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            est.append((up - down) / (2 * h))
        flat[i] = orig
        num[j] = np.median(est)
    return g[entries], num


# -- objective -------------------------------------------------------------------
def test_loss_l1(rng):
    a = rng.normal(size=(2, 1, 4, 4))
    assert loss_l1(a, a).item() == 0.0
    assert loss_l1(a + 1, a).item() == pytest.approx(1.0, abs=1e-12)
    b = rng.normal(size=a.shape)
    ref = 0.0
    for v, w in zip(a.ravel(), b.ravel()):
        ref += abs(v - w)
    assert loss_l1(a, b).item() == pytest.approx(ref / a.size, abs=1e-12)
    with pytest.raises(DomainError):
        loss_l1(a, b[:1])


def test_loss_gradient(rng):
    p = Parameter(rng.normal(size=(1, 1, 4, 4)))
    c = rng.normal(size=p.shape)
    for r in check_gradients(lambda: loss_l1(p, c), {"p": p}):
        assert r.max_rel_error < 1e-6


# -- configuration invariants ------------------------------------------------------
def test_shared_hfde_strictly_smaller():
    assert param_count(ModelConfig(shared_hfde=True)) < param_count(ModelConfig())


def test_count_invariant_to_steps():
    assert len({param_count(ModelConfig(channels_C=8, ode=ODEConfig(N=n))) for n in range(1, 7)}) == 1


def test_dass_flags_monotone():
    full = param_count(ModelConfig())
    no_l = param_count(ModelConfig(dass_in_lfsp=False))
    no_h = param_count(ModelConfig(dass_in_hfde=False))
    none = param_count(ModelConfig(dass_in_lfsp=False, dass_in_hfde=False))
    assert none < no_l < full and none < no_h < full
    assert full - none == (full - no_l) + (full - no_h)


def test_ablation_counts_distinct():
    cfgs = [ModelConfig(), ModelConfig(shared_hfde=True), ModelConfig(dass_in_lfsp=False),
            ModelConfig(dass_in_hfde=False), ModelConfig(dass_in_lfsp=False, dass_in_hfde=False),
            ModelConfig(use_dynamic=False)] + [ModelConfig(deforconv_placement=p) for p in ("none", "encoder", "both")]
    counts = [param_count(c) for c in cfgs]
    assert len(set(counts)) == len(counts)
    # removing the ODE keeps the field, so its parameters are unchanged
    assert param_count(ModelConfig(use_node=False)) == counts[0]


def test_config_validation():
    for kw in ({"channels_C": 5}, {"channels_C": 0}, {"deforconv_placement": "middle"}):
        with pytest.raises(ValueError):
            ModelConfig(**kw)


def test_outputs_finite(rng):
    m = SARFAH(ModelConfig(channels_C=4)).eval()
    for _ in range(100):
        x = rng.uniform(0, 255, (1, 1, 8, 8)) * rng.uniform(0, 4)
        assert np.all(np.isfinite(m(x).data))


def test_eval_forward_deterministic(rng):
    m = SARFAH(ModelConfig(channels_C=4)).eval()
    x = rng.uniform(0, 255, (2, 1, 16, 16))
    assert np.array_equal(m(x).data, m(x).data)
    assert np.array_equal(m(x).data, SARFAH(ModelConfig(channels_C=4)).eval()(x).data)


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = ModelConfig(channels_C=4, shared_hfde=True, deforconv_placement="both", ode=ODEConfig(T=0.5, N=3), seed=7)
    m = SARFAH(cfg)
    for p in m.parameters():
        p.data += rng.normal(scale=0.01, size=p.shape)
    m.eval()
    path = m.save(tmp_path / "m.sfah", {"note": "x"})
    back = SARFAH.load(path)
    assert back.cfg == cfg
    x = rng.uniform(0, 255, (1, 1, 8, 8))
    np.testing.assert_array_equal(back(x).data, m(x).data)


def test_header_round_trip():
    cfg = ModelConfig(channels_C=6, use_dynamic=False, use_node=False, ode=ODEConfig(T=2.0, N=5, randomized=False))
    assert ModelConfig.from_header(cfg.to_header()) == cfg


def test_despeckle_floor(rng):
    m = SARFAH(ModelConfig(channels_C=4))
    m.cfre.project.bias.data[:] = -1.0  # push the output far below zero
    img = rng.uniform(0, 255, (8, 8))
    raw = despeckle(m, img, floor=None)
    assert raw.min() < 0
    np.testing.assert_array_equal(despeckle(m, img), np.maximum(raw, 1.0))
    assert m.training  # mode restored
