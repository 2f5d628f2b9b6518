import numpy as np
import pytest

from rtlab import tensor as T
from rtlab.attacks import AttackDiagnostics, AttackSpec, pgd_attack, project, robust_accuracy
from rtlab.errors import ConfigError, ContractError
from rtlab.nets import ModelConfig, build, checkpoint_save


class LinearMarginModel:
    """Binary score s = x @ w + b; loss = mean(-s * (2y - 1)).

    The exact maximizer of this loss over an L2 ball of radius eps is
    x - eps * (2y - 1) * w / ||w||, which makes it the closed-form oracle
    for PGD. Inputs may be flat (N,d) or image-shaped (N,C,H,W).
    """

    def __init__(self, w, bias=0.0):
        self.w = np.asarray(w, dtype=np.float64).reshape(-1)
        self.bias = float(bias)

    def _flat(self, x):
        return np.asarray(x, dtype=np.float64).reshape(-1, self.w.size)

    def loss(self, x, y):
        n = x.data.shape[0]
        sign = T.Tensor(-(2.0 * np.asarray(y) - 1.0))
        scores = (x.reshape((n, self.w.size)) @ T.Tensor(self.w[:, None])).reshape((n,))
        return (scores * sign).mean()  # bias drops out of the input gradient

    def predict(self, x):
        return (self._flat(x) @ self.w + self.bias > 0).astype(np.int64)


class SimpleDataset:
    def __init__(self, images, labels):
        self.images = images
        self.labels = labels


def small_net(seed=0, classes=3):
    cfg = ModelConfig(input_channels=1, input_size=4, base_channels=4, width_multiplier=1,
                      num_blocks=1, num_classes=classes, use_batchnorm=True, seed=seed)
    return build(cfg)


def test_spec_validation():
    with pytest.raises(ConfigError):
        AttackSpec(norm="l1", epsilon=0.1, steps=1, step_size=0.1)
    with pytest.raises(ConfigError):
        AttackSpec(norm="l2", epsilon=-0.1, steps=1, step_size=0.1)
    with pytest.raises(ConfigError):
        AttackSpec(norm="l2", epsilon=0.1, steps=1, step_size=0.0)
    # epsilon 0 is the identity attack and tolerates a zero step size
    AttackSpec(norm="l2", epsilon=0.0, steps=3, step_size=0.0)


def test_training_default_schedule():
    spec = AttackSpec.training_default("l2", 0.3)
    assert spec.steps == 3
    assert spec.step_size == pytest.approx(0.2, abs=1e-15)
    assert not spec.random_start


def test_spec_json_round_trip():
    spec = AttackSpec.training_default("linf", 0.5 / 255)
    again = AttackSpec.from_json(spec.to_json())
    assert again == spec
    assert repr(spec.epsilon) in spec.to_json()


def test_project_l2_rescales_to_boundary():
    spec = AttackSpec(norm="l2", epsilon=1.0, steps=1, step_size=1.0)
    d = np.array([2.0, 0.0, 0.0])
    out = project(d, spec)
    assert np.linalg.norm(out) == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(out, [1.0, 0.0, 0.0])


def test_project_interior_point_unchanged_bitwise():
    spec = AttackSpec(norm="l2", epsilon=1.0, steps=1, step_size=1.0)
    d = np.array([0.3, -0.4, 0.1])
    assert project(d, spec).tobytes() == d.tobytes()
    spec_inf = AttackSpec(norm="linf", epsilon=0.5, steps=1, step_size=0.1)
    assert project(d, spec_inf).tobytes() == d.tobytes()


def test_project_zero_vector_noop():
    spec = AttackSpec(norm="l2", epsilon=0.0, steps=0, step_size=1.0)
    d = np.zeros(4)
    assert project(d, spec).tobytes() == d.tobytes()


@pytest.mark.parametrize("norm", ["l2", "linf"])
def test_project_idempotent_bitwise(norm):
    rng = np.random.default_rng(42)
    spec = AttackSpec(norm=norm, epsilon=0.7, steps=1, step_size=0.1)
    for _ in range(20):
        d = rng.normal(scale=2.0, size=17)
        once = project(d, spec)
        twice = project(once, spec)
        assert twice.tobytes() == once.tobytes()


@pytest.mark.parametrize("norm", ["l2", "linf"])
def test_project_contraction(norm):
    rng = np.random.default_rng(43)
    eps = 0.5
    spec = AttackSpec(norm=norm, epsilon=eps, steps=1, step_size=0.1)

    def length(v):
        return np.abs(v).max() if norm == "linf" else np.linalg.norm(v)

    for _ in range(50):
        d = rng.normal(scale=1.5, size=9)
        p = project(d, spec)
        assert length(p) <= min(length(d), eps * (1 + 1e-12)) + 1e-15


@pytest.mark.parametrize("norm", ["l2", "linf"])
def test_project_is_nearest_point_against_random_candidates(norm):
    rng = np.random.default_rng(44)
    eps = 0.8
    spec = AttackSpec(norm=norm, epsilon=eps, steps=1, step_size=0.1)
    dim = 6
    d = rng.normal(scale=2.0, size=dim)
    p = project(d, spec)
    base = np.linalg.norm(d - p)
    if norm == "linf":
        cand = rng.uniform(-eps, eps, size=(10_000, dim))
    else:
        raw = rng.normal(size=(10_000, dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        cand = raw * (eps * rng.uniform(0, 1, size=(10_000, 1)) ** (1 / dim))
    dists = np.linalg.norm(d[None, :] - cand, axis=1)
    assert (base <= dists + 1e-12).all()


def test_pgd_epsilon_zero_is_identity():
    net = small_net()
    rng = np.random.default_rng(1)
    x = rng.random((3, 1, 4, 4))
    y = np.array([0, 1, 2])
    spec = AttackSpec(norm="l2", epsilon=0.0, steps=3, step_size=1.0)
    out = pgd_attack(net, x, y, spec)
    assert out.tobytes() == x.tobytes()


def test_pgd_matches_linear_closed_form():
    rng = np.random.default_rng(7)
    for trial in range(10):
        dim = int(rng.integers(2, 65))
        w = rng.normal(size=dim)
        model = LinearMarginModel(w)
        x = rng.normal(size=(5, dim))
        y = rng.integers(0, 2, size=5)
        eps = float(rng.uniform(0.05, 2.0))
        spec = AttackSpec(norm="l2", epsilon=eps, steps=1, step_size=eps * 1.5)
        out = pgd_attack(model, x, y, spec)
        expect = x + eps * (-(2.0 * y - 1.0))[:, None] * w[None, :] / np.linalg.norm(w)
        assert np.abs(out - expect).max() <= 1e-9


def test_pgd_linear_loss_monotone_in_epsilon():
    rng = np.random.default_rng(8)
    w = rng.normal(size=16)
    model = LinearMarginModel(w)
    x = rng.normal(size=(4, 16))
    y = rng.integers(0, 2, size=4)
    grid = [0.0, 0.01, 0.03, 0.05, 0.1, 0.25, 0.5, 1.0, 3.0, 5.0]
    losses = []
    for eps in grid:
        spec = AttackSpec(norm="l2", epsilon=eps, steps=1, step_size=max(eps, 1e-6))
        x_adv = pgd_attack(model, x, y, spec)
        with T.no_grad():
            losses.append(model.loss(T.Tensor(x_adv), y).item())
    assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))


def test_pgd_linf_uses_sign_steps():
    rng = np.random.default_rng(9)
    w = rng.normal(size=8)
    model = LinearMarginModel(w)
    x = rng.normal(size=(3, 8))
    y = rng.integers(0, 2, size=3)
    eps = 0.25
    spec = AttackSpec(norm="linf", epsilon=eps, steps=1, step_size=eps)
    out = pgd_attack(model, x, y, spec)
    expect = x + eps * (-(2.0 * y - 1.0))[:, None] * np.sign(w)[None, :]
    assert np.abs(out - expect).max() <= 1e-12


def test_pgd_increases_loss_on_random_nets():
    rng = np.random.default_rng(10)
    wins = 0
    trials = 200
    for trial in range(trials):
        net = small_net(seed=trial).eval_mode()
        x = rng.random((2, 1, 4, 4))
        y = rng.integers(0, 3, size=2)
        spec = AttackSpec.training_default("l2", 0.25)
        x_adv = pgd_attack(net, x, y, spec)
        with T.no_grad():
            before = net.loss(T.Tensor(x), y).item()
            after = net.loss(T.Tensor(x_adv), y).item()
        wins += after >= before - 1e-12
    assert wins / trials >= 0.95


def test_pgd_respects_budget():
    net = small_net(seed=3).eval_mode()
    rng = np.random.default_rng(11)
    x = rng.random((4, 1, 4, 4))
    y = rng.integers(0, 3, size=4)
    for norm in ("l2", "linf"):
        spec = AttackSpec.evaluation_default(norm, 0.3)
        out = pgd_attack(net, x, y, spec)
        d = (out - x).reshape(4, -1)
        if norm == "l2":
            sizes = np.linalg.norm(d, axis=1)
        else:
            sizes = np.abs(d).max(axis=1)
        assert (sizes <= 0.3 * (1 + 1e-12)).all()


def test_pgd_never_touches_parameters_or_stats():
    net = small_net(seed=4).train_mode()
    before = checkpoint_save(net)
    rng = np.random.default_rng(12)
    x = rng.random((4, 1, 4, 4))
    y = rng.integers(0, 3, size=4)
    pgd_attack(net, x, y, AttackSpec.training_default("l2", 0.5), bn_batch_stats=True)
    pgd_attack(net, x, y, AttackSpec.evaluation_default("linf", 0.01))
    assert checkpoint_save(net) == before


def test_pgd_zero_gradient_skips_are_recorded():
    net = small_net(seed=5)
    for _, p in net.parameters():
        p.data[...] = 0.0
    diag = AttackDiagnostics()
    x = np.random.default_rng(13).random((2, 1, 4, 4))
    y = np.array([0, 1])
    spec = AttackSpec(norm="l2", epsilon=0.5, steps=2, step_size=0.3)
    out = pgd_attack(net, x, y, spec, diagnostics=diag)
    assert out.tobytes() == x.tobytes()
    assert len(diag.zero_grad_skips) == 4  # 2 samples x 2 steps


def test_pgd_clip_input_keeps_unit_range():
    net = small_net(seed=6).eval_mode()
    rng = np.random.default_rng(14)
    x = rng.random((3, 1, 4, 4))
    y = rng.integers(0, 3, size=3)
    spec = AttackSpec(norm="linf", epsilon=0.5, steps=3, step_size=0.4, clip_input=True)
    out = pgd_attack(net, x, y, spec)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.abs(out - x).max() <= 0.5 * (1 + 1e-12)


def test_robust_accuracy_epsilon_zero_equals_clean_top1():
    net = small_net(seed=7).eval_mode()
    rng = np.random.default_rng(15)
    images = rng.random((20, 1, 4, 4))
    labels = rng.integers(0, 3, size=20)
    ds = SimpleDataset(images, labels)
    spec = AttackSpec(norm="l2", epsilon=0.0, steps=3, step_size=1.0)
    clean = float((net.predict(images) == labels).mean())
    assert robust_accuracy(net, ds, spec) == clean


def test_robust_accuracy_on_separable_linear_case():
    rng = np.random.default_rng(16)
    dim = 10
    u = rng.normal(size=dim)
    u /= np.linalg.norm(u)
    margin = 1.0
    n = 30
    images = np.concatenate([
        -(margin / 2) * np.tile(u, (n, 1)) + 0.0,
        +(margin / 2) * np.tile(u, (n, 1)),
    ])
    labels = np.array([0] * n + [1] * n)
    model = LinearMarginModel(u)
    spec = AttackSpec.evaluation_default("l2", 0.45)  # below margin/2
    assert robust_accuracy(model, SimpleDataset(images, labels), spec) == 1.0
    # at eps beyond the margin the exact adversary flips everything
    wide = AttackSpec(norm="l2", epsilon=0.55, steps=1, step_size=0.55)
    assert robust_accuracy(model, SimpleDataset(images, labels), wide) == 0.0


def test_robust_accuracy_single_pixel_margin_geometry():
    # the max-margin separator thresholds the informative pixel at delta/2;
    # any budget below delta/2 cannot flip it, and the exact linear adversary
    # flips everything once the budget passes delta/2
    from rtlab.data import SyntheticSpec, make_single_pixel

    delta = 0.1
    pair = make_single_pixel(SyntheticSpec(kind="single_pixel", n_per_class=20,
                                           channels=1, size=4, seed=0, delta=delta))
    w = np.zeros(16)
    w[0] = 1.0
    model = LinearMarginModel(w, bias=-delta / 2.0)
    below = AttackSpec(norm="l2", epsilon=0.04, steps=1, step_size=0.04)
    assert robust_accuracy(model, pair.train, below) == 1.0
    above = AttackSpec(norm="l2", epsilon=0.06, steps=1, step_size=0.06)
    assert robust_accuracy(model, pair.train, above) == 0.0


def test_robust_accuracy_empty_dataset_rejected():
    net = small_net(seed=8)
    ds = SimpleDataset(np.zeros((0, 1, 4, 4)), np.zeros(0, dtype=int))
    with pytest.raises(ContractError):
        robust_accuracy(net, ds, AttackSpec.training_default("l2", 0.1))
