"""Cross-checking invariant suite behind the `verify` command.

Every check recomputes a quantity through an independent route (closed form,
brute force, or Monte Carlo) and compares it against the library's answer.
Checks return the number of sub-cases they passed and raise on the first
failure, so a run reports per-suite pass counts and a nonzero exit means a
real numeric defect.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass

import numpy as np

import courtside.numerics as N
from .actiontext import AggregatorConfig, Vocabulary, init_aggregator
from .animator import (
    AnimationModel,
    TemporalModelConfig,
    build_schedule,
    estimate_noise,
    forward_sample,
    init_temporal_model,
)
from .animator.schedule import FULL_K
from .evalkit import frechet_from_moments
from .geometry import (
    BallBlurSpec,
    JointTransforms,
    KinematicTree,
    blur_probability,
    drag_displacement,
    estimate_drag_C,
    forward_kinematics,
    lbs_deform,
    rotvec_to_matrix,
    trilinear_sample,
)
from .numerics import Tensor, make_rng, max_grad_error
from .renderer import composite, write_image
from .renderer.render import _trilinear_gather
from .stateseq import (
    PropertyLayout,
    PropertySpec,
    StateSequence,
    compose,
    expand_state_mask,
    random_masks,
    sample_masks,
    split,
)


class CheckFailure(AssertionError):
    pass


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise CheckFailure(message)


# ------------------------------------------------------------- gradient checks

_NON_OPS = {
    "DEFAULT_DTYPE", "AdamState", "Tape", "Tensor", "active_tape", "adam_step",
    "backward", "fd_and_analytic", "load_checkpoint", "lr_at", "make_rng",
    "max_grad_error", "save_checkpoint",
}

def _spread_last_axis(a):
    ramp = Tensor(np.arange(a.shape[-1], dtype=np.float64) * 3.0)
    return N.add(N.tanh(a), ramp)


_OP_CASES = {
    "add": (lambda a, b: N.add(a, b), 2),
    "sub": (lambda a, b: N.sub(a, b), 2),
    "mul": (lambda a, b: N.mul(a, b), 2),
    "div": (lambda a, b: N.div(a, N.add(N.mul(b, b), 0.5)), 2),
    "neg": (lambda a: N.neg(a), 1),
    "exp": (lambda a: N.exp(a), 1),
    "log": (lambda a: N.log(N.add(N.mul(a, a), 0.5)), 1),
    "sqrt": (lambda a: N.sqrt(N.add(N.mul(a, a), 0.5)), 1),
    "power": (lambda a: N.power(N.add(N.mul(a, a), 0.5), 1.7), 1),
    "tanh": (lambda a: N.tanh(a), 1),
    "gelu": (lambda a: N.gelu(a), 1),
    "relu": (lambda a: N.relu(N.add(N.mul(a, a), 0.5)), 1),
    "softplus": (lambda a: N.softplus(a), 1),
    "softmax": (lambda a: N.softmax(a), 1),
    # tanh bounds the values and the ramp guarantees per-row spread, keeping
    # layernorm's curvature small enough for the finite-difference probe
    "layernorm": (lambda a: N.layernorm(_spread_last_axis(a)), 1),
    "sum_": (lambda a: N.sum_(a, axis=-1), 1),
    "mean": (lambda a: N.mean(a, axis=0), 1),
    "cumsum": (lambda a: N.cumsum(a, axis=-1), 1),
    "concat": (lambda a, b: N.concat([a, b], axis=0), 2),
    "reshape": (lambda a: N.reshape(a, (-1,)), 1),
    "transpose": (lambda a: N.transpose(a), 1),
    "slice_": (lambda a: N.slice_(a, (Ellipsis, slice(1, None))), 1),
}


def check_primitive_gradients() -> int:
    exported = {name for name in N.__all__ if name not in _NON_OPS}
    covered = set(_OP_CASES) | {"matmul", "gather"}
    _require(
        exported == covered,
        f"primitive coverage drifted: missing {exported - covered}, stale {covered - exported}",
    )
    rng = make_rng(0x5EED, 11)
    passed = 0
    for name in sorted(_OP_CASES):
        fn, arity = _OP_CASES[name]
        for _ in range(5):
            shape = [int(d) for d in rng.integers(1, 5, size=2)]
            inputs = [rng.standard_normal(shape) for _ in range(arity)]
            worst = max_grad_error(fn, inputs, rng)
            _require(worst <= 1.0, f"{name}: gradient mismatch ratio {worst:.3g}")
            passed += 1
    for _ in range(5):
        m, k, n = (int(d) for d in rng.integers(1, 5, size=3))
        worst = max_grad_error(
            lambda a, b: N.matmul(a, b),
            [rng.standard_normal((m, k)), rng.standard_normal((k, n))],
            rng,
        )
        _require(worst <= 1.0, f"matmul: gradient mismatch ratio {worst:.3g}")
        passed += 1
    for _ in range(5):
        rows, cols = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        idx = rng.integers(0, rows, size=5)
        worst = max_grad_error(
            lambda a, idx=idx: N.gather(a, idx), [rng.standard_normal((rows, cols))], rng
        )
        _require(worst <= 1.0, f"gather: gradient mismatch ratio {worst:.3g}")
        passed += 1
    return passed


def _tiny_model() -> AnimationModel:
    layout = PropertyLayout(
        properties=(
            PropertySpec("pos", "a", 2, "position"),
            PropertySpec("ht", "b", 1, "other"),
        ),
        actionable=("a",),
    )
    cfg = TemporalModelConfig(
        layers=1, heads=2, width=16, rel_clip=4,
        step_embed_dim=8, rate_embed_dim=8, mask_bins=4, text_dim=8,
    )
    text_cfg = AggregatorConfig(layers=1, heads=2, width=8, out_dim=8, max_tokens=8)
    vocab = Vocabulary.from_corpus(["left", "right"])
    rng = make_rng(0, 9)
    return AnimationModel(
        layout=layout,
        cfg=cfg,
        text_cfg=text_cfg,
        vocab=vocab,
        params=init_temporal_model(layout, cfg, rng),
        text_params=init_aggregator(vocab.size, text_cfg, rng),
    )


def check_estimator_gradients() -> int:
    model = _tiny_model()
    layout, cfg = model.layout, model.cfg
    rng = make_rng(12)
    b, t = 2, 4
    p, a, d = layout.num_properties, layout.num_actionable, layout.state_dim
    m_state = (rng.random((b, p, t)) < 0.5).astype(np.float32)
    m_action = (rng.random((b, a, t)) < 0.5).astype(np.float32)
    m_exp = expand_state_mask(m_state, layout)
    s_noisy = rng.standard_normal((b, t, d)) * (1.0 - m_exp)
    s_cond = rng.standard_normal((b, t, d)) * m_exp
    a_emb = rng.standard_normal((b, a, t, cfg.text_dim)) * m_action[..., None]
    k = rng.integers(1, 9, size=b)
    rates = rng.uniform(1.0, 8.0, size=b)

    params64 = {name: Tensor(t_.data.astype(np.float64)) for name, t_ in model.params.items()}
    names = [
        "blk0.attn.wq.w",
        "blk0.demod1.style.w",
        "blk0.demod1.w",
        "rel_bias",
        "prop.pos.out.w",
        "act.a.in.w",
    ]

    def f(*tensors):
        q = dict(params64)
        for name, tensor in zip(names, tensors):
            q[name] = tensor
        return estimate_noise(q, cfg, layout, s_noisy, s_cond, m_state, a_emb, m_action, k, rates)

    worst = max_grad_error(f, [params64[n].data for n in names], make_rng(77))
    _require(worst <= 1.0, f"noise estimator: gradient mismatch ratio {worst:.3g}")
    return len(names)


# ------------------------------------------------------------ diffusion checks


def check_forward_moments() -> int:
    schedule = build_schedule()
    rng = make_rng(41)
    n = 100_000
    x0_val = 1.7
    x0 = np.full(n, x0_val)
    passed = 0
    for k in (1, schedule.beta.shape[0] // 2, schedule.beta.shape[0]):
        eps = rng.standard_normal(n)
        x_k = forward_sample(x0, k, eps, schedule)
        ab = schedule.alpha_bar[k - 1]
        mean_expect = math.sqrt(ab) * x0_val
        var_expect = 1.0 - ab
        sigma = math.sqrt(var_expect)
        mean_err = abs(float(x_k.mean()) - mean_expect)
        _require(
            mean_err <= 3.0 * sigma / math.sqrt(n),
            f"forward mean off at k={k}: err {mean_err:.3g}",
        )
        var_err = abs(float(x_k.var(ddof=1)) - var_expect)
        _require(
            var_err <= 3.0 * var_expect * math.sqrt(2.0 / (n - 1)),
            f"forward variance off at k={k}: err {var_err:.3g}",
        )
        passed += 2
    return passed


def check_alpha_bar_monotone() -> int:
    passed = 0
    for steps in (build_schedule(), build_schedule(FULL_K)):
        ab = steps.alpha_bar
        _require(bool(np.all(np.diff(ab) < 0.0)), "alpha_bar is not strictly decreasing")
        _require(bool(np.all((ab > 0.0) & (ab < 1.0))), "alpha_bar left (0, 1)")
        passed += 2
    return passed


# ----------------------------------------------------------------- mask checks

_MASK_LAYOUT = PropertyLayout(
    properties=(
        PropertySpec("u.root", "u", 2, "position"),
        PropertySpec("u.arm", "u", 2, "joint_rotation"),
        PropertySpec("w.spot", "w", 3, "position"),
    ),
    actionable=("u",),
)


def check_mask_roundtrip() -> int:
    passed = 0
    for seed in range(25):
        rng = make_rng(seed, 3)
        t = int(rng.integers(2, 20))
        values = rng.standard_normal((t, _MASK_LAYOUT.state_dim)).astype(np.float32)
        s = StateSequence(_MASK_LAYOUT, values, 20.0)
        masks = random_masks(t, _MASK_LAYOUT.num_properties, _MASK_LAYOUT.num_actionable, rng)
        s_p, s_c = split(s, masks.m_state)
        merged = compose(s_p, s_c, masks.m_state)
        _require(np.array_equal(merged.values, s.values), f"mask roundtrip broke at seed {seed}")
        m_exp = expand_state_mask(masks.m_state, _MASK_LAYOUT)
        _require(
            bool(np.all(s_p.values * m_exp == 0.0)) and bool(np.all(s_c.values * (1 - m_exp) == 0.0)),
            f"split leaked entries across the mask at seed {seed}",
        )
        passed += 1
    return passed


def check_mask_rate() -> int:
    rng = make_rng(17, 5)
    p, t = 8, 25
    draws = 5000
    known = 0.0
    for _ in range(draws):
        known += float(sample_masks("bernoulli_25", t, p, 1, rng).m_state.sum())
    cells = draws * p * t
    dropped = 1.0 - known / cells
    _require(
        abs(dropped - 0.25) <= 0.002,
        f"bernoulli_25 drop rate drifted to {dropped:.5f} over {cells} cells",
    )
    return 1


# ------------------------------------------------------------- geometry checks


def check_blur_monte_carlo() -> int:
    spec = BallBlurSpec(radius=0.12, velocity=(3.0, 1.0, 0.5), shutter=0.2, density=5.0)
    v = spec.velocity
    v_hat = v / np.linalg.norm(v)
    n_hat = np.cross(v, [0.0, 0.0, 1.0])
    n_hat /= np.linalg.norm(n_hat)
    probes = [
        0.0 * v_hat + 0.06 * n_hat,
        0.10 * v_hat + 0.06 * n_hat,
        0.25 * v_hat + 0.03 * n_hat,
        -0.15 * v_hat + 0.09 * n_hat,
    ]
    rng = make_rng(23)
    n = 1_000_000
    tau = rng.uniform(-spec.shutter / 2.0, spec.shutter / 2.0, size=n)
    passed = 0
    for x in probes:
        closed = float(blur_probability(x, spec))
        _require(0.01 < closed < 0.99, f"probe {x} is not interior (p={closed:.3f})")
        dist = np.linalg.norm(x[None, :] - tau[:, None] * v[None, :], axis=1)
        hat = float((dist <= spec.radius).mean())
        stderr = math.sqrt(max(hat * (1.0 - hat), 1e-12) / n)
        _require(
            abs(hat - closed) <= 3.0 * stderr,
            f"blur mismatch at {x}: closed {closed:.6f} vs mc {hat:.6f} (3se {3*stderr:.2g})",
        )
        passed += 1
    still = BallBlurSpec(radius=0.12, velocity=(0.0, 0.0, 0.0), shutter=0.0, density=1.0)
    _require(float(blur_probability(np.array([0.0, 0.05, 0.0]), still)) == 1.0, "static cover")
    _require(float(blur_probability(np.array([0.0, 0.2, 0.0]), still)) == 0.0, "static miss")
    return passed + 2


def check_lbs_rigid_roundtrip() -> int:
    rng = make_rng(31)
    passed = 0
    for _ in range(50):
        rot = rotvec_to_matrix(rng.standard_normal(3))
        tr = rng.standard_normal(3)
        transforms = JointTransforms(rotations=rot[None], translations=tr[None])
        pts = rng.standard_normal((20, 3))
        canonical = lbs_deform(pts, np.ones((20, 1)), transforms)
        back = canonical @ rot.T + tr
        err = float(np.abs(back - pts).max())
        _require(err <= 1e-9, f"rigid roundtrip error {err:.3g}")
        passed += 1
    return passed


def check_drag_roundtrip() -> int:
    rng = make_rng(37)
    passed = 0
    for _ in range(1000):
        v0 = float(rng.uniform(5.0, 50.0))
        c = float(rng.uniform(0.0, 0.2))
        t = float(rng.uniform(0.1, 3.0))
        s = drag_displacement(v0, c, t)
        c_hat = estimate_drag_C(s, v0, t)
        residual = abs(drag_displacement(v0, c_hat, t) - s)
        _require(residual <= 1e-9 * s, f"drag roundtrip residual {residual:.3g} for s={s:.6f}")
        passed += 1
    return passed


def check_forward_kinematics_brute() -> int:
    rng = make_rng(43)
    passed = 0
    for _ in range(20):
        j = int(rng.integers(2, 8))
        parents = np.array([-1] + [int(rng.integers(0, i)) for i in range(1, j)])
        rots = np.stack([rotvec_to_matrix(rng.standard_normal(3) * 0.6) for _ in range(j)])
        trs = rng.standard_normal((j, 3))
        tree = KinematicTree(parents=parents, rotations=rots, translations=trs)
        fast = forward_kinematics(tree)
        for i in range(j):
            chain = []
            node = i
            while node != -1:
                chain.append(node)
                node = int(parents[node])
            # explicit affine composition from the root down
            r = np.eye(3)
            t = np.zeros(3)
            for node in reversed(chain):
                t = r @ trs[node] + t
                r = r @ rots[node]
            _require(np.abs(fast.rotations[i] - r).max() <= 1e-6, "fk rotation mismatch")
            _require(np.abs(fast.translations[i] - t).max() <= 1e-6, "fk translation mismatch")
        passed += 1
    return passed


def check_trilinear_nodes() -> int:
    rng = make_rng(47)
    grid = rng.standard_normal((3, 3, 4, 2))
    mn = np.array([-1.0, 0.0, 2.0])
    mx = np.array([1.0, 3.0, 5.0])
    passed = 0
    for i in range(3):
        for jj in range(4):
            for kk in range(2):
                at = mn + np.array([i / 2, jj / 3, kk / 1]) * (mx - mn)
                got = trilinear_sample(grid, mn, mx, at[None])[0]
                _require(
                    np.abs(got - grid[:, i, jj, kk]).max() <= 1e-12,
                    f"grid node ({i},{jj},{kk}) not reproduced exactly",
                )
                passed += 1
    flat = Tensor(rng.standard_normal((2 * 2 * 3, 4)))
    for i in range(2):
        for jj in range(2):
            for kk in range(3):
                got = _trilinear_gather(flat, (2, 2, 3), np.array([[i, jj, kk]], dtype=np.float64))
                want = flat.data[(i * 2 + jj) * 3 + kk]
                _require(np.abs(got.data[0] - want).max() <= 1e-12, "gather node mismatch")
                passed += 1
    return passed


# ------------------------------------------------------------- renderer checks


def check_composite_weight_bounds() -> int:
    rng = make_rng(53)
    passed = 0
    for _ in range(30):
        m = int(rng.integers(1, 13))
        depths = np.sort(rng.uniform(0.1, 9.0, size=m))
        sigmas = rng.uniform(0.0, 30.0, size=m)
        deltas = rng.uniform(0.0, 0.5, size=m)
        weights, alpha = composite(depths, np.eye(m), sigmas, deltas)
        _require(bool(np.all(weights >= 0.0)), "negative composite weight")
        _require(bool(np.all(weights <= 1.0 + 1e-9)), "composite weight above 1")
        total = float(weights.sum())
        _require(total <= 1.0 + 1e-6, f"composite weights sum to {total:.8f}")
        _require(abs(alpha - total) <= 1e-9, "alpha is not the weight sum")
        passed += 1
    return passed


def check_frechet_one_d() -> int:
    fd = frechet_from_moments(np.array([0.0]), np.array([[1.0]]), np.array([1.0]), np.array([[1.0]]))
    _require(abs(fd - 1.0) <= 1e-6, f"FD(N(0,1), N(1,1)) = {fd}")
    fd = frechet_from_moments(np.array([0.0]), np.array([[1.0]]), np.array([0.0]), np.array([[4.0]]))
    _require(abs(fd - 1.0) <= 1e-6, f"FD(N(0,1), N(0,4)) = {fd}")
    fd = frechet_from_moments(np.array([0.3]), np.array([[0.49]]), np.array([0.3]), np.array([[0.49]]))
    _require(fd <= 1e-6, f"FD of identical moments = {fd}")
    return 3


def check_ppm_golden(tmp_dir=None) -> int:
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory(dir=tmp_dir) as td:
        white = Path(td) / "white.ppm"
        write_image(np.ones((3, 1, 1)), white)
        _require(
            white.read_bytes() == b"P6\n1 1\n255\n\xff\xff\xff",
            "1x1 white PPM bytes drifted",
        )
        grad = Path(td) / "grad.ppm"
        img = np.zeros((3, 2, 2))
        img[0] = [[0.0, 0.25], [0.5, 0.75]]
        img[1] = [[1.0, 0.75], [0.5, 0.25]]
        img[2] = [[0.2, 0.4], [0.6, 0.8]]
        write_image(img, grad)
        want = b"P6\n2 2\n255\n" + bytes([0, 255, 51, 64, 191, 102, 128, 128, 153, 191, 64, 204])
        _require(grad.read_bytes() == want, "2x2 gradient PPM bytes drifted")
    return 2


CHECKS = [
    ("primitive_gradients", check_primitive_gradients),
    ("estimator_gradients", check_estimator_gradients),
    ("forward_moments", check_forward_moments),
    ("alpha_bar_monotone", check_alpha_bar_monotone),
    ("mask_roundtrip", check_mask_roundtrip),
    ("mask_rate", check_mask_rate),
    ("blur_monte_carlo", check_blur_monte_carlo),
    ("lbs_rigid_roundtrip", check_lbs_rigid_roundtrip),
    ("drag_roundtrip", check_drag_roundtrip),
    ("forward_kinematics_brute", check_forward_kinematics_brute),
    ("trilinear_nodes", check_trilinear_nodes),
    ("composite_weight_bounds", check_composite_weight_bounds),
    ("frechet_one_d", check_frechet_one_d),
    ("ppm_golden", check_ppm_golden),
]


@dataclass
class CheckResult:
    name: str
    passed: int
    seconds: float
    error: str | None = None


def run_all(log=None) -> list[CheckResult]:
    if log is None:
        log = lambda line: print(line, file=sys.stderr)
    results = []
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            count = fn()
            results.append(CheckResult(name, count, time.perf_counter() - start))
            log(f"verify {name}: {count} checks passed ({results[-1].seconds:.2f}s)")
        except Exception as exc:
            results.append(CheckResult(name, 0, time.perf_counter() - start, error=str(exc)))
            log(f"verify {name}: FAILED: {exc}")
    return results


def all_passed(results: list[CheckResult]) -> bool:
    return all(r.error is None for r in results)
