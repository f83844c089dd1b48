import numpy as np
import pytest

from causal_mosaic import nn


def kink_margin(model: nn.MlpModel, batch: np.ndarray) -> float:
    """Smallest distance of any pre-activation to a non-differentiable point."""
    _, cache = nn.forward(model, batch, return_cache=True)
    cfg = model.config
    worst = np.inf
    for k, (_, z, _) in enumerate(cache):
        kind = cfg.activation(k)
        if kind == "maxout":
            zg = np.sort(z.reshape(z.shape[0], -1, cfg.group_size), axis=2)
            worst = min(worst, float(np.min(zg[..., -1] - zg[..., -2])))
        elif kind in ("abs", "leaky_relu"):
            worst = min(worst, float(np.min(np.abs(z))))
    return worst


def random_model(rng, depth, width, topology, hidden, output, n_classes=3):
    cfg = nn.MlpConfig(depth=depth, hidden_width=width, topology=topology,
                       hidden_activation=hidden, output_activation=output)
    model = nn.init_model(cfg, n_classes, rng)
    # nonzero biases so kinks are not all lined up at the origin
    for W, b in model.layers:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    model.head[1][:] = rng.normal(scale=0.1, size=model.head[1].shape)
    return model


def smooth_batch(rng, model, n=4, margin=1e-3, tries=200):
    for _ in range(tries):
        batch = rng.normal(size=(n, 2))
        if kink_margin(model, batch) > margin:
            return batch
    pytest.skip("could not draw a batch away from activation kinks")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def laplace_pairs(n_pairs, n, seed):
    from causal_mosaic import synth

    net = synth.sample_mixing(seed)
    spec = synth.sample_scales(n_pairs, seed + 1)
    return synth.generate_pairs(net, spec, n, seed=seed + 2, orientation="cause_first")


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
