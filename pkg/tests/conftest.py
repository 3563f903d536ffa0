import numpy as np
import pytest
import torch

from hydrovision.gcrn import AttentionConfig
from hydrovision.model import HydroVision, ModelConfig
from hydrovision.vit import VitConfig

torch.set_num_threads(1)


def finite_difference_error(loss_fn, params, step=1e-5, max_entries=None, seed=0):
    """Relative error between autograd and central differences over ``params``.

    Returns ``||g_auto - g_fd|| / max(||g_auto||, ||g_fd||)`` over the checked
    entries; when ``max_entries`` is set a seeded subset of entries is probed.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    auto, numeric = [], []
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = rng.choice(flat.numel(), max_entries, replace=False)
            g = torch.zeros_like(p) if g is None else g
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric.append((up - down) / (2 * step))
                auto.append(g.reshape(-1)[i].item())
    auto, numeric = np.array(auto), np.array(numeric)
    scale = max(np.linalg.norm(auto), np.linalg.norm(numeric), 1e-300)
    return np.linalg.norm(auto - numeric) / scale


def micro_model(seed=0, use_elevation=True, alpha=0.5, horizon=4, **kw):
    """n=3, h=4, d=8, one ViT layer, on a 32x32 raster (4 tiles)."""
    rng = np.random.default_rng(seed)
    patches = rng.normal(size=(4, 16, 16))
    cfg = ModelConfig(
        num_nodes=3, hidden_dim=4, horizon=horizon, embedding_dim=3, alpha=alpha,
        use_elevation=use_elevation, seed=seed,
        vit=VitConfig(embed_dim=8, num_layers=1, num_heads=2),
        attention=AttentionConfig(num_heads=2), **kw,
    )
    return HydroVision(cfg, patches, [0, 1, 3]) if use_elevation else HydroVision(cfg)


@pytest.fixture
def micro():
    return micro_model()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
