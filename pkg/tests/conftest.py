from __future__ import annotations

import pytest

from latte.backbone import ModelConfig
from latte.config import DatasetConfig, DiffusionConfig, OptimConfig, RunConfig

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request, capsys):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str = "", gate: bool = True) -> None:
        line = f"{'PASS' if passed else 'FAIL'} {number}: {title} -- {detail}"
        request.config.stash[VERDICTS].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        if gate:
            assert passed, line

    return record


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(variant=1, layers=2, hidden=8, heads=2, frames=4, latent=(4, 4, 4), mlp_ratio=2, freq_dim=8)
    base.update(kw)
    return ModelConfig(**base)


def tiny_run(output_dir, **kw) -> RunConfig:
    """A run small enough to train a few steps in well under a second per step."""
    model = ModelConfig(
        variant=1, layers=2, hidden=8, heads=2, frames=2, latent=(8, 8, 4), mlp_ratio=2, freq_dim=8, num_classes=4
    )
    base = dict(
        model=model,
        diffusion=DiffusionConfig(steps=10),
        optim=OptimConfig(lr=1e-3),
        dataset=DatasetConfig(num_videos=4, video_length=4, height=16, width=16),
        ema_decay=0.9,
        batch_size=2,
        extra_images=1,
        steps=6,
        ckpt_every=3,
        output_dir=str(output_dir),
    )
    base.update(kw)
    return RunConfig(**base)
