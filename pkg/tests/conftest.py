"""
Test configuration and fixtures.
"""

from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pytest

from drive_sscl.core.stgraph import StGraph, build_graph
from drive_sscl.core.synth import ScenarioKind, SyntheticCorpus
from drive_sscl.models import (
    BoundingBox,
    DataConfig,
    DetectedObject,
    ModelConfig,
    RunConfig,
    TrackedClip,
    TrainConfig,
)

# (frame, instance, class, x, y, w, h)
Row = Tuple[int, int, int, float, float, float, float]


def make_clip(
    rows: Iterable[Row],
    num_frames: int = 10,
    clip_id: str = "clip",
    label: Optional[int] = None,
    width: float = 1280.0,
    height: float = 720.0,
    lanes: Optional[Sequence[np.ndarray]] = None,
) -> TrackedClip:
    objects = [
        DetectedObject(
            frame_index=f,
            instance_id=i,
            class_id=c,
            bbox=BoundingBox(x_min=x, y_min=y, width=w, height=h),
        )
        for f, i, c, x, y, w, h in rows
    ]
    return TrackedClip(
        clip_id=clip_id,
        width=width,
        height=height,
        num_frames=num_frames,
        objects=objects,
        lanes=list(lanes) if lanes is not None else [],
        label=label,
    )


def random_clip(
    rng: np.random.Generator,
    max_instances: int = 4,
    num_frames: int = 4,
    clip_id: str = "rand",
    label: Optional[int] = None,
    width: float = 200.0,
    height: float = 100.0,
    presence: float = 0.7,
) -> TrackedClip:
    """Random instances with random per-frame presence and boxes."""
    rows = []
    for inst in range(int(rng.integers(1, max_instances + 1))):
        cls = int(rng.integers(0, 8))
        for t in range(num_frames):
            if rng.random() < presence:
                w, h = rng.uniform(5, 60), rng.uniform(5, 40)
                x, y = rng.uniform(0, width - w), rng.uniform(0, height - h)
                rows.append((t, inst + 1, cls, x, y, w, h))
    lanes = [rng.uniform(0, [width, height], size=(int(rng.integers(0, 4)), 2)) for _ in range(num_frames)]
    return make_clip(rows, num_frames, clip_id, label, width, height, lanes)


def random_graph(rng: np.random.Generator, max_instances: int = 4, num_frames: int = 3, **kwargs) -> StGraph:
    return build_graph(random_clip(rng, max_instances, num_frames, **kwargs))


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def data_config():
    """Default ingest configuration (30 fps in, 2.5 fps working, T=10)."""
    return DataConfig()


@pytest.fixture
def small_model_config():
    """Narrow network for fast tests."""
    return ModelConfig(embedding_dim=6, encoder_dim=4, hidden_dim=8, layers=3)


@pytest.fixture
def two_car_clip():
    """Two cars on every frame of a 10-frame clip."""
    rows = []
    for t in range(10):
        rows.append((t, 1, 2, 100.0 + 10 * t, 300.0, 80.0, 60.0))
        rows.append((t, 2, 2, 900.0 - 10 * t, 320.0, 90.0, 70.0))
    return make_clip(rows, clip_id="two_cars", label=0)


@pytest.fixture
def synthetic_dataset(data_config):
    """Small two-class synthetic dataset with unlabeled clips."""
    corpus = SyntheticCorpus(data_config)
    return corpus.generate_dataset(
        {ScenarioKind.CROSS_LEFT_TO_RIGHT: 6, ScenarioKind.LEAD_VEHICLE_STOP: 6},
        labeled_fraction=0.5,
        seed=3,
        out_of_class=2,
        validation_per_class=3,
    )


@pytest.fixture
def tiny_run_config(small_model_config):
    """Run configuration sized for unit-level training runs."""
    return RunConfig(
        data=DataConfig(classes=["cross_left_to_right", "lead_vehicle_stop"]),
        model=small_model_config,
        train=TrainConfig(batch_size=4, epochs=2, lr_init=0.01, seed=0),
    )


@pytest.fixture
def output_dir(tmp_path):
    """Temporary output directory for tests."""
    return tmp_path / "output"


# Test markers
def pytest_configure(config):
    """Configure custom pytest markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
