import numpy as np
import pytest

from meshforge import iso
from meshforge.scene_io import CameraView


def pinhole(W=64, H=48, f=60.0, R=None, t=None):
    K = np.array([[f, 0.0, W / 2], [0.0, f, H / 2], [0.0, 0.0, 1.0]])
    Rt = np.zeros((3, 4))
    Rt[:, :3] = np.eye(3) if R is None else R
    if t is not None:
        Rt[:, 3] = t
    return CameraView(K, Rt, W, H)


def quad_mesh(z=2.0, half=0.5, center=(0.0, 0.0)):
    cx, cy = center
    v = np.array([[cx - half, cy - half, z], [cx + half, cy - half, z], [cx + half, cy + half, z],
                  [cx - half, cy + half, z]])
    return iso.TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), np.tile([0.0, 0.0, -1.0], (4, 1)))


@pytest.fixture
def camera():
    return pinhole()


@pytest.fixture(scope="session")
def sphere_dataset(tmp_path_factory):
    """24-view 128x128 synthetic sphere with 2 held-out views (rendered once)."""
    from meshforge.pipeline.synthetic import make_synthetic_scene

    root = tmp_path_factory.mktemp("sphere_scene")
    make_synthetic_scene(root, base="sphere", n_views=24, W=128, H=128, seed=0, n_heldout=2)
    return root


def tiny_config(**over):
    from meshforge.pipeline.config import OptimConfig, StageConfig

    cfg = OptimConfig(coarse=StageConfig(32, 2000, 2), fine=StageConfig(64, 4000, 1), tex_res=16, tex_max_res=32,
                      hull_res=64, resample_every=2, checkpoint_every=1, lr_texture=1e-2, lr_env=3e-2)
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg.validate()


# one line per acceptance criterion, repeated in the terminal summary so the
# verdicts are visible without -s
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
