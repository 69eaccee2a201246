import functools

import numpy as np

from locreg.features import FeatureConfig, FeatureMap, extract_features, find_correspondences
from locreg.harness.scenes import SceneSpec, generate_scene, simulate_scan
from locreg.residuals import evaluate


@functools.lru_cache(maxsize=None)
def scene_setup(kind, sigma=0.0, seed=0):
    """Scene, feature map, and the scan features taken at the canonical viewpoint."""
    cfg = FeatureConfig()
    scene = generate_scene(SceneSpec(kind=kind, sigma=sigma, seed=seed))
    fmap = FeatureMap.from_cloud(scene.map, cfg)
    fc = extract_features(simulate_scan(scene, scene.viewpoint, seed=seed), cfg)
    return scene, fmap, fc


def viewpoint_batch(kind, sigma=0.0):
    """Correspondences and residual batch at the canonical viewpoint."""
    scene, fmap, fc = scene_setup(kind, sigma)
    corrs = find_correspondences(fc, fmap, scene.viewpoint, FeatureConfig())
    return scene, corrs, evaluate(scene.viewpoint, corrs)


def random_psd(rng, n=3, rank=None):
    A = rng.normal(size=(rank or n, n))
    return A.T @ A


# acceptance criteria record one line each; printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
