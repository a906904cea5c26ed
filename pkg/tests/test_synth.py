from collections import defaultdict

import numpy as np
import pytest

from etsaliency import pipeline
from etsaliency.synth import synth_dataset


def score_gaps(tmp_path, bias_strength, fixations):
    manifest = pipeline.load_manifest(
        synth_dataset(tmp_path / f"b{bias_strength}_{fixations}", 20, 5, bias_strength, 4,
                      size=64, fixations_per_reader=fixations)
    )
    cb, boxes = pipeline.build_center_bias(manifest)
    by_key = defaultdict(list)
    for r in pipeline.evaluate_dataset(manifest, cb, boxes, ["informed", "bias"], seed=0):
        by_key[(r.source, r.metric)].append(r.value)
    gaps = {}
    for metric in ("sncc", "sauc"):
        diff = np.array(by_key[("informed", metric)]) - np.array(by_key[("bias", metric)])
        gaps[metric] = (diff.mean(), diff.std(ddof=1) / np.sqrt(diff.size))
    return gaps


def test_content_driven_gaze_favours_informed_source(tmp_path):
    gaps = score_gaps(tmp_path, 0.0, 20)
    assert gaps["sncc"][0] > 0.5
    assert gaps["sauc"][0] > 0.2


def test_pure_bias_gaze_leaves_sources_tied_on_sauc(tmp_path):
    for fixations in (20, 80):
        mean, se = score_gaps(tmp_path, 1.0, fixations)["sauc"]
        assert abs(mean) < 2 * se


def test_pure_bias_sncc_gap_shrinks_with_more_fixations(tmp_path):
    # finite sampling makes gt differ from cb, which leaves a residual sNCC gap
    few = score_gaps(tmp_path, 1.0, 20)["sncc"][0]
    many = score_gaps(tmp_path, 1.0, 80)["sncc"][0]
    assert 0 < many < few / 3


@pytest.mark.parametrize("bad", [-0.1, 1.5])
def test_bias_strength_range(tmp_path, bad):
    with pytest.raises(ValueError):
        synth_dataset(tmp_path, 2, 2, bad, 0)
