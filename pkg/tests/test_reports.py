"""Report emission: CSV shapes, PGM well-formedness, figure files."""

import numpy as np
import pytest

from conftest import rng

from shadowalign.attack.evaluate import roc_curve
from shadowalign.nn import build_cnn
from shadowalign.report import (
    cause_study_csv,
    render_cause_study_figure,
    render_roc_figure,
    scenario_csv,
    write_activation_maps,
    write_pgm,
)
from shadowalign.scenarios import CauseStudyResult, CauseStudyRow, RepetitionResult, ScenarioReport
from shadowalign.training import init_weights


def make_report(n_reps):
    report = ScenarioReport(scenario="S3", feature_desc="oa2")
    for i in range(n_reps):
        report.repetitions.append(
            RepetitionResult(rep=i, auc=0.6 + 0.01 * i, tpr_at={0.01: 0.1}, seconds=1.0)
        )
    return report


def test_scenario_csv_single_repetition_has_empty_ci():
    csv = scenario_csv(make_report(1))
    lines = csv.strip().splitlines()
    assert lines[0] == "scenario,features,rep,auc,tpr@0.01"
    ci_line = [l for l in lines if ",ci95," in l][0]
    assert ci_line.endswith("ci95,,")  # empty CI cell for one repetition


def test_scenario_csv_multi_rep_has_ci():
    csv = scenario_csv(make_report(5))
    ci_line = [l for l in csv.strip().splitlines() if ",ci95," in l][0]
    value = ci_line.split(",")[3]
    assert float(value) > 0


def test_cause_study_csv_shape():
    result = CauseStudyResult(
        rows=[CauseStudyRow("same", 0, 0.0, 0.0), CauseStudyRow("diff_wi", 0, 3.0, 0.2)],
        repetitions=3,
    )
    lines = cause_study_csv(result).strip().splitlines()
    assert lines[0] == "condition,layer,wms_mean,wms_sd"
    assert len(lines) == 3


def test_pgm_header_and_normalisation(tmp_path):
    img = np.array([[0.5, 1.0], [2.0, 3.0]], dtype=np.float32)
    path = tmp_path / "map.pgm"
    write_pgm(str(path), img)
    data = path.read_bytes()
    header, rest = data.split(b"255\n", 1)
    assert header == b"P5\n2 2\n"
    pixels = np.frombuffer(rest, dtype=np.uint8).reshape(2, 2)
    assert pixels.min() == 0 and pixels.max() == 255  # min -> 0, max -> 255
    assert pixels[0, 0] == 0 and pixels[1, 1] == 255


def test_constant_map_writes_zeros(tmp_path):
    path = tmp_path / "flat.pgm"
    write_pgm(str(path), np.ones((3, 3), dtype=np.float32))
    pixels = np.frombuffer(path.read_bytes().split(b"255\n", 1)[1], dtype=np.uint8)
    assert (pixels == 0).all()


def test_activation_maps_one_file_per_filter(tmp_path):
    model = init_weights(
        build_cnn(12, 3, conv_filters=[20], fc_sizes=[8], kernel=3, dropout_p=0.0), seed=1
    )
    record = rng(2).standard_normal((1, 12, 12)).astype(np.float32)
    written = write_activation_maps(model, record, str(tmp_path))
    assert len(written) == 20
    for p in written:
        data = open(p, "rb").read()
        assert data.startswith(b"P5\n10 10\n255\n")
        assert len(data) == len(b"P5\n10 10\n255\n") + 100


def test_roc_figure_written(tmp_path):
    curve = roc_curve(np.array([0.9, 0.7, 0.3, 0.1]), np.array([1, 0, 1, 0]))
    path = tmp_path / "roc.png"
    render_roc_figure({"run": curve}, str(path))
    assert path.stat().st_size > 1000


def test_cause_study_figure_written(tmp_path):
    result = CauseStudyResult(
        rows=[
            CauseStudyRow("random_permutation", 0, 3.1, 0.1),
            CauseStudyRow("random_permutation", 1, 1.4, 0.1),
            CauseStudyRow("diff_wi", 0, 3.0, 0.2),
            CauseStudyRow("diff_wi", 1, 1.2, 0.2),
        ],
        repetitions=3,
    )
    path = tmp_path / "cause.png"
    render_cause_study_figure(result, str(path))
    assert path.stat().st_size > 1000
