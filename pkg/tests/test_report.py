import numpy as np
import pandas as pd
import pytest

from uflossmri.eval.perturb import StudyCurve
from uflossmri.eval.report import (
    load_metrics,
    plot_metric_boxplots,
    plot_study_curves,
    render_heat_map,
    render_images,
    summarize_metrics,
)


def _metrics() -> pd.DataFrame:
    rows = []
    for method, base in (("modl-ufloss", 0.1), ("zero-filled", 0.4)):
        for index in range(4):
            rows.append(
                {
                    "method": method,
                    "slice_id": f"s-{index}",
                    "nrmse": base + 0.01 * index,
                    "ssim": 0.9 - base,
                    "ufloss": np.nan if method == "zero-filled" else 0.2,
                }
            )
    return pd.DataFrame(rows)


def test_summary_reports_median_and_iqr_in_method_order() -> None:
    summary = summarize_metrics(_metrics())

    assert summary["method"].tolist()[0] == "zero-filled"
    row = summary[(summary["method"] == "modl-ufloss") & (summary["metric"] == "nrmse")].iloc[0]
    assert row["n"] == 4
    assert row["median"] == pytest.approx(0.115)
    assert row["iqr"] == pytest.approx(row["q3"] - row["q1"])
    assert row["iqr"] == pytest.approx(0.015)
    assert summary[(summary["method"] == "zero-filled") & (summary["metric"] == "ufloss")].empty


def test_load_metrics_checks_files_and_columns(tmp_path) -> None:
    good = tmp_path / "metrics.csv"
    _metrics().to_csv(good, index=False)
    bad = tmp_path / "bad.csv"
    pd.DataFrame([{"method": "pics", "nrmse": 0.1}]).to_csv(bad, index=False)

    assert len(load_metrics([good])) == 8
    with pytest.raises(FileNotFoundError, match="Missing artifact"):
        load_metrics([tmp_path / "absent.csv"])
    with pytest.raises(ValueError, match="lacks columns: ssim, ufloss"):
        load_metrics([bad])


def test_plots_are_written_as_png(tmp_path) -> None:
    curve = StudyCurve((0.0, 0.05, 0.1), (0.0, 0.1, 0.2), (0.0, 0.05, 0.1), label="noise")

    boxplots = plot_metric_boxplots(_metrics(), tmp_path, {"config_hash": "abc"})
    curves = plot_study_curves([curve], tmp_path, "perturb-noise_all_ufnet", "beta")
    heat = render_heat_map(np.array([[-0.5, 0.2], [0.9, 1.0]]), tmp_path, "correlate_s-0_ufnet", "map")
    images = render_images([np.ones((4, 4)), np.zeros((4, 4))], ["a", "b"], tmp_path, "retrieve_0_ufnet")

    assert [path.name for path in boxplots] == ["report_all_nrmse.png", "report_all_ssim.png", "report_all_ufloss.png"]
    for path in [*boxplots, curves, heat, images]:
        assert path.exists() and path.stat().st_size > 0
