import numpy as np
import pytest

from qg2rom_plots import PlotError, PlotJob, render, render_all
from qg2rom_plots.cli import main as cli_main
from qg2rom_plots.render import discover_jobs, read_columns


# ---------------------------------------------------------------- fixtures


def write_field_csv(path, constant=None):
    xs = (np.arange(4) + 0.5) / 4.0
    ys = (np.arange(6) + 0.5) / 3.0 - 1.0
    lines = ["x,y,value"]
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            v = 1.5 if constant is not None else np.sin(x) * y
            lines.append(f"{x},{y},{v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_series_csv(path, n_curves=3, n_rows=20, names=None, abscissa="t"):
    names = names or [f"alpha_{k+1}" for k in range(n_curves)]
    lines = [",".join([abscissa] + names)]
    for i in range(n_rows):
        vals = [f"{np.sin(0.3 * i * (k + 1)):.6f}" for k in range(len(names))]
        lines.append(",".join([f"{0.1 * i}"] + vals))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_pmf_csv(path):
    edges = np.linspace(-1.0, 1.0, 11)
    mass = np.full(10, 0.1)
    lines = ["bin_lo,bin_hi,mass"]
    for lo, hi, m in zip(edges[:-1], edges[1:], mass):
        lines.append(f"{lo},{hi},{m}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_spectrum_csv(path):
    lines = ["field,index,sigma"]
    for fid in ("q1", "psi1"):
        for k in range(8):
            lines.append(f"{fid},{k+1},{10.0 * 0.5 ** k}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_energy_csv(path, name="enstrophy", offset=0.0):
    lines = [f"t,{name}"]
    for i in range(15):
        lines.append(f"{0.05 * i},{1.0 + 0.1 * np.cos(i) + offset}")
    path.write_text("\n".join(lines) + "\n")
    return path


def job(kind, inputs, tmp_path, name="fig"):
    return PlotJob.make(kind, inputs, tmp_path / f"{name}.png")


def assert_image(path):
    assert path.exists()
    data = path.read_bytes()
    assert len(data) > 500
    assert data[:8] == b"\x89PNG\r\n\x1a\n"


# ---------------------------------------------------------------- per-kind


def test_contour(tmp_path):
    csv = write_field_csv(tmp_path / "f.csv")
    assert_image(render(job("contour", [csv], tmp_path)))


def test_contour_constant_field(tmp_path):
    csv = write_field_csv(tmp_path / "f.csv", constant=1.5)
    assert_image(render(job("contour", [csv], tmp_path)))


def test_diffmap(tmp_path):
    csv = write_field_csv(tmp_path / "d.csv")
    assert_image(render(job("diffmap", [csv], tmp_path)))


def test_series_legend_matches_curves(tmp_path):
    import matplotlib.pyplot as plt

    csv = write_series_csv(tmp_path / "s.csv", n_curves=3)
    from qg2rom_plots.render import _render_series

    fig, ax = plt.subplots()
    _render_series(job("series", [csv], tmp_path), ax)
    legend = ax.get_legend()
    assert legend is not None
    assert len(legend.get_texts()) == 3
    plt.close(fig)
    assert_image(render(job("series", [csv], tmp_path)))


def test_series_skips_parameter_columns(tmp_path):
    import matplotlib.pyplot as plt

    from qg2rom_plots.render import _render_series

    csv = write_series_csv(tmp_path / "s.csv",
                           names=["mu_1", "alpha_1", "alpha_2"])
    fig, ax = plt.subplots()
    _render_series(job("series", [csv], tmp_path), ax)
    assert len(ax.get_legend().get_texts()) == 2
    plt.close(fig)


def test_training_history_is_a_series(tmp_path):
    csv = write_series_csv(tmp_path / "h.csv", abscissa="epoch",
                           names=["train_mse", "val_mse"])
    assert_image(render(job("series", [csv], tmp_path)))


def test_pmf(tmp_path):
    csv = write_pmf_csv(tmp_path / "p.csv")
    assert_image(render(job("pmf", [csv], tmp_path)))


def test_spectrum(tmp_path):
    csv = write_spectrum_csv(tmp_path / "sv.csv")
    assert_image(render(job("spectrum", [csv], tmp_path)))


def test_energy_single(tmp_path):
    csv = write_energy_csv(tmp_path / "e.csv")
    assert_image(render(job("energy", [csv], tmp_path)))


def test_energy_with_error_panel(tmp_path):
    a = write_energy_csv(tmp_path / "a.csv")
    b = write_energy_csv(tmp_path / "b.csv", offset=0.05)
    assert_image(render(job("energy", [a, b], tmp_path)))


# ---------------------------------------------------------------- errors


def test_missing_column_names_the_column(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("x,y,val\n0,0,1\n")
    with pytest.raises(PlotError, match="'value'"):
        render(job("contour", [csv], tmp_path))


def test_missing_file(tmp_path):
    with pytest.raises(PlotError, match="not found"):
        render(job("pmf", [tmp_path / "absent.csv"], tmp_path))


def test_ragged_rows_rejected(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("bin_lo,bin_hi,mass\n0,1\n")
    with pytest.raises(PlotError, match="ragged"):
        render(job("pmf", [csv], tmp_path))


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(PlotError, match="unknown plot kind"):
        PlotJob.make("sparkline", [tmp_path / "x.csv"], tmp_path / "x.png")


def test_incomplete_grid_rejected(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("x,y,value\n0,0,1\n1,0,2\n0,1,3\n")
    with pytest.raises(PlotError, match="grid"):
        render(job("contour", [csv], tmp_path))


def test_read_columns_keeps_labels_as_strings(tmp_path):
    csv = write_spectrum_csv(tmp_path / "sv.csv")
    cols = read_columns(csv)
    assert cols["field"].dtype == object
    assert cols["sigma"].dtype == float


# ---------------------------------------------------------------- render_all


def make_artifact_dir(tmp_path):
    root = tmp_path / "out"
    (root / "bases").mkdir(parents=True)
    (root / "models").mkdir()
    (root / "predict").mkdir()
    write_spectrum_csv(root / "bases" / "singular_values.csv")
    write_series_csv(root / "bases" / "q1_coeffs.csv")
    write_series_csv(root / "models" / "q1_loss.csv", abscissa="epoch",
                     names=["train_mse", "val_mse"])
    write_field_csv(root / "predict" / "q1_avg.csv")
    write_field_csv(root / "predict" / "q1_avg_absdiff.csv")
    write_pmf_csv(root / "predict" / "q1_pmf.csv")
    write_series_csv(root / "predict" / "q1_coeffs.csv")
    write_energy_csv(root / "predict" / "q1_enstrophy.csv")
    write_energy_csv(root / "predict" / "psi1_kinetic_energy.csv",
                     name="kinetic_energy")
    return root


def test_render_all_touches_every_kind(tmp_path):
    root = make_artifact_dir(tmp_path)
    jobs = discover_jobs(root, tmp_path / "figs")
    assert {j.kind for j in jobs} == {"contour", "series", "pmf",
                                     "spectrum", "energy", "diffmap"}
    written = render_all(root, tmp_path / "figs")
    assert len(written) == len(jobs)
    for p in written:
        assert_image(p)


def test_render_all_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(PlotError, match="no recognized CSV"):
        render_all(tmp_path / "empty", tmp_path / "figs")


def test_render_deterministic(tmp_path):
    csv = write_pmf_csv(tmp_path / "p.csv")
    p1 = render(PlotJob.make("pmf", [csv], tmp_path / "one.png", title="pmf"))
    p2 = render(PlotJob.make("pmf", [csv], tmp_path / "two.png", title="pmf"))
    assert p1.read_bytes() == p2.read_bytes()


# ---------------------------------------------------------------- CLI


def test_cli_render(tmp_path):
    csv = write_field_csv(tmp_path / "f.csv")
    out = tmp_path / "f.png"
    assert cli_main(["render", "--kind", "contour", "--input", str(csv),
                     "--output", str(out)]) == 0
    assert_image(out)


def test_cli_render_all(tmp_path):
    root = make_artifact_dir(tmp_path)
    assert cli_main(["render-all", str(root), str(tmp_path / "figs")]) == 0
    assert len(list((tmp_path / "figs").glob("*.png"))) >= 6


def test_cli_error_exit_code(tmp_path):
    assert cli_main(["render", "--kind", "pmf",
                     "--input", str(tmp_path / "absent.csv"),
                     "--output", str(tmp_path / "x.png")]) == 1
