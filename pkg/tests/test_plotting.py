from hbtrack.geometry import BBox
from hbtrack.metrics import FrameEvents
from hbtrack.plotting import plot_ablation, plot_report, render_frame, track_color


def test_colors_are_stable():
    assert track_color(3) == track_color(23)
    assert track_color(3) != track_color(4)


def test_render_is_reproducible(tmp_path):
    tracks = [(1, BBox(10, 10, 40, 100)), (7, BBox(200, 50, 30, 80))]
    for name in ("a.png", "b.png"):
        render_frame(tmp_path / name, tracks, (640, 360), frame=3, ground_truth=tracks[:1])
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_summary_figures(tmp_path):
    rows = [{"seed": s, "mode": m, "mota": 0.5 + 0.1 * s, "id_switches": s}
            for s in range(3) for m in ("body", "body+head")]
    plot_ablation(tmp_path / "abl.svg", rows, "mode", ["mota", "id_switches"], "demo")
    plot_report(tmp_path / "rep.pdf", [FrameEvents(f, 2, f % 2, 1, 0) for f in range(1, 6)])
    assert (tmp_path / "abl.svg").stat().st_size > 0
    assert (tmp_path / "rep.pdf").read_bytes().startswith(b"%PDF")
