"""What a trained model can tell you about its inputs.

Trains a small additive model on synthetic data, then reads out the three
interpretability surfaces: view gates, per-category embedding cells, and
singular values of the embedding matrices.  Finishes with isolation
panels that forecast from one view group at a time.
"""
import numpy as np

from loadcast.calendars import derive_calendar_views
from loadcast.explain import (
    default_groups,
    dump_embeddings,
    isolation_panels,
    svd_embeddings,
)
from loadcast.lags import LagSet
from loadcast.model import ModelConfig
from loadcast.synth import synth_generate, synth_region
from loadcast.training import SplitSpec, TrainConfig, train


def bar(value: float, scale: float, width: int = 40) -> str:
    return "#" * max(1, int(round(width * value / scale)))


def main() -> None:
    frame = synth_generate(days=90, seed=4)
    years = [int(str(frame.timestamps[i].astype("datetime64[Y]"))) for i in (0, -1)]
    frame = derive_calendar_views(frame, synth_region(years[0], years[1]))
    lag_set = LagSet().capped(48)
    config = ModelConfig(
        method="additive", d=4, heads=2,
        encoder_layers=1, decoder_layers=1, horizon=12,
    )
    tc = TrainConfig(
        epochs=8, batch_size=64, lr0=0.003, seed=0,
        split=SplitSpec(test_hours=240, val_hours=240, max_train_hours=1200),
        val_stride=12,
    )
    result = train(frame, config, tc, lag_set=lag_set)
    print(f"trained: best val mape {result.best_val:.3f}%\n")

    dump = dump_embeddings(result.model)
    print("view gates, strongest first:")
    top = max(abs(v) for v in dump.gates.values())
    for name, gate in sorted(dump.gates.items(), key=lambda kv: -abs(kv[1])):
        print(f"  {name:>15s} {gate:>8.4f}  {bar(abs(gate), top)}")

    hour = next(v for v in dump.views if v["view"] == "hour")
    cells = np.array(hour["cells"])
    print("\nhour-of-day embedding magnitude:")
    for h, value in enumerate(cells):
        print(f"  {h:>4d}h {bar(value, cells.max())}")

    report = svd_embeddings(result.model)
    stacked = next(e for e in report.entries if e["matrix"] == "stacked")
    values = stacked["singular_values"][:6]
    print("\nleading singular values of the stacked embedding matrix:")
    print("  " + ", ".join(f"{v:.3f}" for v in values))
    print(f"  reconstruction error {stacked['reconstruction_error']:.2e}")

    groups = default_groups(frame.specs)
    window = (result.split.test[0], result.split.test[0] + 48)
    panels = isolation_panels(
        result.model, frame, result.scaler, groups, window, 12, lag_set
    )
    covered = len(panels[0].values)
    raw = frame.values[window[0] + 1 : window[0] + 1 + covered, frame.target_index]
    print("\ntwo-day forecast using one view group at a time:")
    for panel in panels:
        err = np.mean(np.abs(panel.values - raw))
        print(f"  {panel.name:>12s} mean absolute error {err:>8.1f}")


if __name__ == "__main__":
    main()
