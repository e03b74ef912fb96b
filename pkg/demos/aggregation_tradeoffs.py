"""Size and accuracy across the three view-aggregation strategies.

The additive route sums fixed-width view embeddings, the concatenative
route stacks them, and the svd route compresses every view to a single
gated scalar.  The first table prices each route on the full production
schema; the second trains all three briefly on the same synthetic data.
"""
from loadcast.calendars import calendar_specs, derive_calendar_views
from loadcast.frames import standard_schema
from loadcast.lags import LagSet
from loadcast.model import ModelConfig, param_count
from loadcast.synth import synth_generate, synth_region
from loadcast.training import SplitSpec, TrainConfig, train

METHODS = ("svd", "additive", "concatenative")


def budget_table() -> None:
    specs = tuple(standard_schema(16)) + tuple(calendar_specs(16))
    print(f"parameter budgets on the {len(specs)}-view production schema:")
    print(f"{'method':>14s} {'total':>8s} {'embeddings':>11s} {'attention':>10s}")
    totals = {}
    for method in METHODS:
        config = ModelConfig(method=method, d=None if method == "svd" else 32)
        counts = param_count(config, specs)
        attention = counts["encoder"] + counts["decoder"] + counts["head"]
        totals[method] = counts["total"]
        print(
            f"{method:>14s} {counts['total']:>8d} "
            f"{counts['embeddings'] + counts['gates']:>11d} {attention:>10d}"
        )
    ratio = totals["svd"] / totals["concatenative"]
    print(f"svd runs at {ratio:.1%} of the concatenative budget\n")


def quality_table() -> None:
    frame = synth_generate(days=90, seed=11)
    years = [int(str(frame.timestamps[i].astype("datetime64[Y]"))) for i in (0, -1)]
    frame = derive_calendar_views(frame, synth_region(years[0], years[1]))
    lag_set = LagSet().capped(48)
    tc = TrainConfig(
        epochs=6, batch_size=64, lr0=0.003, seed=0,
        split=SplitSpec(test_hours=240, val_hours=240, max_train_hours=1200),
        val_stride=12,
    )
    print("six quick epochs on 90 synthetic days, 6 hour horizon:")
    print(f"{'method':>14s} {'params':>8s} {'best val mape':>14s}")
    for method in METHODS:
        config = ModelConfig(
            method=method, d=None if method == "svd" else 8,
            heads=2, encoder_layers=1, decoder_layers=1, horizon=6,
        )
        result = train(frame, config, tc, lag_set=lag_set)
        print(
            f"{method:>14s} {result.model.n_params():>8d} "
            f"{result.best_val:>13.3f}%"
        )


if __name__ == "__main__":
    budget_table()
    quality_table()
