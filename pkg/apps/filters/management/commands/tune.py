from dataclasses import asdict

import pandas as pd

from apps.core.commands import PipelineCommand
from apps.datasets.storage import load_dataset
from apps.filters.algorithms import default_params
from apps.filters.params import write_params
from apps.filters.pso import PsoConfig
from apps.filters.tuning import MAPPINGS, dataset_mse, get_mapping, tune_filter


class Command(PipelineCommand):
    help = "Tune a classical filter with particle swarm optimization"
    command_name = "tune"
    default_out = "runs/tune"
    input_options = ("data",)
    defaults = {
        "filter": "complementary",
        "data": None,
        "split": None,
        "particles": 100,
        "iters": 300,
        "w": 0.8,
        "c1": 0.15,
        "c2": 0.05,
    }

    def add_command_arguments(self, parser):
        parser.add_argument("--filter", choices=sorted(MAPPINGS), default=None)
        parser.add_argument("--data", default=None, help="Dataset CSV or directory")
        parser.add_argument("--split", default=None, help="Manifest split to tune on, e.g. train")
        parser.add_argument("--particles", type=int, default=None)
        parser.add_argument("--iters", type=int, default=None, help="Maximum PSO iterations")
        parser.add_argument("--w", type=float, default=None, help="Inertia weight")
        parser.add_argument("--c1", type=float, default=None, help="Cognitive weight")
        parser.add_argument("--c2", type=float, default=None, help="Social weight")

    def run_pipeline(self, opts, out_dir):
        kind = opts["filter"]
        mapping = get_mapping(kind)
        sequences = load_dataset(opts["data"], opts["split"])
        cfg = PsoConfig(
            w=opts["w"],
            c1=opts["c1"],
            c2=opts["c2"],
            n_particles=opts["particles"],
            max_iters=opts["iters"],
        )
        tuned = tune_filter(kind, sequences, cfg, seed=opts["seed"])

        baseline = default_params(mapping.filter_kind)
        if kind == "adaptive":
            baseline = mapping.decode(mapping.encode(baseline))
        default_cost = float(dataset_mse(kind, [baseline], sequences)[0])

        params_path = write_params(out_dir / f"{kind}.txt", kind, tuned.params)
        report_path = out_dir / f"tuning_{kind}.csv"
        pd.DataFrame(tuned.report_rows()).to_csv(report_path, index=False, lineterminator="\n")

        results = {
            "filter": kind,
            "sequences": len(sequences),
            "cost": tuned.cost,
            "default_cost": default_cost,
            "iterations": tuned.pso.iterations,
            "stagnated": tuned.pso.stagnated,
            "params": asdict(tuned.params),
        }
        return [params_path, report_path], results
