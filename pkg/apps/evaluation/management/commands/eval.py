from pathlib import Path

from apps.core.commands import PipelineCommand
from apps.core.exceptions import ConfigurationError, TaskFailedError
from apps.datasets.storage import dataset_files
from apps.evaluation.estimators import SNN_KIND, estimator_kinds, load_estimator
from apps.evaluation.metrics import EvalReport
from apps.evaluation.reports import write_comparison, write_reports
from apps.evaluation.tasks import evaluate_sequence_task
from apps.snn.checkpoints import load_checkpoint

INITIAL_MODES = {"known": (True,), "unknown": (False,), "both": (False, True)}


class Command(PipelineCommand):
    help = "Evaluate an estimator on a dataset and write per-sequence and summary error tables"
    command_name = "eval"
    default_out = "runs/eval"
    input_options = ("data",)
    defaults = {
        "estimator": "complementary",
        "params": None,
        "data": None,
        "split": None,
        "initial": "unknown",
        "quantized": False,
        "partition": "test",
        "save_estimates": False,
    }

    def add_command_arguments(self, parser):
        parser.add_argument("--estimator", choices=estimator_kinds(), default=None)
        parser.add_argument("--params", default=None, help="Checkpoint (snn) or filter parameter file")
        parser.add_argument("--data", default=None, help="Dataset CSV or directory")
        parser.add_argument("--split", default=None, help="Manifest split to evaluate, e.g. test")
        parser.add_argument("--initial", choices=sorted(INITIAL_MODES), default=None)
        parser.add_argument("--quantized", action="store_true", default=None, help="Run the SNN on the hardware grid")
        parser.add_argument("--partition", default=None, help="Partition label written into the report")
        parser.add_argument("--save-estimates", action="store_true", default=None)

    def run_pipeline(self, opts, out_dir):
        kind = opts["estimator"]
        if kind == SNN_KIND and opts["initial"] != "unknown":
            raise ConfigurationError("The snn estimator always starts from rest; use --initial unknown")
        params_path = Path(opts["params"]) if opts["params"] else None
        # fail fast on a missing or corrupt parameter file before fanning out
        estimator = load_estimator(kind, params_path, quantized=opts["quantized"])
        estimates_dir = None
        if opts["save_estimates"]:
            estimates_dir = out_dir / "estimates"
            estimates_dir.mkdir(exist_ok=True)

        pending = [
            evaluate_sequence_task(
                kind=kind,
                data_path=str(path),
                params_path=str(params_path) if params_path else None,
                known_initial=known,
                quantized=opts["quantized"],
                estimates_dir=str(estimates_dir) if estimates_dir else None,
                partition=opts["partition"],
            )
            for path, _ in dataset_files(opts["data"], opts["split"])
            for known in INITIAL_MODES[opts["initial"]]
        ]
        rows = [result.get(blocking=True) for result in pending]
        for row in rows:
            if row.get("failed"):
                raise TaskFailedError(row["message"], row["exit_code"])
        estimate_files = [row.pop("estimates_file") for row in rows if "estimates_file" in row]
        for row in rows:
            row.pop("initial", None)
        reports = [EvalReport(**row) for row in rows]

        outputs = [
            write_reports(reports, out_dir / "sequences.csv"),
            write_comparison(reports, out_dir / "comparison.csv"),
            *estimate_files,
        ]
        mean_error = sum(r.mean * r.samples for r in reports) / sum(r.samples for r in reports)
        results = {"estimator": kind, "sequences": len(reports), "mean_error_deg": mean_error}
        if kind == SNN_KIND:
            _, metadata = load_checkpoint(params_path)
            results["neurons"] = [estimator.params.n_enc, estimator.params.n_hid]
            if "pruned_from" in metadata:
                results["neurons_before_pruning"] = metadata["pruned_from"]
        return outputs, results
