from pathlib import Path

from apps.core.commands import PipelineCommand
from apps.datasets.storage import load_dataset
from apps.evaluation.experiments import spike_activity
from apps.evaluation.reports import write_activity
from apps.snn.checkpoints import load_checkpoint, save_checkpoint
from apps.snn.runtime import prune


class Command(PipelineCommand):
    help = "Remove sparsely spiking neurons from a trained network"
    command_name = "prune"
    default_out = "runs/prune"
    input_options = ("params", "data")
    defaults = {"params": None, "data": None, "split": None, "threshold": 0.005, "quantized": False}

    def add_command_arguments(self, parser):
        parser.add_argument("--params", default=None, help="Checkpoint to prune")
        parser.add_argument("--data", default=None, help="Calibration data for measuring activity")
        parser.add_argument("--split", default=None)
        parser.add_argument(
            "--threshold", type=float, default=None, help="Minimum firing fraction kept, e.g. 0.005"
        )
        parser.add_argument("--quantized", action="store_true", default=None)

    def run_pipeline(self, opts, out_dir):
        params, _ = load_checkpoint(Path(opts["params"]))
        activity = spike_activity(params, load_dataset(opts["data"], opts["split"]), opts["quantized"])
        pruned = prune(params, activity.rates, opts["threshold"])

        before = [params.n_enc, params.n_hid]
        after = [pruned.n_enc, pruned.n_hid]
        checkpoint = save_checkpoint(
            pruned,
            out_dir / "pruned.npz",
            extra={
                "pruned_from": before,
                "prune_threshold": opts["threshold"],
                "source_checkpoint": str(opts["params"]),
            },
        )
        outputs = [checkpoint, write_activity(activity, out_dir / "activity.csv")]
        return outputs, {
            "threshold": opts["threshold"],
            "neurons_before": before,
            "neurons_after": after,
            "pruned_fraction": activity.pruned_fraction(opts["threshold"]),
            "parameters_before": sum(params.parameter_count()),
            "parameters_after": sum(pruned.parameter_count()),
        }
