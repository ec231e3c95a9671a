from dataclasses import asdict

import pandas as pd

from apps.core.commands import PipelineCommand
from apps.core.domain import NormalizationSpec
from apps.datasets.storage import load_splits
from apps.snn.checkpoints import save_checkpoint
from apps.snn.quantization import hardware_integers
from apps.snn.runtime import NetworkParams
from apps.snn.training import OptimizerConfig, SurrogateSpec, TrainConfig, train, window_dataset


class Command(PipelineCommand):
    help = "Train the Att-SNN pitch/roll estimator with quantization in the loop"
    command_name = "train"
    default_out = "runs/train"
    input_options = ("data",)
    defaults = {
        "data": None,
        "n_enc": 100,
        "n_hid": 100,
        "window": 2000,
        "threshold": 0.5,
        "max_epochs": 1000,
        "batch_size": 40,
        "batches": 15,
        "lr": 0.005,
        "lookahead_alpha": 0.5,
        "lookahead_k": 6,
        "surrogate_width": 20.0,
        "stop_window": 20,
        "stop_ratio": 1.10,
        "stop_patience": 50,
        "no_quantize": False,
        "fit_normalization": False,
        "dtype": "float32",
    }

    def add_command_arguments(self, parser):
        parser.add_argument("--data", default=None, help="Dataset directory (manifest splits or 70/20/10)")
        parser.add_argument("--n-enc", type=int, default=None, help="Encoding neurons")
        parser.add_argument("--n-hid", type=int, default=None, help="Hidden neurons")
        parser.add_argument("--window", type=int, default=None, help="Training sequence length in samples")
        parser.add_argument("--threshold", type=float, default=None, help="LIF spike threshold")
        parser.add_argument("--max-epochs", type=int, default=None)
        parser.add_argument("--batch-size", type=int, default=None)
        parser.add_argument("--batches", type=int, default=None, help="Batches per epoch")
        parser.add_argument("--lr", type=float, default=None, help="Adam learning rate")
        parser.add_argument("--lookahead-alpha", type=float, default=None)
        parser.add_argument("--lookahead-k", type=int, default=None)
        parser.add_argument("--surrogate-width", type=float, default=None)
        parser.add_argument("--stop-window", type=int, default=None)
        parser.add_argument("--stop-ratio", type=float, default=None)
        parser.add_argument("--stop-patience", type=int, default=None)
        parser.add_argument("--no-quantize", action="store_true", default=None, help="Train in float only")
        parser.add_argument(
            "--fit-normalization", action="store_true", default=None, help="Normalize by data range, not sensor full scale"
        )
        parser.add_argument("--dtype", choices=("float32", "float64"), default=None)

    def run_pipeline(self, opts, out_dir):
        splits = load_splits(opts["data"], opts["seed"])
        normalization = NormalizationSpec.fit(splits["train"]) if opts["fit_normalization"] else None
        params = NetworkParams.initialize(
            opts["n_enc"],
            opts["n_hid"],
            seed=opts["seed"],
            threshold=opts["threshold"],
            normalization=normalization,
        )
        cfg = TrainConfig(
            batches_per_epoch=opts["batches"],
            batch_size=opts["batch_size"],
            stop_window=opts["stop_window"],
            stop_ratio=opts["stop_ratio"],
            stop_patience=opts["stop_patience"],
            max_epochs=opts["max_epochs"],
            quantize_in_loop=not opts["no_quantize"],
            dtype=opts["dtype"],
        )
        opt = OptimizerConfig(
            learning_rate=opts["lr"],
            lookahead_alpha=opts["lookahead_alpha"],
            lookahead_k=opts["lookahead_k"],
        )
        result = train(
            params,
            window_dataset(splits["train"], opts["window"]),
            window_dataset(splits["val"], opts["window"]),
            cfg,
            opt,
            SurrogateSpec(width=opts["surrogate_width"]),
            seed=opts["seed"],
        )

        if cfg.quantize_in_loop:
            hardware_integers(result.params)
        checkpoint = save_checkpoint(
            result.params,
            out_dir / "model.npz",
            extra={"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss},
        )
        log_path = out_dir / "training_log.csv"
        pd.DataFrame([asdict(r) for r in result.history]).to_csv(log_path, index=False, lineterminator="\n")
        outputs = [checkpoint, log_path]
        if cfg.quantize_in_loop:
            # float masters behind the grid checkpoint
            masters = save_checkpoint(
                result.master_params, out_dir / "masters.npz", extra={"best_epoch": result.best_epoch}
            )
            outputs.append(masters)

        weights, neurons = result.params.parameter_count()
        history = result.history
        return outputs, {
            "epochs": history[-1].epoch,
            "best_epoch": result.best_epoch,
            "initial_val_loss": history[0].val_loss,
            "best_val_loss": result.best_val_loss,
            "weights": weights,
            "neuron_parameters": neurons,
            "quantized": result.params.quantized,
            "test_sequences": [seq.name for seq in splits["test"]],
        }
