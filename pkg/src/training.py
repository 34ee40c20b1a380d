"""
Training Loop

Mini-batch adaptive-moment training of HydroNet on normalized windows with
early stopping on the validation loss. The best-validation parameters are
returned as a Checkpoint together with the per-epoch history.
"""

import logging
import time
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import trange

from .checkpoint import Checkpoint
from .config import HydroNetConfig, TrainConfig
from .dataset import NormStats, WindowSet, fit_edge_stats
from .errors import EmptyDataset, NonFiniteGradient, ShapeMismatch
from .graph import PipeGraph
from .hydronet import HydroNet
from .optimizer import AdamOptimizer
from .tensor import Tape, Tensor, absolute, as_tensor, backward, reduce_mean, square

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "best", "seconds"]


def loss(pred, target, kind: str = "mae") -> Tensor:
    """Mean absolute (or squared) error over every element."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    if kind == "mae":
        return reduce_mean(absolute(diff))
    if kind == "mse":
        return reduce_mean(square(diff))
    raise ValueError(f"unknown loss {kind!r}")


def validation_loss(model: HydroNet, windows: WindowSet, kind: str = "mae",
                    batch_size: int = 32) -> float:
    """Loss over a full window set, untaped, in fixed batch order."""
    if len(windows) == 0:
        raise EmptyDataset("validation window set is empty")
    total = 0.0
    for start in range(0, len(windows), batch_size):
        pred = model.predict(windows.inputs[start:start + batch_size], batch_size=batch_size)
        diff = pred - windows.targets[start:start + batch_size]
        total += float(np.abs(diff).sum() if kind == "mae" else (diff * diff).sum())
    return total / windows.targets.size


def train(graph: PipeGraph, train_windows: WindowSet, val_windows: WindowSet,
          model_config: HydroNetConfig, train_config: TrainConfig,
          norm_stats: NormStats, edge_stats: Optional[NormStats] = None
          ) -> Tuple[Checkpoint, pd.DataFrame]:
    """
    Fit HydroNet with early stopping.

    Parameters:
    -----------
    graph : PipeGraph
    train_windows, val_windows : WindowSet
        Normalized windows built per split
    model_config : HydroNetConfig
        ``seed`` drives initialization
    train_config : TrainConfig
        ``seed`` + epoch index drives the per-epoch shuffle
    norm_stats : NormStats
        Training-split statistics, stored in the checkpoint
    edge_stats : NormStats, optional
        Edge-attribute statistics (fitted on ``graph`` when omitted)

    Returns:
    --------
    checkpoint : Checkpoint
        Parameters of the lowest-validation-loss epoch
    history : pd.DataFrame
        One row per completed epoch
    """
    if len(train_windows) == 0:
        raise EmptyDataset("training window set is empty")
    if len(val_windows) == 0:
        raise EmptyDataset("validation window set is empty")

    tc = train_config
    model = HydroNet(model_config, graph, edge_stats=edge_stats or fit_edge_stats(graph))
    optimizer = AdamOptimizer(model.params, tc)
    logger.info("%s", model.summary())

    base_seed = tc.seed if tc.seed is not None else 0
    n_train = len(train_windows)
    best_loss, best_epoch, best_state = np.inf, 0, model.state_dict()
    reference, stale = np.inf, 0
    history = []

    epochs = trange(1, tc.max_epochs + 1, desc="train", unit="epoch", disable=not tc.progress)
    for epoch in epochs:
        started = time.perf_counter()
        order = np.random.default_rng(base_seed + epoch).permutation(n_train)
        running = 0.0
        for start in range(0, n_train, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            optimizer.zero_grad()
            with Tape():
                batch_loss = loss(model(train_windows.inputs[idx]), train_windows.targets[idx], tc.loss)
                backward(batch_loss)
            optimizer.step()
            running += batch_loss.item() * len(idx)
        train_loss = running / n_train

        val_loss = validation_loss(model, val_windows, tc.loss, tc.batch_size)
        if not np.isfinite(val_loss):
            raise NonFiniteGradient(f"validation loss became {val_loss} at epoch {epoch}")

        if val_loss < best_loss:
            best_loss, best_epoch, best_state = val_loss, epoch, model.state_dict()
        if val_loss < reference - tc.min_delta:
            reference, stale = val_loss, 0
        else:
            stale += 1

        seconds = time.perf_counter() - started
        history.append([epoch, train_loss, val_loss, epoch == best_epoch, seconds])
        epochs.set_postfix(train=f"{train_loss:.4f}", val=f"{val_loss:.4f}")
        logger.info("epoch %d train=%.6f val=%.6f best=%.6f (epoch %d) %.1fs",
                    epoch, train_loss, val_loss, best_loss, best_epoch, seconds)
        if stale >= tc.patience:
            logger.info("early stop at epoch %d: no improvement > %g for %d epochs",
                        epoch, tc.min_delta, tc.patience)
            break

    model.load_state_dict(best_state)
    checkpoint = Checkpoint(
        model_config=model_config,
        train_config=train_config,
        params=best_state,
        norm_stats=norm_stats,
        edge_stats=model.edge_stats,
        graph_fingerprint=graph.fingerprint(),
        best_val_loss=float(best_loss),
        epoch=best_epoch,
    )
    return checkpoint, pd.DataFrame(history, columns=HISTORY_COLUMNS)
