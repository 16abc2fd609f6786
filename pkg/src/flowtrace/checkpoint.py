"""Versioned binary checkpoints (npz): every trainable array, both Adam
states, and the iteration counter. Loads are bit-exact; a version mismatch is
a hard error.
"""

import numpy as np

from flowtrace import nn
from flowtrace.errors import CheckpointVersionError

FORMAT_VERSION = 1


def save_checkpoint(path, state) -> None:
    """Serialize a TrainState's trainables + optimizer state."""
    arrays = {
        "format_version": np.array(FORMAT_VERSION, dtype=np.int64),
        "iteration": np.array(state.iteration, dtype=np.int64),
    }
    arrays.update({f"p.{k}": v for k, v in state.model.flow_params().items()})
    arrays.update({f"p.{k}": v for k, v in state.model.scene_params().items()})
    arrays.update(state.adam_flow.state_arrays("adam_flow"))
    if state.adam_scene is not None:
        arrays.update(state.adam_scene.state_arrays("adam_scene"))
    np.savez(path, **arrays)


def load_checkpoint(path, state) -> None:
    """Restore parameters and optimizer state into an initialized TrainState
    built from the same scene configuration."""
    with np.load(path) as zf:
        arrays = {k: zf[k] for k in zf.files}
    version = int(arrays.pop("format_version"))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {version}, this build expects {FORMAT_VERSION}"
        )
    state.iteration = int(arrays.pop("iteration"))
    params = {k[2:]: np.array(v, dtype=np.float64)
              for k, v in arrays.items() if k.startswith("p.")}
    state.model.load_params(params)
    # rebind optimizers to the freshly loaded arrays before restoring moments
    state.adam_flow = nn.Adam(state.model.flow_params(), lr=state.adam_flow.lr)
    state.adam_flow.load_state("adam_flow", arrays)
    scene_params = state.model.scene_params()
    if scene_params and "adam_scene.step" in arrays:
        lr = state.adam_scene.lr if state.adam_scene is not None else 1e-3
        state.adam_scene = nn.Adam(scene_params, lr=lr)
        state.adam_scene.load_state("adam_scene", arrays)
