"""
checkpoint.py

This module persists ModelBundles.

A checkpoint is a single torch archive holding every network's named parameter
tensors, the architecture and training config as JSON, the step and epoch
counters and, for resumable checkpoints, the optimiser states.

Functions:
- save_bundle: Writes a bundle, optionally with optimiser and counter state.
- load_bundle: Rebuilds the networks from the config snapshot and loads weights.
- load_training_state: Reads the resumable part of a checkpoint.
- bundle_digest: sha256 over the named parameter tensors.
"""

import hashlib
import json
import logging

from pathlib import Path

import torch

from .errors import DataError
from .nets import build_bundle
from .schemas.train import TrainConfig

logger = logging.getLogger(__name__)


def save_bundle(bundle, path, optimizers=None, counters=None):
    """
    Writes a bundle to a single archive.

    Args:
        bundle (ModelBundle): Networks and state.
        path (str | Path): Archive path; parent directories are created.
        optimizers (dict | None): name -> torch optimizer, for resuming.
        counters (dict | None): Training counters, for resuming.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    archive = {
        'networks': {name: net.state_dict() for name, net in bundle.networks().items()},
        'config': json.dumps(bundle.config, sort_keys=True),
        'step': bundle.step,
        'epoch': bundle.epoch,
        'optimizers': {name: opt.state_dict() for name, opt in (optimizers or {}).items()},
        'counters': dict(counters or {}),
    }
    tmp = path.with_suffix(path.suffix + '.tmp')
    torch.save(archive, tmp)
    tmp.replace(path)
    logger.debug("Saved checkpoint %s (step %d)", path, bundle.step)


def _read(path):
    path = Path(path)
    if not path.is_file():
        raise DataError("checkpoint_missing", f"Checkpoint {path} does not exist")
    try:
        return torch.load(path, map_location='cpu', weights_only=False)
    except Exception as e:
        raise DataError("corrupt_checkpoint", f"Checkpoint {path} cannot be read: {e}") from e


def load_bundle(path):
    """
    Rebuilds a bundle from a checkpoint.

    Returns:
        ModelBundle: Networks in eval mode with the stored step, epoch and config.
    """
    archive = _read(path)
    config = json.loads(archive['config'])
    bundle = build_bundle(TrainConfig.model_validate(config['train']), tuple(config['image_size']))
    nets = bundle.networks()
    if set(nets) != set(archive['networks']):
        raise DataError("checkpoint_mismatch",
                        f"Checkpoint networks {sorted(archive['networks'])} != config networks {sorted(nets)}")
    for name, net in nets.items():
        net.load_state_dict(archive['networks'][name])
    bundle.step = archive['step']
    bundle.epoch = archive['epoch']
    return bundle.eval()


def load_training_state(path, bundle, optimizers):
    """
    Restores networks, optimisers and counters in place for resuming.

    Returns:
        dict: The stored training counters.
    """
    archive = _read(path)
    for name, net in bundle.networks().items():
        net.load_state_dict(archive['networks'][name])
    for name, optimizer in optimizers.items():
        if name in archive['optimizers']:
            optimizer.load_state_dict(archive['optimizers'][name])
    bundle.step = archive['step']
    bundle.epoch = archive['epoch']
    return archive['counters']


def bundle_digest(bundle):
    """
    Hashes every named parameter and buffer of a bundle.

    Returns:
        str: Hex sha256 digest, identical for identical weights.
    """
    digest = hashlib.sha256()
    for name, net in sorted(bundle.networks().items()):
        for key, tensor in sorted(net.state_dict().items()):
            digest.update(f'{name}.{key}'.encode())
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
