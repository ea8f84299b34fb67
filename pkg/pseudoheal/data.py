"""
data.py

This module handles datasets: volume preprocessing, slice labelling, the
intensity histogram check, subject-level splits and the on-disk format.

On disk a dataset is a directory with `manifest.json` plus one raw
little-endian float32 file per image and one uint8 file per mask, row-major
and headerless; shapes live in the manifest.

Functions:
- preprocess_volume: Percentile clip, rescale, slice selection and crop.
- select_slices / center_crop: Slice window and crop shared by images and masks.
- label_slice: Healthy iff the mask is empty.
- intensity_histogram / js_divergence / histogram_check: Histogram sanity check.
- assign_splits / build_pools: Subject-level cross validation pools.
- build_phantom_datasets / prepare_volumes: Dataset creation for the CLI.
- save_dataset / load_dataset / load_datasets: Lossless on-disk round trip.
"""

import json
import logging
import math

from pathlib import Path

import numpy as np
from pydantic import ValidationError as PydanticValidationError
from scipy.spatial.distance import jensenshannon

from config import Config
from .errors import DataError, ValidationError
from .models.sample import Dataset, Label, PhantomSample
from .phantom import generate_phantom
from .schemas.manifest import Manifest, ManifestEntry

logger = logging.getLogger(__name__)

HEALTHY_OFFSET = 100_000
MASK_POOL_OFFSET = 200_000
DEFORMED_OFFSET = 300_000


def percentile_value(volume, percentile):
    """
    Returns the order statistic at index ceil(p * n) - 1 of the sorted volume.
    """
    flat = np.sort(np.asarray(volume, dtype=np.float64).ravel())
    index = max(math.ceil(percentile * flat.size) - 1, 0)
    return float(flat[index])


def center_crop(image, size):
    """
    Center-crops a 2D slice, zero padding any dimension smaller than `size`.
    """
    out = np.zeros(size, dtype=image.dtype)
    src, dst = [], []
    for have, want in zip(image.shape, size):
        if have >= want:
            start = (have - want) // 2
            src.append(slice(start, start + want))
            dst.append(slice(0, want))
        else:
            start = (want - have) // 2
            src.append(slice(0, have))
            dst.append(slice(start, start + have))
    out[tuple(dst)] = image[tuple(src)]
    return out


def select_slices(volume, cfg):
    """
    Keeps the middle `slice_window` axial slices (axis 0) and crops each.

    Returns:
        list: 2D arrays of shape cfg.crop.
    """
    depth = volume.shape[0]
    window = min(cfg.slice_window, depth)
    start = (depth - window) // 2
    return [center_crop(volume[i], tuple(cfg.crop)) for i in range(start, start + window)]


def preprocess_volume(volume, cfg):
    """
    Normalises a volume and extracts its slices.

    Intensities are clipped to [0, V], V being the cfg.clip_percentile order
    statistic of the volume, then divided by V.

    Args:
        volume (np.ndarray): (D, H, W) nonnegative intensities.
        cfg (PreprocessConfig): Preprocessing parameters.

    Returns:
        list: float32 slices in [0, 1].

    Raises:
        DataError: For empty, negative or all-zero volumes.
    """
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3 or volume.size == 0:
        raise DataError("invalid_volume", f"Expected a nonempty 3D volume, got shape {volume.shape}")
    if np.any(volume < 0):
        raise DataError("negative_intensity", "Volume contains negative intensities")
    v = percentile_value(volume, cfg.clip_percentile)
    if v <= 0:
        raise DataError("degenerate_volume", "degenerate volume: clipping intensity is 0")
    normalised = np.clip(volume, 0.0, v) / v
    return [s.astype(np.float32) for s in select_slices(normalised, cfg)]


def label_slice(mask):
    """
    Labels a slice from its pathology mask.

    Raises:
        ValidationError: If the mask holds values other than 0 and 1.
    """
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("non_binary_mask", "Pathology mask must be binary")
    return Label.HEALTHY if mask.sum() == 0 else Label.PATHOLOGICAL


def intensity_histogram(images, bins=64):
    """Counts intensities of a stack of slices in uniform bins over [0, 1]."""
    counts, _ = np.histogram(np.asarray(images).ravel(), bins=bins, range=(0.0, 1.0))
    return counts


def js_divergence(hist_a, hist_b):
    """
    Jensen-Shannon divergence of two histograms with log base 2, in [0, 1].

    Raises:
        DataError: On unequal bin counts or a histogram without mass.
    """
    a = np.asarray(hist_a, dtype=np.float64)
    b = np.asarray(hist_b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("bin_mismatch", f"Histograms have {a.size} and {b.size} bins")
    if a.sum() <= 0 or b.sum() <= 0:
        raise DataError("empty_histogram", "Histogram has zero total mass")
    return float(jensenshannon(a, b, base=2) ** 2)


def histogram_check(dataset_a, dataset_b, bins=64, threshold=None):
    """
    Compares intensity distributions of two pools and warns on a mismatch.

    Returns:
        float: The JS divergence.
    """
    threshold = Config.HISTOGRAM_WARN_THRESHOLD if threshold is None else threshold
    value = js_divergence(intensity_histogram(dataset_a.images(), bins),
                          intensity_histogram(dataset_b.images(), bins))
    if value > threshold:
        logger.warning("Intensity histograms of %r and %r diverge: JSD=%.4f", dataset_a, dataset_b, value)
    else:
        logger.info("Histogram check %r vs %r: JSD=%.4f", dataset_a, dataset_b, value)
    return value


def assign_splits(subject_ids, split_cfg, reserve_mask_pool=False):
    """
    Assigns subjects to splits with a k-fold rotation.

    The shuffled subjects are cut into `n_folds` chunks; chunk `fold` is the test
    split, the first `val_fraction` of the remaining subjects is validation and
    the rest is training. With `reserve_mask_pool`, a `mask_pool_fraction` of
    the non-test subjects is set aside under the key 'mask'.

    Returns:
        dict: subject_id -> 'train' | 'val' | 'test' | 'mask'.
    """
    subjects = np.array(sorted(set(int(s) for s in subject_ids)))
    rng = np.random.default_rng(split_cfg.seed)
    subjects = subjects[rng.permutation(len(subjects))]
    chunks = np.array_split(subjects, split_cfg.n_folds)
    test = chunks[split_cfg.fold]
    rest = np.concatenate([c for i, c in enumerate(chunks) if i != split_cfg.fold])

    n_mask = int(round(split_cfg.mask_pool_fraction * len(rest))) if reserve_mask_pool else 0
    n_val = int(round(split_cfg.val_fraction * len(rest)))
    assignment = {int(s): 'test' for s in test}
    assignment.update({int(s): 'mask' for s in rest[:n_mask]})
    assignment.update({int(s): 'val' for s in rest[n_mask:n_mask + n_val]})
    assignment.update({int(s): 'train' for s in rest[n_mask + n_val:]})
    return assignment


def build_pools(samples, assignment, healthy_tag='healthy_pool'):
    """
    Groups samples into datasets by split and label.

    Subjects assigned to 'mask' contribute their pathological slices to the
    training mask pool only.

    Returns:
        dict: (split, domain_tag) -> Dataset.
    """
    groups = {}
    for sample in samples:
        split = assignment[int(sample.subject_id)]
        if split == 'mask':
            if sample.label is Label.PATHOLOGICAL:
                groups.setdefault(('train', 'mask_pool'), []).append(sample)
            continue
        tag = 'pathological_pool' if sample.label is Label.PATHOLOGICAL else healthy_tag
        groups.setdefault((split, tag), []).append(sample)
    return {key: Dataset(tuple(items), key[1], key[0]) for key, items in groups.items()}


def _merge(pools, more):
    for key, dataset in more.items():
        if key in pools:
            dataset = Dataset(pools[key].samples + dataset.samples, key[1], key[0])
        pools[key] = dataset
    return pools


def build_phantom_datasets(config):
    """
    Generates every pool an experiment needs from phantoms.

    The main set supplies pathological slices; its lesion-free slices join the
    healthy pool when undeformed and the deformed pool otherwise. Undeformed
    healthy subjects are generated separately when the main set is deformed.
    The mask pool and the extra deformed healthy slices come from subjects that
    appear nowhere else.

    Args:
        config (ExperimentConfig): Experiment document.

    Returns:
        dict: (split, domain_tag) -> Dataset.
    """
    spec = config.phantom
    main = generate_phantom(spec, config.n_subjects)
    deformed_main = spec.deform and spec.deform_magnitude > 0
    pools = build_pools(main, assign_splits([s.subject_id for s in main], config.split),
                        healthy_tag='deformed_pool' if deformed_main else 'healthy_pool')

    if deformed_main:
        n_healthy = max(sum(s.label is Label.HEALTHY for s in main), config.n_subjects // 2)
        healthy_spec = spec.model_copy(update={'deform': False, 'lesion_probability': 0.0,
                                               'subject_offset': HEALTHY_OFFSET})
        healthy = generate_phantom(healthy_spec, n_healthy)
        _merge(pools, build_pools(healthy, assign_splits([s.subject_id for s in healthy], config.split)))

    mask_spec = spec.model_copy(update={'lesion_probability': 1.0, 'subject_offset': MASK_POOL_OFFSET})
    mask_pool = generate_phantom(mask_spec, config.n_mask_pool)
    pools[('train', 'mask_pool')] = Dataset(tuple(mask_pool), 'mask_pool', 'train')

    if config.n_deformed > 0:
        deformed_spec = spec.model_copy(update={
            'deform': True, 'lesion_probability': 0.0, 'subject_offset': DEFORMED_OFFSET,
            'deform_magnitude': max(spec.deform_magnitude, 1.0)})
        deformed = generate_phantom(deformed_spec, config.n_deformed)
        _merge(pools, build_pools(deformed, assign_splits([s.subject_id for s in deformed], config.split),
                                  healthy_tag='deformed_pool'))

    for key in sorted(pools):
        logger.info("Pool %s/%s: %d slices", key[0], key[1], len(pools[key]))
    return pools


def load_volume_dir(path):
    """
    Reads externally prepared volumes.

    Every `<name>.npy` is a (D, H, W) volume; an optional `<name>_mask.npy`
    holds its pathology annotation. Volumes without a mask are treated as
    healthy subjects.

    Returns:
        list: (name, volume, mask or None) tuples sorted by name.
    """
    path = Path(path)
    if not path.is_dir():
        raise DataError("volume_dir_missing", f"Volume directory {path} does not exist")
    volumes = []
    for file in sorted(path.glob('*.npy')):
        if file.stem.endswith('_mask'):
            continue
        mask_file = file.with_name(f'{file.stem}_mask.npy')
        mask = np.load(mask_file) if mask_file.exists() else None
        volumes.append((file.stem, np.load(file), mask))
    if not volumes:
        raise DataError("no_volumes", f"No .npy volumes found in {path}")
    return volumes


def prepare_volumes(path, config):
    """
    Preprocesses external volumes into pools.

    Returns:
        dict: (split, domain_tag) -> Dataset.
    """
    samples = []
    for subject_id, (name, volume, mask_volume) in enumerate(load_volume_dir(path)):
        slices = preprocess_volume(volume, config.preprocess)
        if mask_volume is None:
            masks = [np.zeros_like(s, dtype=np.uint8) for s in slices]
        else:
            if mask_volume.shape != volume.shape:
                raise DataError("mask_shape", f"{name}: mask shape {mask_volume.shape} != {volume.shape}")
            masks = [(m > 0).astype(np.uint8) for m in select_slices(mask_volume, config.preprocess)]
        for image, mask in zip(slices, masks):
            samples.append(PhantomSample(image=image, mask=mask, label=label_slice(mask), subject_id=subject_id))
        logger.info("Prepared %s: %d slices", name, len(slices))
    assignment = assign_splits([s.subject_id for s in samples], config.split, reserve_mask_pool=True)
    return build_pools(samples, assignment)


def save_dataset(path, datasets):
    """
    Writes one or more datasets into a dataset directory.

    Args:
        path (str | Path): Target directory, created if needed.
        datasets (Dataset | iterable | dict): Datasets to write.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    elif isinstance(datasets, dict):
        datasets = [datasets[k] for k in sorted(datasets)]
    path = Path(path)
    (path / 'images').mkdir(parents=True, exist_ok=True)
    (path / 'masks').mkdir(parents=True, exist_ok=True)

    entries = []
    for dataset in datasets:
        for sample in dataset.samples:
            index = len(entries)
            image_file = f'images/{index:06d}.f32'
            mask_file = f'masks/{index:06d}.u8'
            np.ascontiguousarray(sample.image, dtype='<f4').tofile(path / image_file)
            np.ascontiguousarray(sample.mask, dtype=np.uint8).tofile(path / mask_file)
            entries.append(ManifestEntry(
                id=index, subject_id=int(sample.subject_id), shape=tuple(sample.image.shape),
                label=sample.label.value, deformed=bool(sample.deformed), split=dataset.split,
                pool=dataset.domain_tag, image_file=image_file, mask_file=mask_file))

    # payloads of an earlier, larger dataset in the same directory
    for stale in [*(path / 'images').glob('*.f32'), *(path / 'masks').glob('*.u8')]:
        if stale.stem.isdigit() and int(stale.stem) >= len(entries):
            stale.unlink()

    manifest = Manifest(count=len(entries), samples=entries)
    (path / 'manifest.json').write_text(manifest.model_dump_json(indent=2))
    logger.info("Saved %d slices to %s", len(entries), path)


def _read_payload(file, dtype, shape):
    if not file.is_file():
        raise DataError("missing_payload", f"Payload file {file} is missing")
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    actual = file.stat().st_size
    if actual != expected:
        raise DataError("corrupt_payload",
                        f"{file} holds {actual} bytes, manifest shape {tuple(shape)} needs {expected}")
    return np.fromfile(file, dtype=dtype).reshape(shape)


def _read_manifest(path):
    manifest_file = path / 'manifest.json'
    if not manifest_file.is_file():
        raise DataError("manifest_missing", f"No manifest.json in {path}")
    try:
        manifest = Manifest.model_validate_json(manifest_file.read_text())
    except PydanticValidationError as e:
        raise DataError("corrupt_manifest", f"{manifest_file}: {e.errors()[0]['msg']}") from e
    if manifest.count != len(manifest.samples):
        raise DataError("count_mismatch",
                        f"Manifest count {manifest.count} != {len(manifest.samples)} listed samples")
    present = len(list((path / 'images').glob('*.f32'))) if (path / 'images').is_dir() else 0
    if present != manifest.count:
        raise DataError("count_mismatch", f"Manifest lists {manifest.count} samples, {present} image files present")
    return manifest


def load_datasets(path):
    """
    Reads every dataset of a dataset directory.

    Returns:
        dict: (split, domain_tag) -> Dataset.

    Raises:
        DataError: On a missing or corrupt manifest, missing or truncated payloads,
            or a label that contradicts its mask.
    """
    path = Path(path)
    manifest = _read_manifest(path)
    groups = {}
    for entry in manifest.samples:
        image = _read_payload(path / entry.image_file, '<f4', entry.shape).astype(np.float32)
        mask = _read_payload(path / entry.mask_file, np.uint8, entry.shape)
        if label_slice(mask).value != entry.label:
            raise DataError("label_mismatch", f"Sample {entry.id}: label {entry.label} contradicts its mask")
        sample = PhantomSample(image=image, mask=mask, label=entry.label,
                               subject_id=entry.subject_id, deformed=entry.deformed)
        groups.setdefault((entry.split, entry.pool), []).append(sample)
    return {key: Dataset(tuple(items), key[1], key[0]) for key, items in groups.items()}


def load_dataset(path, split=None, domain_tag=None):
    """
    Reads one dataset from a dataset directory.

    Without `split` and `domain_tag` the directory must hold exactly one dataset.
    A requested pool that the directory does not hold is returned empty.
    """
    datasets = load_datasets(path)
    if split is None and domain_tag is None:
        if len(datasets) != 1:
            raise DataError("ambiguous_dataset", f"{path} holds {len(datasets)} datasets, name one")
        return next(iter(datasets.values()))
    return datasets.get((split, domain_tag), Dataset((), domain_tag, split))
