"""
evaluation.py

This module scores pseudo-healthy synthesis and runs the diagnostic experiments.

Healthiness is computed as a ratio of batch means:

    h = 1 - mean_i N(judge(synth_i)) / mean_j N(judge(x_p_j))

where N counts judge pixels above the threshold. Per sample, h_i uses the same
denominator, so the mean of the per-sample values equals h.

Classes:
- JudgeSegmentor: Segmentor pre-trained on ground-truth masks, used to count lesion pixels.
- DecClassifier: Classifier of Canny edge maps, deformed vs deformation-free.

Functions:
- train_judge / train_dec_classifier: Train on the training split, fine-tune on validation.
- healthiness / identity / dec_score: Quantitative metrics.
- diff_map_segmentation / segmentor_dice: Unsupervised and learned segmentation quality.
- pseudo_disease / iterate_generator: Reconstructor and generator diagnostics.
- mask_shift_diagnostic / mask_permutation_diagnostic: Mask-conditioning checks.
- reconstruction_degradation: Information-hiding check.
- healthy_resynthesis: Identity of G on healthy inputs.
- evaluate_bundle / compare_reports: Full evaluation of a run and paired comparison.
- compare_with_reference: Paired comparisons of several variants with the full model.
- shift_columns: Zero-filled horizontal translation of a mask batch.
"""

import logging

from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from scipy import stats
from torch.utils.data import DataLoader, TensorDataset

from .errors import MetricError, ShapeError
from .losses import dice_loss
from .metrics import canny_edges, dice_score, iou_score, ms_ssim
from .models.report import MetricReport
from .nets import build_critic, build_segmentor
from .schemas.experiment import EvalOptions
from .training import to_batch

logger = logging.getLogger(__name__)

BATCH = 32


def _tensor(x):
    """(N, H, W) or (N, 1, H, W) array/tensor -> float32 (N, 1, H, W) tensor."""
    if not torch.is_tensor(x):
        x = torch.from_numpy(np.asarray(x, dtype=np.float32))
    x = x.detach().to(torch.float32)
    return x.unsqueeze(1) if x.dim() == 3 else x


def _numpy(x):
    return x.detach().cpu().numpy()[:, 0] if torch.is_tensor(x) else np.asarray(x)


@torch.no_grad()
def apply(net, x, m=None):
    """Runs a network over a batch in chunks without tracking gradients."""
    x = _tensor(x)
    m = _tensor(m) if m is not None else None
    outputs = []
    for start in range(0, x.shape[0], BATCH):
        chunk = x[start:start + BATCH]
        outputs.append(net(chunk) if m is None else net(chunk, m[start:start + BATCH]))
    return torch.cat(outputs) if outputs else x.clone()


def _fit(net, tensors, loss_fn, epochs, lr, seed, batch_size=8):
    if epochs == 0:
        return
    loader = DataLoader(TensorDataset(*tensors), batch_size=min(batch_size, len(tensors[0])), shuffle=True,
                        generator=torch.Generator().manual_seed(seed))
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    net.train()
    for epoch in range(epochs):
        total = 0.0
        for batch in loader:
            optimizer.zero_grad(set_to_none=True)
            loss = loss_fn(net, *batch)
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
        logger.debug("%s epoch %d loss=%.4f", type(net).__name__, epoch + 1, total / len(loader))
    net.eval()


@dataclass
class JudgeSegmentor:
    """
    Represents the pre-trained segmentor that counts lesion pixels.

    Attributes:
        net (callable): Maps (B, 1, H, W) images to soft masks.
        threshold (float): Binarisation threshold of N(.).
        trained (bool): False until fitted.
    """
    net: object
    threshold: float = 0.5
    trained: bool = False

    def segment(self, images):
        if not self.trained:
            raise MetricError("untrained_judge", "The judge segmentor has not been trained")
        return apply(self.net, images) > self.threshold

    def count(self, images):
        """Lesion pixels per image, as float64 (N,)."""
        return self.segment(images).flatten(1).sum(1).to(torch.float64).numpy()


@dataclass
class DecClassifier:
    """
    Represents the deformation classifier on Canny edge maps.

    Attributes:
        net (callable): Maps (B, 1, H, W) edge maps to logits of "deformation-free".
        opts (EvalOptions): Canny parameters.
        trained (bool): False until fitted.
    """
    net: object
    opts: EvalOptions
    trained: bool = False

    def edges(self, images):
        return canny_edges(_numpy(_tensor(images)), self.opts.canny_sigma, self.opts.canny_low,
                           self.opts.canny_high)

    def predict_proba(self, images):
        """Probability that each image is deformation-free, as float64 (N,)."""
        if not self.trained:
            raise MetricError("untrained_classifier", "The deformation classifier has not been trained")
        logits = apply(self.net, self.edges(images))
        return torch.sigmoid(logits.reshape(-1).to(torch.float64)).numpy()


def _judge_loss(net, x, m):
    return dice_loss(net(x), m)


def train_judge(train_images, train_masks, val_images, val_masks, net_cfg, opts):
    """
    Trains the judge on the training split with a Dice loss and fine-tunes it on
    the validation split.

    Args:
        train_images, train_masks: (N, H, W) arrays; healthy slices carry empty masks.
        val_images, val_masks: Validation arrays.
        net_cfg (NetConfig): Segmentor size.
        opts (EvalOptions): Epochs and threshold.

    Returns:
        JudgeSegmentor: The trained judge.
    """
    torch.manual_seed(opts.seed)
    net = build_segmentor(net_cfg)
    _fit(net, (to_batch(train_images), to_batch(train_masks)), _judge_loss, opts.judge_epochs, 1e-3, opts.seed)
    if len(val_images):
        _fit(net, (to_batch(val_images), to_batch(val_masks)), _judge_loss, opts.judge_finetune_epochs, 1e-4,
             opts.seed + 1)
    judge = JudgeSegmentor(net=net, threshold=opts.judge_threshold, trained=True)
    if len(val_images):
        dice = segmentor_dice(net, val_images, val_masks, opts.judge_threshold)
        logger.info("Judge validation Dice %.3f", dice)
    return judge


def _dec_loss(net, x, y):
    return F.binary_cross_entropy_with_logits(net(x).reshape(-1), y)


def train_dec_classifier(undeformed, deformed, val_undeformed, val_deformed, net_cfg, opts):
    """
    Trains the deformation classifier with BCE on edge maps, label 1 meaning
    deformation-free, and fine-tunes it on the validation split.

    Args:
        undeformed, deformed: (N, H, W) healthy training slices.
        val_undeformed, val_deformed: Validation slices.
        net_cfg (NetConfig): Classifier size, a critic topology with a logit head.
        opts (EvalOptions): Epochs and Canny parameters.

    Returns:
        DecClassifier: The trained classifier.
    """
    undeformed, deformed = np.asarray(undeformed), np.asarray(deformed)
    if len(undeformed) == 0 or len(deformed) == 0:
        raise MetricError("empty_pool", "The deformation classifier needs deformed and undeformed slices")
    torch.manual_seed(opts.seed)
    clf = DecClassifier(net=build_critic(net_cfg, undeformed.shape[-2:]), opts=opts)

    def labelled(pos, neg):
        edges = np.concatenate([clf.edges(pos), clf.edges(neg)])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))]).astype(np.float32)
        return to_batch(edges), torch.from_numpy(labels)

    _fit(clf.net, labelled(undeformed, deformed), _dec_loss, opts.dec_epochs, 1e-4, opts.seed)
    val_undeformed, val_deformed = np.asarray(val_undeformed), np.asarray(val_deformed)
    if len(val_undeformed) and len(val_deformed):
        _fit(clf.net, labelled(val_undeformed, val_deformed), _dec_loss, opts.dec_finetune_epochs, 1e-5,
             opts.seed + 1)
    clf.trained = True
    if len(val_undeformed) and len(val_deformed):
        accuracy = np.mean(np.concatenate([clf.predict_proba(val_undeformed) > 0.5,
                                           clf.predict_proba(val_deformed) <= 0.5]))
        logger.info("DeC classifier validation accuracy %.3f", accuracy)
    return clf


def healthiness_per_sample(synth, inputs, judge):
    """
    Per-sample healthiness against the mean judged lesion size of the inputs.

    Raises:
        MetricError: If the judge finds no pathology in the inputs.
    """
    synth, inputs = _tensor(synth), _tensor(inputs)
    if synth.shape != inputs.shape:
        raise ShapeError("shape_mismatch", f"Synthetic {tuple(synth.shape)} and input {tuple(inputs.shape)} differ")
    denominator = judge.count(inputs).mean()
    if denominator == 0:
        raise MetricError("undefined_healthiness", "The judge finds no pathology in the input batch")
    return 1.0 - judge.count(synth) / denominator


def healthiness(synth, inputs, judge):
    """Healthiness h of a synthetic batch (see module docstring)."""
    return float(healthiness_per_sample(synth, inputs, judge).mean())


def identity_per_sample(x_p, x_tilde_h, m_p, window=11):
    """
    MS-SSIM of the synthetic and input images outside the pathology mask.

    Returns:
        np.ndarray: float64 (N,) in [0, 1].
    """
    x_p, x_tilde_h, m_p = _tensor(x_p), _tensor(x_tilde_h), _tensor(m_p)
    if not (x_p.shape == x_tilde_h.shape == m_p.shape):
        raise ShapeError("shape_mismatch", "Identity needs images and masks of equal shape")
    keep = 1 - m_p
    return ms_ssim(keep * x_tilde_h, keep * x_p, window=window).numpy()


def identity(x_p, x_tilde_h, m_p, window=11):
    """Identity iD: masked MS-SSIM averaged over the batch."""
    return float(identity_per_sample(x_p, x_tilde_h, m_p, window).mean())


def dec_per_sample(synth, clf):
    return clf.predict_proba(synth)


def dec_score(synth, clf):
    """DeC: mean probability that the synthetic images are deformation-free."""
    return float(dec_per_sample(synth, clf).mean())


def diff_map_segmentation(x_p, x_tilde_h, gt=None, threshold=0.1):
    """
    Segments lesions from the difference between input and synthetic images.

    Args:
        x_p, x_tilde_h: Image batches of equal shape.
        gt: Optional ground-truth masks.
        threshold (float): Absolute difference threshold.

    Returns:
        tuple: (uint8 (N, H, W) masks, per-sample Dice as 1 - dice_loss against
        gt, or None without gt).
    """
    x_p, x_tilde_h = _tensor(x_p), _tensor(x_tilde_h)
    if x_p.shape != x_tilde_h.shape:
        raise ShapeError("shape_mismatch", "Difference maps need images of equal shape")
    masks = ((x_p - x_tilde_h).abs() > threshold).to(torch.float32)
    if gt is None:
        return _numpy(masks).astype(np.uint8), None
    gt = _tensor(gt)
    dice = np.array([1.0 - float(dice_loss(masks[i:i + 1], gt[i:i + 1])) for i in range(masks.shape[0])])
    return _numpy(masks).astype(np.uint8), dice


def segmentor_dice_per_sample(s, images, masks, threshold=0.5):
    pred = _numpy(apply(s, images) > threshold)
    return dice_score(pred, _numpy(_tensor(masks)) > 0.5)


def segmentor_dice(s, images, masks, threshold=0.5):
    """Mean per-image hard Dice of S(x_p) > threshold against ground truth."""
    return float(segmentor_dice_per_sample(s, images, masks, threshold).mean())


def pseudo_disease(r, x_h, m, s=None, threshold=0.5):
    """
    Synthesises pathological-looking images R(x_h, m).

    Returns:
        tuple: (float32 (N, H, W) images, per-sample IoU of S(output) > threshold
        against m, or None without a segmentor).
    """
    output = apply(r, x_h, m)
    if s is None:
        return _numpy(output), None
    resegmented = _numpy(apply(s, output) > threshold)
    return _numpy(output), iou_score(resegmented, _numpy(_tensor(m)) > 0.5)


def iterate_generator(g, x_p, m_p, judge, k=5, window=11):
    """
    Applies G repeatedly, feeding each pseudo-healthy batch back in.

    Returns:
        list: k (iD, h) pairs, one per pass, both measured against the original inputs.
    """
    trajectory = []
    current = _tensor(x_p)
    for step in range(k):
        current = apply(g, current)
        pair = (identity(x_p, current, m_p, window), healthiness(current, x_p, judge))
        logger.debug("iteration %d: iD=%.4f h=%.4f", step + 1, *pair)
        trajectory.append(pair)
    return trajectory


def _soft_masks(bundle, x_p):
    x_tilde_h = apply(bundle.g, x_p)
    return x_tilde_h, apply(bundle.s, x_p)


def shift_columns(m, shift_px):
    """Translates a (N, 1, H, W) batch by `shift_px` columns; vacated columns are zero."""
    width = m.shape[-1]
    if shift_px >= 0:
        return F.pad(m, (shift_px, 0))[..., :width]
    return F.pad(m, (0, -shift_px))[..., -shift_px:]


def mask_shift_diagnostic(bundle, x_p, shift_px=8, threshold=0.5):
    """
    Checks that R follows its mask: the segmented mask is translated by `shift_px`
    columns before R, and the re-segmented output is compared with the shifted
    and the original mask.

    Returns:
        dict: per-sample `iou_shifted`, `iou_original` (slices with an empty
        segmentation are skipped) and the `fraction` where shifted wins.
    """
    x_tilde_h, m_tilde = _soft_masks(bundle, x_p)
    shifted = shift_columns(m_tilde, shift_px)
    resegmented = _numpy(apply(bundle.s, apply(bundle.r, x_tilde_h, shifted)) > threshold)
    original, moved = _numpy(m_tilde) > threshold, _numpy(shifted) > threshold
    keep = original.reshape(len(original), -1).any(1)
    iou_shifted = iou_score(resegmented[keep], moved[keep])
    iou_original = iou_score(resegmented[keep], original[keep])
    fraction = float(np.mean(iou_shifted > iou_original)) if keep.any() else float('nan')
    return {'iou_shifted': iou_shifted, 'iou_original': iou_original, 'fraction': fraction}


def mask_permutation_diagnostic(bundle, x_p, seed=0, threshold=0.5):
    """
    Pairs each pseudo-healthy image with another slice's segmented mask before R.

    Returns:
        dict: per-sample l1 of the reconstruction against x_p with the matched and
        the permuted masks, and the IoU of the re-segmented output with the
        permuted mask.
    """
    x_p = _tensor(x_p)
    x_tilde_h, m_tilde = _soft_masks(bundle, x_p)
    order = torch.from_numpy(np.random.default_rng(seed).permutation(x_p.shape[0]))
    permuted = m_tilde[order]
    matched_rec = apply(bundle.r, x_tilde_h, m_tilde)
    permuted_rec = apply(bundle.r, x_tilde_h, permuted)
    resegmented = _numpy(apply(bundle.s, permuted_rec) > threshold)
    return {
        'l1_matched': (matched_rec - x_p).abs().flatten(1).mean(1).numpy(),
        'l1_permuted': (permuted_rec - x_p).abs().flatten(1).mean(1).numpy(),
        'iou_permuted': iou_score(resegmented, _numpy(permuted) > threshold),
    }


def reconstruction_degradation(bundle, x_p, m_p):
    """
    Increase of the reconstruction l1 when the lesion region of the
    pseudo-healthy image is zeroed before the reverse pass.

    The reverse pass is F for a CycleGAN bundle and R(., S(x_p)) otherwise. A
    translator that hides lesion information inside the pseudo-healthy image
    loses it when the region is zeroed.

    Returns:
        np.ndarray: float64 (N,) degradation per slice.
    """
    x_p, m_p = _tensor(x_p), _tensor(m_p)
    x_tilde_h = apply(bundle.g, x_p)
    zeroed = x_tilde_h * (1 - m_p)
    if 'f' in bundle.extra:
        intact, damaged = apply(bundle.extra['f'], x_tilde_h), apply(bundle.extra['f'], zeroed)
    elif bundle.r is not None:
        m_tilde = apply(bundle.s, x_p)
        intact, damaged = apply(bundle.r, x_tilde_h, m_tilde), apply(bundle.r, zeroed, m_tilde)
    else:
        raise MetricError("no_reverse_pass", "The bundle has neither a reconstructor nor a reverse generator")
    before = (intact - x_p).abs().flatten(1).mean(1)
    after = (damaged - x_p).abs().flatten(1).mean(1)
    return (after - before).to(torch.float64).numpy()


def healthy_resynthesis(g, x_h, window=11):
    """Identity of G(x_h) against healthy inputs x_h; 1 means untouched."""
    x_h = _tensor(x_h)
    return identity(x_h, apply(g, x_h), torch.zeros_like(x_h), window)


def cycle_hh_residual(r, x_h):
    """Mean l1 of R(x_h, 0) against x_h."""
    x_h = _tensor(x_h)
    return float((apply(r, x_h, torch.zeros_like(x_h)) - x_h).abs().mean())


def evaluate_bundle(bundle, test_p, judge, clf, opts, test_h=None, run=''):
    """
    Evaluates a trained bundle on held-out pathological slices.

    Args:
        bundle (ModelBundle): Trained networks.
        test_p (Dataset): Held-out pathological slices with masks.
        judge (JudgeSegmentor): Trained judge.
        clf (DecClassifier): Trained deformation classifier.
        opts (EvalOptions): Thresholds and diagnostic settings.
        test_h (Dataset | None): Held-out healthy slices for the healthy-input checks.
        run (str): Run name recorded in the report.

    Returns:
        MetricReport: Per-sample metrics with scalar diagnostics in `extras`.
        Healthiness and the iteration trajectory are left out when the judge
        finds no pathology in `test_p`.
    """
    if len(test_p) == 0:
        raise MetricError("empty_pool", "Evaluation needs held-out pathological slices")
    x_p, m_p = to_batch(test_p.images()), to_batch(test_p.masks())
    x_tilde_h = apply(bundle.g, x_p)

    per_sample = {
        'iD': identity_per_sample(x_p, x_tilde_h, m_p, opts.ms_ssim_window),
        'DeC': dec_per_sample(x_tilde_h, clf),
        'dice_diffmap': diff_map_segmentation(x_p, x_tilde_h, m_p, opts.diff_threshold)[1],
    }
    try:
        per_sample['h'] = healthiness_per_sample(x_tilde_h, x_p, judge)
    except MetricError as e:
        if e.code != 'undefined_healthiness':
            raise
        logger.warning("Healthiness not reported: %s", e.description)
        per_sample['h'] = np.array([])
    extras = {}
    if bundle.s is not None:
        per_sample['dice_segmentor'] = segmentor_dice_per_sample(bundle.s, x_p, m_p, opts.judge_threshold)
    if bundle.r is not None:
        extras['mask_shift_fraction'] = mask_shift_diagnostic(bundle, x_p, opts.shift_px)['fraction']
        permutation = mask_permutation_diagnostic(bundle, x_p, seed=opts.seed)
        extras['mask_permutation_l1_matched'] = float(permutation['l1_matched'].mean())
        extras['mask_permutation_l1_permuted'] = float(permutation['l1_permuted'].mean())
        extras['mask_permutation_iou'] = float(permutation['iou_permuted'].mean())
    if bundle.r is not None or 'f' in bundle.extra:
        extras['reconstruction_degradation'] = float(reconstruction_degradation(bundle, x_p, m_p).mean())
    if test_h is not None and len(test_h):
        extras['healthy_identity'] = healthy_resynthesis(bundle.g, test_h.images(), opts.ms_ssim_window)
        if bundle.r is not None:
            extras['cycle_hh_residual'] = cycle_hh_residual(bundle.r, test_h.images())
    if len(per_sample['h']):
        trajectory = iterate_generator(bundle.g, x_p, m_p, judge, opts.iterate_k, opts.ms_ssim_window)
        for step, (i_d, h) in enumerate(trajectory, start=1):
            extras[f'iter{step}_iD'] = i_d
            extras[f'iter{step}_h'] = h

    report = MetricReport(per_sample=per_sample, run=run, extras=extras)
    logger.info("%s: h=%.3f iD=%.3f DeC=%.3f dice_diffmap=%.3f dice_segmentor=%.3f", run or 'run',
                report.h, report.iD, report.DeC, report.dice_diffmap, report.dice_segmentor)
    return report


def compare_reports(a, b, metric):
    """
    Paired t-test of one metric between two reports on the same slices.

    Returns:
        dict: mean difference (a - b), t statistic and two-sided p-value.
    """
    x, y = np.asarray(a.per_sample.get(metric, [])), np.asarray(b.per_sample.get(metric, []))
    if len(x) != len(y) or len(x) < 2:
        raise MetricError("unpaired_reports", f"Reports need the same >= 2 samples of {metric}")
    result = stats.ttest_rel(x, y)
    return {'metric': metric, 'mean_difference': float(np.mean(x - y)),
            't': float(result.statistic), 'p': float(result.pvalue)}


COMPARED_METRICS = ('iD', 'h', 'DeC')


def compare_with_reference(reference, reports, metrics=COMPARED_METRICS):
    """
    Paired t-tests of every report against a reference report.

    Args:
        reference (MetricReport): Report of the full model.
        reports (dict): variant name -> MetricReport on the same test slices.
        metrics (tuple): Metrics compared; a metric missing from either report is skipped.

    Returns:
        pd.DataFrame: One row per variant and metric with `mean_difference`
        (variant - reference), `t` and `p`.
    """
    rows = []
    for name, report in reports.items():
        for metric in metrics:
            if len(report.per_sample.get(metric, [])) < 2 or len(reference.per_sample.get(metric, [])) < 2:
                continue
            rows.append({'variant': name, **compare_reports(report, reference, metric)})
    return pd.DataFrame(rows, columns=['variant', 'metric', 'mean_difference', 't', 'p'])
