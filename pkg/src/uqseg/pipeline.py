"""Training and evaluation orchestration.

One training step forwards the clean batch and the two corrupted copies,
assembles the segmentation objective plus the gated uncertainty supervision,
and takes one Adam step. All randomness flows from named substreams of the
master seed, so artifacts regenerate byte-identically for a fixed config.
"""

import itertools
import logging
import os
import zlib

import numpy as np

from . import autodiff as ad
from . import evidential, metrics, phantom, supervision
from .config import RunConfig, write_effective
from .grids import LabelGrid, ScalarGrid, export_pgm
from .network import EvidenceNet, load_checkpoint, save_checkpoint
from .proxies import boundary_distance, gradient_magnitude

log = logging.getLogger("uqseg.pipeline")

EVAL_SEED = 97
EVAL_NOISE_LEVELS = (0.0, 0.025, 0.05, 0.075, 0.10)
EVAL_NOISE_TRIALS = 3
DELTA_U_NOISE = (0.025, 0.05, 0.10)
DELTA_U_BLUR = (0.5, 1.0, 2.0)

LOG_COLUMNS = (
    "epoch", "total", "ce", "dice", "kl", "phi_g", "phi_sigma", "phi_d",
    "lambda_kl", "anneal_alpha", "lambda_dice", "lambda_g", "lambda_sigma",
    "lambda_f", "val_dsc",
)


class DivergenceError(RuntimeError):
    pass


def subrng(*parts):
    """Named deterministic random stream derived from mixed int/str keys."""
    ints = []
    for p in parts:
        if isinstance(p, str):
            ints.append(zlib.crc32(p.encode("utf-8")))
        else:
            ints.append(int(p) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(ints))


class Sample:
    """One dataset item with its precomputed supervision proxies."""

    __slots__ = ("image", "labels", "distance", "gradient")

    def __init__(self, image: ScalarGrid, labels: LabelGrid):
        self.image = image
        self.labels = labels
        self.distance = boundary_distance(labels)
        self.gradient = gradient_magnitude(image)


def load_dataset(manifest_path, num_classes):
    return [Sample(img, lab) for img, lab in phantom.load_manifest(manifest_path, num_classes)]


def predict_fields(net: EvidenceNet, base_rate, image: ScalarGrid):
    """Forward one image without recording; returns (alpha, probs, u, pred)."""
    with ad.no_grad():
        ev = net.forward(image.values[None])
    alpha = ev.data[0] + (net.config.num_classes * base_rate.r)[:, None, None]
    field = evidential.DirichletField(alpha=alpha, weight=float(net.config.num_classes))
    probs, u = evidential.expected_prob_and_uncertainty(field)
    pred = LabelGrid(np.argmax(probs, axis=0).astype(np.int64), net.config.num_classes)
    return alpha, probs, u, pred


def uncertainty_model(net: EvidenceNet, base_rate):
    """Callable image -> uncertainty array, for the evaluation protocols."""

    def run(image: ScalarGrid):
        _, _, u, _ = predict_fields(net, base_rate, image)
        return u.values

    return run


def _format_row(values):
    out = []
    for v in values:
        out.append(f"{v:.12g}" if isinstance(v, float) else str(v))
    return ",".join(out)


def write_training_log(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for row in rows:
            fh.write(_format_row([row[c] for c in LOG_COLUMNS]) + "\n")


def validation_dsc(net, base_rate, samples):
    scores = []
    for s in samples:
        _, _, _, pred = predict_fields(net, base_rate, s.image)
        _, mean = metrics.dsc(pred, s.labels)
        if mean is not None:
            scores.append(mean)
    return sum(scores) / len(scores) if scores else None


def train(config: RunConfig, out_dir=None):
    """Full training run; returns (net, base_rate, log_rows)."""
    train_set = load_dataset(config.train_manifest, config.num_classes)
    val_set = load_dataset(config.val_manifest, config.num_classes) if config.val_manifest else []
    base_rate = evidential.base_rate_from_labels([s.labels for s in train_set])
    net = EvidenceNet(config.network_config(), seed=config.seed)
    opt = ad.Adam(
        net.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.adam_eps
    )
    schedule = config.noise_schedule()
    sampler = config.sampler()
    enable = (config.use_lg, config.use_lsigma, config.use_ld)
    num_classes = config.num_classes
    prior = (num_classes * base_rate.r)[None, :, None, None]
    n = len(train_set)
    rows = []

    for epoch in range(config.epochs):
        lam_kl = evidential.kl_weight(epoch)
        anneal = evidential.anneal_alpha(epoch, config.epochs, config.alpha0)
        lam_dice = 1.0 - anneal
        gate = config.gate_params(anneal)
        order = subrng(config.seed, "shuffle", epoch).permutation(n)
        sums = {k: 0.0 for k in ("total", "ce", "dice", "kl", "phi_g", "phi_sigma", "phi_d")}
        steps = 0

        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            b = len(batch)
            noise_rng = subrng(config.seed, "noise", epoch, steps)
            clean = np.stack([s.image.values for s in batch])
            noisy = np.stack(
                [
                    supervision.corrupt(s.image, sigma, noise_rng).values
                    for sigma in (schedule.sigma[1], schedule.sigma[2])
                    for s in batch
                ]
            )
            ev_clean = net.forward(clean)
            ev_noisy = net.forward(noisy)
            alpha = ev_clean + prior
            strength = alpha.sum(axis=1)
            u_clean = float(num_classes) / strength
            u_noisy = float(num_classes) / (ev_noisy + prior).sum(axis=1)

            parts = {k: 0.0 for k in sums}
            loss = None
            for i, s in enumerate(batch):
                field = evidential.DirichletField(alpha=alpha[i], weight=float(num_classes))
                probs = alpha[i] / strength[i].reshape((1,) + s.image.values.shape)
                ce = evidential.evidential_ce_loss(field, s.labels)
                dice = evidential.evidential_dice_loss(probs, s.labels)
                kl = evidential.kl_regularizer(field, s.labels)
                pair_rng = subrng(config.seed, "pairs", epoch, steps, i)
                phi_g, phi_sigma, phi_d = supervision.uncertainty_loss_terms(
                    u_clean[i], (u_noisy[i], u_noisy[b + i]), s.labels, s.distance,
                    s.gradient, gate, schedule, sampler, pair_rng, enable,
                )
                item = ce + lam_dice * dice + lam_kl * kl + phi_g + phi_sigma + phi_d
                loss = item if loss is None else loss + item
                for key, val in (
                    ("ce", ce), ("dice", dice), ("kl", kl),
                    ("phi_g", phi_g), ("phi_sigma", phi_sigma), ("phi_d", phi_d),
                ):
                    parts[key] += float(val) / b
            loss = loss * (1.0 / b)
            total = float(loss)
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss {total} at epoch {epoch}, step {steps}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            parts["total"] = total
            for k in sums:
                sums[k] += parts[k]
            steps += 1

        row = {k: sums[k] / steps for k in sums}
        row.update(
            epoch=epoch,
            lambda_kl=lam_kl,
            anneal_alpha=anneal,
            lambda_dice=lam_dice,
            lambda_g=gate.lambda_g,
            lambda_sigma=gate.lambda_sigma,
            lambda_f=gate.lambda_f,
            val_dsc=validation_dsc(net, base_rate, val_set) if val_set else float("nan"),
        )
        rows.append(row)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(net.state_arrays() + [base_rate.r], os.path.join(out_dir, "checkpoint.prnw"))
        write_training_log(rows, os.path.join(out_dir, "training_log.csv"))
        write_effective(config, os.path.join(out_dir, "effective_config.txt"))
    return net, base_rate, rows


def load_trained(checkpoint_path):
    """Rebuild (net, base_rate) from a checkpoint written by train()."""
    arrays = load_checkpoint(checkpoint_path)
    base_rate = evidential.BaseRate(arrays[-1])
    net = EvidenceNet.from_arrays(arrays[:-1])
    return net, base_rate


def evaluate(net, base_rate, samples, d0, out_dir=None, eval_seed=EVAL_SEED, export_maps=True):
    """Full metric report on a dataset at boundary threshold d0."""
    model = uncertainty_model(net, base_rate)
    report = metrics.MetricReport()
    delta_rows = []
    num_classes = net.config.num_classes

    for idx, s in enumerate(samples):
        _, _, u, pred = predict_fields(net, base_rate, s.image)
        dsc_per_class, _ = metrics.dsc(pred, s.labels)
        hd_per_class, _ = metrics.hd95(pred, s.labels)
        ladder_fields = None
        if s.distance is not None:
            ladder_fields = []
            for trial in range(EVAL_NOISE_TRIALS):
                per_level = []
                for li, sigma in enumerate(EVAL_NOISE_LEVELS):
                    rng = subrng(eval_seed, "ladder", idx, trial, li)
                    per_level.append(model(supervision.corrupt(s.image, sigma, rng)))
                ladder_fields.append(per_level)

        for k in range(1, num_classes):
            values = {"dsc": dsc_per_class.get(k), "hd95": hd_per_class.get(k)}
            if s.distance is None:
                report.add_row(idx, k, **values)
                continue
            band = metrics.boundary_band(s.labels, s.distance, k, d0)
            if len(band) >= 2:
                g_band = s.gradient.values.ravel()[band.indices]
                d_band = s.distance.values.ravel()[band.indices]
                u_band = u.values.ravel()[band.indices]
                values["ucc_g"] = metrics.spearman(g_band, u_band)
                values["ucc_d"] = metrics.spearman(d_band, u_band)
                values["ur_g"] = metrics.ur(g_band, u_band, "inverse")
                values["ur_d"] = metrics.ur(d_band, u_band, "inverse")
                try:
                    values["slope_g"] = metrics.regression_slope(g_band, u_band)
                except ValueError:
                    values["slope_g"] = None
                try:
                    values["slope_d"] = metrics.regression_slope(d_band, u_band)
                except ValueError:
                    values["slope_d"] = None
                level_means = np.array(
                    [
                        np.mean(
                            [
                                trial_fields[li].ravel()[band.indices].mean()
                                for trial_fields in ladder_fields
                            ]
                        )
                        for li in range(len(EVAL_NOISE_LEVELS))
                    ]
                )
                values["ucc_sigma"] = metrics.spearman(
                    np.asarray(EVAL_NOISE_LEVELS), level_means
                )
                values["ur_sigma"] = metrics.ur(
                    np.asarray(EVAL_NOISE_LEVELS), level_means, "direct"
                )
                for kind, sigmas in (
                    ("gaussian_noise", DELTA_U_NOISE),
                    ("gaussian_blur", DELTA_U_BLUR),
                ):
                    for sigma in sigmas:
                        rng = subrng(eval_seed, "deltau", idx, k, kind, int(sigma * 1000))
                        summary = metrics.delta_u_under_perturbation(
                            model, s.image, band, metrics.Perturbation(kind, sigma), rng
                        )
                        delta_rows.append(
                            (idx, k, kind, sigma, summary.mean, summary.fraction_positive,
                             summary.q25, summary.q50, summary.q75)
                        )
            report.add_row(idx, k, **values)

        if out_dir is not None and export_maps:
            export_pgm(u, os.path.join(out_dir, f"uncertainty_{idx:05d}.pgm"))
            export_pgm(s.gradient, os.path.join(out_dir, f"gradient_{idx:05d}.pgm"))
            if s.distance is not None:
                export_pgm(s.distance, os.path.join(out_dir, f"distance_{idx:05d}.pgm"))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.to_csv(os.path.join(out_dir, "report.csv"))
        with open(os.path.join(out_dir, "deltau.csv"), "w", encoding="utf-8") as fh:
            fh.write("image_id,class,kind,sigma,mean,fraction_positive,q25,q50,q75\n")
            for row in delta_rows:
                fh.write(_format_row(list(row)) + "\n")
    return report, delta_rows


# -- sweeps and ablations -----------------------------------------------------

SWEEP_METRICS = ("dsc", "hd95", "ucc_g", "ucc_sigma", "ucc_d", "ur_g", "ur_sigma", "ur_d")
# metrics where lower is better after reading the expected sign conventions
LOWER_BETTER = {"hd95", "ucc_g", "ucc_d"}


def _aggregate_metrics(report):
    return {m: report.aggregate(m) for m in SWEEP_METRICS}


def sweep_d0(config: RunConfig, values, out_dir):
    """Train + eval once per boundary threshold; emit a normalized table."""
    os.makedirs(out_dir, exist_ok=True)
    seen, unique = set(), []
    for v in values:
        if v in seen:
            log.warning("duplicate d0 value %s dropped", v)
            continue
        seen.add(v)
        unique.append(v)
    results = []
    for v in unique:
        run_cfg = config.with_overrides(d0=float(v))
        run_dir = os.path.join(out_dir, f"d0_{v:g}")
        try:
            net, base_rate, _ = train(run_cfg, run_dir)
            samples = load_dataset(run_cfg.test_manifest, run_cfg.num_classes)
            report, _ = evaluate(net, base_rate, samples, run_cfg.d0, run_dir, export_maps=False)
            results.append((v, "ok", _aggregate_metrics(report)))
        except DivergenceError as exc:
            log.warning("d0=%s diverged: %s", v, exc)
            results.append((v, "diverged", {m: None for m in SWEEP_METRICS}))

    norm = {}
    for m in SWEEP_METRICS:
        defined = [(v, vals[m]) for v, status, vals in results if vals[m] is not None]
        if not defined:
            continue
        raw = np.array([x for _, x in defined])
        aligned = -raw if m in LOWER_BETTER else raw
        lo, hi = aligned.min(), aligned.max()
        for (v, _), a in zip(defined, aligned):
            norm[(v, m)] = 1.0 if hi == lo else float((a - lo) / (hi - lo))

    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["d0", "status"] + list(SWEEP_METRICS) + [f"norm_{m}" for m in SWEEP_METRICS]
        fh.write(",".join(cols) + "\n")
        for v, status, vals in results:
            row = [f"{v:g}", status]
            row += [metrics.format_value(vals[m]) for m in SWEEP_METRICS]
            row += [metrics.format_value(norm.get((v, m))) for m in SWEEP_METRICS]
            fh.write(",".join(row) + "\n")
    return path, results


EXPECTED_SIGNS = {"ucc_g": -1, "ucc_sigma": 1, "ucc_d": -1}


def ablate(config: RunConfig, out_dir):
    """Train the eight supervision-toggle combinations and tabulate them."""
    os.makedirs(out_dir, exist_ok=True)
    combos = list(itertools.product((True, False), repeat=3))
    results = []
    for use_lg, use_lsigma, use_ld in combos:
        run_cfg = config.with_overrides(use_lg=use_lg, use_lsigma=use_lsigma, use_ld=use_ld)
        tag = "".join("1" if t else "0" for t in (use_lg, use_lsigma, use_ld))
        run_dir = os.path.join(out_dir, f"toggles_{tag}")
        try:
            net, base_rate, _ = train(run_cfg, run_dir)
            samples = load_dataset(run_cfg.test_manifest, run_cfg.num_classes)
            report, _ = evaluate(net, base_rate, samples, run_cfg.d0, run_dir, export_maps=False)
            results.append(((use_lg, use_lsigma, use_ld), "ok", _aggregate_metrics(report)))
        except DivergenceError as exc:
            log.warning("toggles %s diverged: %s", tag, exc)
            results.append(
                ((use_lg, use_lsigma, use_ld), "diverged", {m: None for m in SWEEP_METRICS})
            )

    full = results[0][2]
    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["use_lg", "use_lsigma", "use_ld", "status", "dsc", "hd95"]
        for m in ("ucc_g", "ucc_sigma", "ucc_d"):
            cols += [m, f"sign_{m}", f"delta_{m}"]
        cols += ["ur_g", "ur_sigma", "ur_d"]
        fh.write(",".join(cols) + "\n")
        for toggles, status, vals in results:
            row = [("yes" if t else "no") for t in toggles] + [status]
            row += [metrics.format_value(vals["dsc"]), metrics.format_value(vals["hd95"])]
            is_full = all(toggles)
            for m in ("ucc_g", "ucc_sigma", "ucc_d"):
                v = vals[m]
                row.append(metrics.format_value(v))
                if v is None:
                    row += ["undefined", "undefined"]
                    continue
                sign_ok = v * EXPECTED_SIGNS[m] > 0
                row.append("ok" if sign_ok else "violated")
                if is_full:
                    row.append("--")
                elif not sign_ok or full[m] is None:
                    row.append("N/A")
                else:
                    row.append(f"{v - full[m]:.12g}")
            row += [metrics.format_value(vals[m]) for m in ("ur_g", "ur_sigma", "ur_d")]
            fh.write(",".join(row) + "\n")
    return path, results
