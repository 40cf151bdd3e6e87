"""Figures written next to the tabular outputs (PNG, non-interactive backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path, stamp=()):
    """Write a PNG whose text chunks carry the provenance ``stamp`` lines.

    The software tag is dropped so the bytes do not depend on the
    matplotlib version.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None, "Description": "\n".join(stamp) or None})
    plt.close(fig)
    return path


def training_curves(log, path, title="", stamp=()):
    """Per-epoch losses and validation AUC from a :class:`TrainLog`."""
    epochs = log.column("epoch")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, log.column("normal_loss"), label="normal pass")
    ax1.plot(epochs, log.column("adv_loss"), label="perturbed")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, log.column("val_auc"), color="C2")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("test AUC")
    if title:
        fig.suptitle(title)
    return _save(fig, path, stamp)


def bucket_auc(reports, path, stamp=()):
    """Grouped bars of per-bucket AUC, one group per labelled report."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    labels = list(reports)
    width = 0.8 / max(1, len(labels))
    for k, name in enumerate(labels):
        aucs = reports[name].bucket_auc
        xs = [b + k * width for b in range(len(aucs))]
        ax.bar(xs, aucs, width=width, label=f"{name} (STD {reports[name].std:.3f})")
    ax.set_xticks([b + 0.4 - width / 2 for b in range(len(reports[labels[0]].bucket_auc))])
    ax.set_xticklabels([str(b + 1) for b in range(len(reports[labels[0]].bucket_auc))])
    ax.set_xlabel("bucket (1 = most frequent feature combinations)")
    ax.set_ylabel("AUC")
    lo = min(min(r.bucket_auc) for r in reports.values())
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    ax.legend(fontsize=8)
    return _save(fig, path, stamp)


def robustness(drops, path, stamp=()):
    """AUC drop (%) against noise level, one line per labelled model."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, by_level in drops.items():
        levels = sorted(by_level)
        ax.plot(levels, [by_level[lv] for lv in levels], marker="o", label=name)
    ax.set_xlabel("noise level")
    ax.set_ylabel("AUC drop (%)")
    ax.legend()
    return _save(fig, path, stamp)


def t_frontier(rows, path, stamp=()):
    """Accuracy against bucket-AUC spread for each value of ``t``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["std"] for r in rows], [r["auc"] for r in rows], marker="o")
    for r in rows:
        ax.annotate(f"t={r['t']:g}", (r["std"], r["auc"]), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("STD of bucket AUC")
    ax.set_ylabel("AUC")
    return _save(fig, path, stamp)
