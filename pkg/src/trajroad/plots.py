"""Report figures written next to CLI outputs."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_loss_curve(losses, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_tile_ious(results, a_iou, g_iou, path):
    fig, ax = plt.subplots(figsize=(max(4, 0.25 * len(results) + 2), 3.2))
    ax.bar(range(len(results)), [r.iou for r in results], color="tab:gray")
    ax.axhline(a_iou, color="tab:blue", label=f"A_IoU {a_iou:.4f}")
    ax.axhline(g_iou, color="tab:orange", ls="--", label=f"G_IoU {g_iou:.4f}")
    ax.set_xticks(range(len(results)))
    ax.set_xticklabels([r.tile_id for r in results], rotation=90, fontsize=6)
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_prediction_panels(rows, path):
    """One row per tile: (tile_id, image or None, heat-map or None, ground truth, prediction)."""
    rows = list(rows)
    titles = ("image", "trajectory heat-map", "ground truth", "prediction")
    fig, axes = plt.subplots(len(rows), 4, figsize=(8, 2.1 * len(rows)), squeeze=False)
    for r, (tid, image, heat, gt, pred) in enumerate(rows):
        for c, arr in enumerate((image, heat, gt, pred)):
            ax = axes[r, c]
            ax.set_xticks([])
            ax.set_yticks([])
            if arr is not None:
                ax.imshow(arr if arr.ndim == 3 and arr.shape[2] == 3 else np.squeeze(arr),
                          cmap=None if arr.ndim == 3 and arr.shape[2] == 3 else "gray", vmin=0, vmax=1)
            if r == 0:
                ax.set_title(titles[c], fontsize=8)
        axes[r, 0].set_ylabel(tid, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
