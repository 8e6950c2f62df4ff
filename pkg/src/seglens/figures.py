"""Matplotlib rendering of report figures.

All figures are written as SVG with deterministic content: a fixed hash
salt for element ids, no embedded creation date, and fonts kept as text
elements so labels stay selectable and diff-able.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def render_ngram_bars(entries, title: str) -> bytes:
    """Horizontal bar chart of (ngram, count) entries, largest on top.

    Counts are drawn as text labels at the bar ends.  Returns the SVG
    bytes; callers decide where (and how atomically) to write them.
    """
    with plt.rc_context({"svg.fonttype": "none", "svg.hashsalt": "seglens"}):
        n = len(entries)
        fig, ax = plt.subplots(figsize=(6.0, max(1.5, 0.28 * n + 0.8)))
        grams = [g for g, _ in entries]
        counts = [c for _, c in entries]
        y = list(range(n - 1, -1, -1))  # rank 1 at the top
        ax.barh(y, counts, color="#4878a8", edgecolor="none", height=0.7)
        ax.set_yticks(y)
        ax.set_yticklabels(grams, fontsize=8, fontfamily="monospace")
        ax.set_xlabel("frequency")
        ax.set_title(title, fontsize=10)
        span = max(counts) if counts else 1
        for yi, count in zip(y, counts):
            ax.text(count + 0.01 * span, yi, str(count), va="center", fontsize=7)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
        ax.margins(x=0.08)
        return _svg_bytes(fig)


def render_training_curve(log) -> bytes:
    """Loss and dev-F1 curves from an epoch log."""
    with plt.rc_context({"svg.fonttype": "none", "svg.hashsalt": "seglens"}):
        epochs = [rec["epoch"] for rec in log]
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        ax.plot(epochs, [rec["train_loss"] for rec in log], color="#a84848",
                label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("summed loss")
        dev = [(rec["epoch"], rec["dev_ner_f1"], rec["dev_re_f1"]) for rec in log
               if rec["dev_ner_f1"] is not None]
        if dev:
            ax2 = ax.twinx()
            ax2.plot([d[0] for d in dev], [d[1] for d in dev], color="#4878a8",
                     label="dev NER F1")
            ax2.plot([d[0] for d in dev], [d[2] for d in dev], color="#48a878",
                     label="dev RE F1")
            ax2.set_ylabel("F1")
            ax2.set_ylim(0, 105)
        ax.spines["top"].set_visible(False)
        return _svg_bytes(fig)
