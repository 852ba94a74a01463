"""Rendering of evaluation reports: JSON, aligned table, TSV, and figures.

The figure set (AP vs IoU threshold, per-class precision-recall, FRR vs
FA/h) is written as PNGs next to the textual reports.
"""

from __future__ import annotations

import json
from pathlib import Path

from .dataset import KeywordSet
from .metrics import EvalReport


def format_table(report: EvalReport, model_name: str = "detector") -> str:
    """Aligned plain-text table with the headline metric columns."""
    headers = ["Model", "AP@5", "AP@75", "mAP", "FRR@5", "FRR@15", "FRR@25", "RTF"]
    row = [
        model_name,
        f"{report.ap_low:.3f}",
        f"{report.ap_high:.3f}",
        f"{report.map_value:.3f}",
        f"{report.frr.get(5.0, float('nan')):.3f}",
        f"{report.frr.get(15.0, float('nan')):.3f}",
        f"{report.frr.get(25.0, float('nan')):.3f}",
        "n/a" if report.rtf is None else f"{report.rtf:.3f}",
    ]
    if report.classification_accuracy is not None:
        headers.append("ClsAcc")
        row.append(f"{report.classification_accuracy:.3f}")
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    values = "  ".join(v.ljust(w) for v, w in zip(row, widths))
    rule = "-" * len(line)
    return "\n".join([line, rule, values]) + "\n"


def format_tsv(report: EvalReport, model_name: str = "detector") -> str:
    """Delimited single-row summary plus the per-threshold AP sweep."""
    lines = ["metric\tvalue"]
    lines.append(f"model\t{model_name}")
    lines.append(f"ap@0.05\t{report.ap_low!r}")
    lines.append(f"ap@0.75\t{report.ap_high!r}")
    lines.append(f"map\t{report.map_value!r}")
    for target in sorted(report.frr):
        lines.append(f"frr@fa{target:g}\t{report.frr[target]!r}")
    lines.append(f"rtf\t{'' if report.rtf is None else repr(report.rtf)}")
    if report.classification_accuracy is not None:
        lines.append(f"classification_accuracy\t{report.classification_accuracy!r}")
    for thr in sorted(report.per_threshold_ap):
        lines.append(f"ap_at_iou_{thr:.2f}\t{report.per_threshold_ap[thr]!r}")
    return "\n".join(lines) + "\n"


def write_figures(report: EvalReport, out_dir: Path, keywords: KeywordSet | None = None) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    thrs = sorted(report.per_threshold_ap)
    ax.plot(thrs, [report.per_threshold_ap[t] for t in thrs], marker="o", ms=3)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("class-mean AP")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "ap_vs_iou.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    if report.pr_curves:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for cls, (recalls, precisions) in sorted(report.pr_curves.items()):
            label = keywords.name_of(cls) if keywords else f"class {cls}"
            ax.plot(recalls, precisions, label=label)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / "pr_curves.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    if report.fa_frr_points:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        fas = [fa for _, fa, _ in report.fa_frr_points]
        frrs = [frr for _, _, frr in report.fa_frr_points]
        ax.step(fas, frrs, where="post")
        for target, frr in sorted(report.frr.items()):
            ax.plot([target], [frr], marker="x", color="tab:red")
        ax.set_xlabel("false alarms per hour")
        ax.set_ylabel("false rejection rate")
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / "frr_vs_fa.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written


def write_training_curve(log_path: Path, out_path: Path) -> None:
    """Loss-vs-step figure from a training JSONL log."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps, totals, heats = [], [], []
    for line in Path(log_path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        steps.append(rec["step"])
        totals.append(rec["loss_total"])
        heats.append(rec["loss_heatmap"])
    if not steps:
        return
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(steps, totals, label="total")
    ax.plot(steps, heats, label="heatmap", alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def write_report(
    report: EvalReport,
    out_dir: str | Path,
    model_name: str = "detector",
    keywords: KeywordSet | None = None,
    figures: bool = True,
) -> dict[str, Path]:
    """Write report.json, report.txt, report.tsv, and (optionally) figures/."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(report.to_json_obj(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["json"] = json_path
    txt_path = out_dir / "report.txt"
    txt_path.write_text(format_table(report, model_name), encoding="utf-8")
    paths["table"] = txt_path
    tsv_path = out_dir / "report.tsv"
    tsv_path.write_text(format_tsv(report, model_name), encoding="utf-8")
    paths["tsv"] = tsv_path
    if figures:
        for fig_path in write_figures(report, out_dir / "figures", keywords):
            paths[fig_path.stem] = fig_path
    return paths
