"""
Slice montages of ULF inputs, model outputs and references (PNG, matplotlib Agg backend).
"""
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from core.logger import Log  # noqa: E402
from data.volume import CONTRASTS, TissueClass, Enhancement, Subject  # noqa: E402

MODEL_ORDER = ("cyclegan", "trex", "combined")
PANEL_INCHES = 2.2
DPI = 100
# Fixed PNG metadata keeps reruns byte-identical
PNG_METADATA = {'Software': None}


def axial_index(subject: Subject, focus: Optional[np.ndarray] = None) -> int:
    """Slice with the most focus voxels (e.g. a void mask), else the middle slice."""
    if focus is not None and np.any(focus):
        return int(np.argmax(np.asarray(focus).reshape(focus.shape[0], -1).sum(axis=1)))
    return subject.shape[0] // 2


def _panel(ax, image: np.ndarray, title: Optional[str] = None, cmap: str = "gray", vmax: float = 1.0) -> None:
    ax.imshow(image, cmap=cmap, vmin=0.0, vmax=vmax, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=8)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def enhancement_montage(subject: Subject, outputs: Mapping[str, Enhancement], path: Union[str, Path],
                        seg_probs: Optional[np.ndarray] = None, index: Optional[int] = None) -> Path:
    """
    One axial slice per contrast (rows) for ULF, each model output, and HF when available (columns).

    @param subject: Subject providing the ULF input and optional HF reference
    @param outputs: Source name -> Enhancement; known models are drawn in pipeline order
    @param path: PNG to write
    @param seg_probs: Optional (6, D, H, W) probabilities; adds a tissue-map panel column
    @param index: Axial slice (default middle slice)
    """
    index = subject.shape[0] // 2 if index is None else index
    sources = [s for s in MODEL_ORDER if s in outputs] + sorted(set(outputs) - set(MODEL_ORDER))
    columns: List[str] = ["ULF", *sources] + (["HF"] if subject.has_hf else [])
    n_cols = len(columns) + (1 if seg_probs is not None else 0)

    fig, axes = plt.subplots(len(CONTRASTS), n_cols, squeeze=False,
                             figsize=(PANEL_INCHES * n_cols, PANEL_INCHES * len(CONTRASTS)))
    for row, contrast in enumerate(CONTRASTS):
        images: Dict[str, np.ndarray] = {"ULF": subject.ulf[contrast].data[index]}
        images.update({s: outputs[s].volumes[contrast].data[index] for s in sources})
        if subject.has_hf:
            images["HF"] = subject.hf[contrast].data[index]
        for col, name in enumerate(columns):
            _panel(axes[row, col], images[name], f"{name} {contrast}" if row == 0 else contrast)
        if seg_probs is not None:
            ax = axes[row, -1]
            if row == 0:
                _panel(ax, np.argmax(seg_probs[:, index], axis=0), "tissue map", cmap="tab10",
                       vmax=float(len(TissueClass) - 1))
            else:
                # One tissue probability per remaining row: WM, then GM
                tissue = TissueClass.WM if row == 1 else TissueClass.GM
                _panel(ax, seg_probs[int(tissue), index], f"p({tissue.name})", cmap="magma")
    fig.tight_layout()
    return _save(fig, Path(path))


def void_montage(ulf: Subject, enhanced: Enhancement, void_mask: np.ndarray, path: Union[str, Path]) -> Path:
    """ULF | enhanced | enhanced with the void outlined in red, one row per contrast."""
    index = axial_index(ulf, void_mask)
    fig, axes = plt.subplots(len(CONTRASTS), 3, squeeze=False,
                             figsize=(PANEL_INCHES * 3, PANEL_INCHES * len(CONTRASTS)))
    for row, contrast in enumerate(CONTRASTS):
        _panel(axes[row, 0], ulf.ulf[contrast].data[index], f"ULF {contrast}")
        _panel(axes[row, 1], enhanced.volumes[contrast].data[index], f"{enhanced.source} {contrast}")
        _panel(axes[row, 2], enhanced.volumes[contrast].data[index], "void")
        overlay = np.ma.masked_where(~void_mask[index].astype(bool), void_mask[index])
        axes[row, 2].imshow(overlay, cmap="autumn", alpha=0.5, vmin=0, vmax=1, interpolation="nearest")
    fig.tight_layout()
    return _save(fig, Path(path))


def emit_figures(subjects: Sequence[Subject], outputs: Mapping[str, Sequence[Enhancement]],
                 out_dir: Union[str, Path], seg_probs: Optional[Mapping[str, np.ndarray]] = None) -> List[Path]:
    """
    Per-subject enhancement montages.

    @param subjects: Subjects to draw
    @param outputs: Source name -> enhancements (matched by subject id); subjects without any output are skipped
    @param out_dir: Directory receiving <subject_id>.png
    @param seg_probs: Optional subject id -> (6, D, H, W) probabilities
    @return: Written PNG paths
    """
    out_dir = Path(out_dir)
    by_source = {source: {e.subject_id: e for e in enhancements} for source, enhancements in outputs.items()}
    written = []
    for subject in subjects:
        available = {s: by_source[s][subject.subject_id] for s in by_source if subject.subject_id in by_source[s]}
        if not available:
            Log.warning(f"No enhanced output for {subject.subject_id}, figure skipped")
            continue
        probs = seg_probs.get(subject.subject_id) if seg_probs else None
        written.append(enhancement_montage(subject, available, out_dir / f"{subject.subject_id}.png", probs))
    Log.info(f"{len(written)} figures written to {out_dir}")
    return written
