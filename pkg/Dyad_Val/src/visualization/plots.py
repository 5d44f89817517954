"""SVG histogram panels of joint and differential satisfaction."""
import os
import re
from typing import Dict, List, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..utils.config import logger  # noqa: E402

TITLES = {"joint": "Joint satisfaction", "diff": "Differential satisfaction"}
COLORS = {"joint": "dodgerblue", "diff": "orange"}


def panel_id(group_id: str, variable: str) -> str:
    return "panel-" + re.sub(r"[^A-Za-z0-9_.-]+", "_", f"{group_id}-{variable}")


def plot_satisfaction_histograms(histograms: Dict[str, Dict[str, List[int]]], edges: Dict[str, Sequence[float]],
                                 filename: str, groups: Optional[Sequence[str]] = None,
                                 description: str = "") -> str:
    """Draw one row of (joint, diff) panels per group and save it as SVG.

    Output bytes depend only on the inputs: the SVG carries no date and
    element ids are salted with a fixed string.

    Args:
        histograms: group -> variable -> bin counts
        edges: variable -> bin edges
        filename: Output SVG path
        groups: Row order (default: sorted group ids)
        description: Provenance text stored in the SVG metadata
    """
    groups = [g for g in (groups or sorted(histograms)) if g in histograms]
    variables = list(TITLES)
    os.makedirs(os.path.dirname(os.path.abspath(filename)), exist_ok=True)
    with plt.rc_context({'svg.hashsalt': 'dyad-validation', 'svg.fonttype': 'none'}):
        try:
            rows = max(1, len(groups))
            fig, axes = plt.subplots(rows, len(variables), figsize=(10, 2.4 * rows), squeeze=False)
            if not groups:
                for ax in axes.ravel():
                    ax.axis('off')
                axes[0, 0].text(0.0, 0.5, "No raw satisfaction data", transform=axes[0, 0].transAxes)
            for row, group_id in enumerate(groups):
                for col, variable in enumerate(variables):
                    ax = axes[row, col]
                    bins = np.asarray(edges[variable], dtype=float)
                    counts = histograms[group_id][variable]
                    ax.bar(0.5 * (bins[:-1] + bins[1:]), counts, width=np.diff(bins) * 0.9,
                           color=COLORS[variable], edgecolor='black', linewidth=0.5)
                    ax.set_gid(panel_id(group_id, variable))
                    ax.set_title(f"{group_id}: {TITLES[variable]}", fontsize=9)
                    ax.set_ylabel("Dyads", fontsize=8)
                    ax.tick_params(labelsize=7)
                    ax.grid(True, axis='y', alpha=0.3)
            fig.tight_layout()
            fig.savefig(filename, format='svg', metadata={'Date': None, 'Creator': None,
                                                          'Description': description or None})
            logger.info(f"Histogram panels written to {filename}")
        except Exception as e:
            logger.error(f"Error plotting satisfaction histograms: {str(e)}")
            raise
        finally:
            plt.close('all')
    return filename
