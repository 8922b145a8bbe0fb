"""
SVG figures drawn from the same rows that are written to CSV.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from tailrlab.serialization import PathLike  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams['svg.hashsalt'] = 'tailrlab'
matplotlib.rcParams['svg.fonttype'] = 'none'


def _save(figure, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.tight_layout()
    figure.savefig(path, format='svg', metadata={'Date': None})
    plt.close(figure)
    logger.debug('Wrote %s', path)
    return path


def density_curves(rows: Sequence[Tuple], path: PathLike) -> Path:
    """
    Mixture density with the forward KL and total variation fits.
    """
    x, mixture, kld, tvd = (np.array(column) for column in zip(*rows))
    figure, axes = plt.subplots(figsize=(6, 3.5))
    axes.fill_between(x, mixture, color='0.85', label='mixture')
    axes.plot(x, kld, label='KLD fit')
    axes.plot(x, tvd, label='TVD fit')
    axes.set_xlabel('x')
    axes.set_ylabel('density')
    axes.legend()
    return _save(figure, path)


def error_map(rows: Sequence[Tuple], path: PathLike, title: str = '') -> Path:
    """
    Mean error per (log p_o bucket, perturbation step) as a heat map; empty cells stay blank.
    """
    buckets = max(row[0] for row in rows) + 1
    steps = max(row[3] for row in rows) + 1
    grid = np.full((buckets, steps), np.nan)
    for bucket, _, _, step, mean_error, _ in rows:
        grid[bucket, step] = mean_error
    low, high = rows[0][1], max(row[2] for row in rows)
    limit = np.nanmax(np.abs(grid)) or 1.0

    figure, axes = plt.subplots(figsize=(6, 4))
    image = axes.imshow(grid, origin='lower', aspect='auto', cmap='coolwarm', vmin=-limit, vmax=limit,
                        extent=(-0.5, steps - 0.5, low, high))
    figure.colorbar(image, ax=axes, label='log p_theta - log p_o')
    axes.set_xlabel('perturbation step')
    axes.set_ylabel('log p_o')
    if title:
        axes.set_title(title)
    return _save(figure, path)


def overestimation(tables: Dict[str, List[Tuple]], path: PathLike) -> Path:
    """
    Mean maximum overestimation error against origin length, one line per learner.
    """
    figure, axes = plt.subplots(figsize=(6, 3.5))
    for label, rows in tables.items():
        if rows:
            axes.plot([row[0] for row in rows], [row[1] for row in rows], marker='o', label=label)
    axes.set_xlabel('length')
    axes.set_ylabel('max overestimation error')
    axes.legend()
    return _save(figure, path)


def weight_curve(rows: Sequence[Tuple], path: PathLike) -> Path:
    """
    Token weight against model probability for every gamma.
    """
    curves = defaultdict(list)
    for gamma, probability, weight in rows:
        curves[gamma].append((probability, weight))
    figure, axes = plt.subplots(figsize=(5, 4))
    for gamma, points in curves.items():
        probabilities, weights = zip(*points)
        axes.plot(probabilities, weights, label=f'gamma={gamma:g}')
    axes.set_xlabel('p_theta(y_t)')
    axes.set_ylabel('weight')
    axes.legend(fontsize='small')
    return _save(figure, path)


def gamma_sweep(rows: Sequence[Tuple], header: Sequence[str], path: PathLike) -> Path:
    """
    Every metric column of the sweep table against gamma on a log axis.
    """
    gammas = [row[0] for row in rows]
    columns = [index for index, name in enumerate(header) if index > 1]
    figure, axes = plt.subplots(len(columns), 1, figsize=(5, 2.2 * len(columns)), squeeze=False)
    for axis, index in zip(axes[:, 0], columns):
        axis.plot(gammas, [row[index] for row in rows], marker='o')
        axis.set_xscale('log')
        axis.set_ylabel(header[index])
    axes[-1, 0].set_xlabel('gamma')
    return _save(figure, path)
