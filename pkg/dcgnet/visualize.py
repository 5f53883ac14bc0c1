from typing import Optional, Sequence

import matplotlib.colors
import matplotlib.pyplot
import numpy
import pandas
from numpy.typing import NDArray

RELATION_COLORMAP = matplotlib.colors.LinearSegmentedColormap.from_list(
    "relation",
    numpy.array([[1.0, 0.0, 0.0], [0.8, 0.8, 0.8], [0.0, 0.0, 1.0]]),
)
"""Colormap: Red for negative, grey for zero and blue for positive relations"""


def plot_adjacency(
    matrix: NDArray[float],
    title: Optional[str] = None,
    subtract_identity: bool = True,
) -> matplotlib.pyplot.Figure:
    """Plot a learned adjacency residual as a heat map.

    Parameters
    ----------
    matrix: NDArray[float]
        Square residual matrix, as returned by `DCGNet.learned_adjacencies`
    title: str, optional
        Axis title
    subtract_identity: bool, default=True
        Show the change from the identity initialization instead of the raw values.
        The color scale is symmetric about zero either way.

    Returns
    -------
    Figure
        A matplotlib figure containing the heat map
    """
    values = numpy.asarray(matrix, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("adjacency must be a square matrix, got shape " + str(values.shape))
    if subtract_identity:
        values = values - numpy.eye(len(values))
    scaler = float(numpy.max(numpy.abs(values))) or 1.0

    fig = matplotlib.pyplot.figure()
    ax = fig.add_subplot(
        111,
    )
    image = ax.imshow(
        values, cmap=RELATION_COLORMAP, vmin=-scaler, vmax=scaler, interpolation="nearest"
    )
    fig.colorbar(image, ax=ax)
    ax.set_xlabel("node")
    ax.set_ylabel("node")
    if title is not None:
        ax.set_title(title)

    return fig


def plot_loss_curve(
    history: pandas.DataFrame,
    columns: Sequence[str] = ("loss",),
    x: str = "step",
) -> matplotlib.pyplot.Figure:
    """Plot training losses against the optimizer step.

    Parameters
    ----------
    history: pandas.DataFrame
        Training log with one row per step
    columns: Sequence[str], default=("loss",)
        Loss columns to draw, absent ones are skipped
    x: str, default="step"
        Column of the horizontal axis

    Returns
    -------
    Figure
        A matplotlib figure with one line per column, on a log scale when every
        value is positive
    """
    fig = matplotlib.pyplot.figure()
    ax = fig.add_subplot(
        111,
    )

    drawn = [c for c in columns if c in history.columns]
    for column in drawn:
        ax.plot(history[x], history[column], label=column)
    if drawn and len(history) and (history[drawn].to_numpy() > 0).all():
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel("loss")
    if drawn:
        ax.legend()

    return fig
