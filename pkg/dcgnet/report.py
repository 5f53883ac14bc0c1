import io
import re
from typing import Optional

import matplotlib.pyplot
import numpy
import pandas

import dcgnet.visualize

from dcgnet.metrics import ALIGNMENT, EvalReport
from dcgnet.network import DCGNet


def _fig_to_svg(fig: matplotlib.pyplot.Figure) -> str:
    imgdata = io.StringIO()
    fig.savefig(imgdata, format="svg")
    matplotlib.pyplot.close(fig)
    imgdata.seek(0)

    svg = imgdata.getvalue()
    svg = re.sub("<dc:date>(.*?)</dc:date>", "<dc:date></dc:date>", svg)
    svg = re.sub(r"url\(#(.*?)\)", "url(#dcgnet)", svg)
    svg = re.sub('<clipPath id="(.*?)">', '<clipPath id="dcgnet">', svg)

    return svg


def report_to_str(
    report: EvalReport,
    net: Optional[DCGNet] = None,
    history: Optional[pandas.DataFrame] = None,
    split: str = "test",
    with_figures: bool = True,
) -> str:
    """
    Generates a report on an evaluation

    Parameters
    ----------
    report: EvalReport
        The evaluation to be reported on
    net: DCGNet, optional
        The evaluated network, adds its hierarchy and learned adjacencies
    history: pandas.DataFrame, optional
        Training log with "step" and "loss" columns, adds the loss curve
    split: str, default="test"
        Name of the evaluated split
    with_figures: bool, default=True
        Whether to include figures in the report

    Returns
    -------
    str
        A full report

    Examples
    --------
    >>> import numpy
    >>> from dcgnet import metrics, report
    >>> gt = numpy.eye(3) * 100.0
    >>> result = metrics.evaluate(["a"], [gt + 10.0], [gt], [gt], [gt])
    >>> text = report.report_to_str(result, with_figures=False)
    >>> text.splitlines()[0]
    '# SUMMARY OF EVALUATION'
    """
    report_string = __generate_summary(report, split) + "\n"
    if net is not None:
        report_string += __generate_network_information(net, with_figures) + "\n"
    if history is not None and len(history):
        report_string += __generate_training_information(history, with_figures) + "\n"
    report_string += __generate_per_sample_results(report) + "\n"

    return report_string


def print_report(report: EvalReport, split: str = "test") -> None:
    """
    Prints a report on an evaluation

    Parameters
    ----------
    report: EvalReport
        The evaluation to be reported on
    split: str, default="test"
        Name of the evaluated split

    Returns
    -------
    None
    """
    print(report_to_str(report, split=split, with_figures=False))


def report_to_md(
    file_name: str,
    report: EvalReport,
    net: Optional[DCGNet] = None,
    history: Optional[pandas.DataFrame] = None,
    split: str = "test",
    with_figures: bool = True,
) -> None:
    """
    Writes a report in Markdown format

    Parameters
    ----------
    file_name: str
        The name of the file
    report: EvalReport
        The evaluation to be reported on
    net: DCGNet, optional
        The evaluated network
    history: pandas.DataFrame, optional
        Training log
    split: str, default="test"
        Name of the evaluated split
    with_figures: bool, default=True
        Whether to include figures in the report

    Returns
    -------
    None
    """
    with open(file_name, "w") as f:
        f.write(report_to_str(report, net, history, split, with_figures=with_figures))


def __generate_summary(report: EvalReport, split: str) -> str:
    summary = "# SUMMARY OF EVALUATION\n"
    summary += (
        "- "
        + str(len(report.per_sample))
        + " samples of the "
        + split
        + " split were evaluated.\n"
    )
    summary += (
        "- The mean per-joint position error is "
        + format(report.mpjpe, ".2f")
        + " mm, and "
        + format(report.reconst_error, ".2f")
        + " mm after alignment.\n"
    )
    summary += "- Alignment is a " + ALIGNMENT + ".\n"

    rows = [
        "MPJPE (mm)",
        "Reconstruction error (mm)",
        "PCK @ " + format(report.pck_threshold, "g") + " mm",
        "AUC",
        "Vertex error (mm)",
    ]
    data = [
        [report.mpjpe],
        [report.reconst_error],
        [report.pck],
        [report.auc],
        [report.vertex_error],
    ]
    summary += "\n" + pandas.DataFrame(data, index=rows, columns=["Value"]).to_markdown()

    return summary


def __generate_network_information(net: DCGNet, with_figures: bool = True) -> str:
    information = "# NETWORK\n"
    information += "- The network has " + str(net.parameter_count()) + " trainable values"
    if net.config.ushape:
        information += " and a U-shaped hierarchy of " + str(net.levels + 1) + " levels.\n"
    else:
        information += " in a flat stack at level 0.\n"
    information += "- The non-local block " + (
        "runs at level " + str(net.nonlocal_level) + ".\n"
        if net.nonlocal_block is not None
        else "is disabled.\n"
    )

    information += "## HIERARCHY\n"
    rows = []
    data = []
    for level, mesh in enumerate(net.hierarchy.levels):
        rows.append("Level_" + "{0:02d}".format(level))
        data.append([mesh.number_of_vertices, mesh.number_of_faces, level <= net.levels])
    information += (
        pandas.DataFrame(data, index=rows, columns=["Nodes", "Faces", "Used"]).to_markdown()
        + "\n"
    )

    residuals = net.learned_adjacencies()
    if residuals:
        information += "## LEARNED ADJACENCY\n"
        rows = []
        data = []
        for name, matrix in residuals.items():
            off = matrix.copy()
            numpy.fill_diagonal(off, 0.0)
            rows.append(name)
            data.append(
                [
                    len(matrix),
                    float(numpy.abs(matrix.diagonal() - 1.0).max()),
                    float(numpy.abs(off).max()),
                ]
            )
        information += (
            pandas.DataFrame(
                data,
                index=rows,
                columns=["Nodes", "Max diagonal change", "Max off-diagonal"],
            ).to_markdown()
            + "\n"
        )
        if with_figures:
            shown = set()
            for name, matrix in residuals.items():
                if len(matrix) in shown:
                    continue
                shown.add(len(matrix))
                information += (
                    _fig_to_svg(dcgnet.visualize.plot_adjacency(matrix, title=name)) + "\n"
                )

    return information


def __generate_training_information(history: pandas.DataFrame, with_figures: bool = True) -> str:
    information = "# TRAINING\n"
    information += (
        "- "
        + str(len(history))
        + " optimizer steps were logged, ending with a loss of "
        + format(float(history["loss"].iloc[-1]), ".6f")
        + ".\n"
    )
    if with_figures:
        columns = [c for c in ("loss", "vertex", "joint3d", "joint2d") if c in history.columns]
        information += (
            _fig_to_svg(dcgnet.visualize.plot_loss_curve(history, columns)) + "\n"
        )

    return information


def __generate_per_sample_results(report: EvalReport) -> str:
    results = "# PER-SAMPLE RESULTS\n"
    results += report.per_sample.to_markdown(index=False) + "\n"

    return results
