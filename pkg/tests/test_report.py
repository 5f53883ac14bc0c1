import doctest
import os
import tempfile
import unittest

import numpy
import pandas

import dcgnet
import dcgnet.report
from dcgnet import metrics, visualize
from dcgnet.network import DCGNet, NetworkConfig


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(dcgnet.report))
    return tests


def _evaluation() -> metrics.EvalReport:
    rng = numpy.random.default_rng(0)
    gt = [rng.normal(size=(12, 3)) * 100.0 for _ in range(2)]
    meshes = [rng.normal(size=(42, 3)) for _ in range(2)]
    return metrics.evaluate(["a", "b"], [j + 5.0 for j in gt], gt, meshes, meshes)


class TestReport(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        hierarchy = dcgnet.build_hierarchy(dcgnet.icosphere(1), levels=2, factor=4)
        cls.net = DCGNet(hierarchy, NetworkConfig(in_features=5, width=8, attention_features=4))
        cls.history = pandas.DataFrame(
            {"step": [1, 2, 3], "loss": [3.0, 2.0, 1.5], "vertex": [2.0, 1.5, 1.0]}
        )

    def test_sections(self):
        text = dcgnet.report_to_str(_evaluation(), self.net, self.history, split="val", with_figures=False)
        headings = [line for line in text.splitlines() if line.startswith("#")]
        self.assertEqual(
            headings,
            [
                "# SUMMARY OF EVALUATION",
                "# NETWORK",
                "## HIERARCHY",
                "## LEARNED ADJACENCY",
                "# TRAINING",
                "# PER-SAMPLE RESULTS",
            ],
        )
        self.assertIn("2 samples of the val split", text)
        self.assertIn("non-local block runs at level 2", text)
        self.assertNotIn("<svg", text)

    def test_figures(self):
        text = dcgnet.report_to_str(_evaluation(), self.net, self.history)
        # one heat map per distinct level size plus the loss curve
        self.assertEqual(text.count("<svg"), 4)

    def test_without_figures_or_network(self):
        text = dcgnet.report_to_str(_evaluation(), with_figures=False)
        self.assertNotIn("<svg", text)
        self.assertNotIn("# NETWORK", text)
        self.assertIn("| a ", text)

    def test_flat_network_without_adaptive_adjacency(self):
        net = DCGNet(
            self.net.hierarchy,
            NetworkConfig(
                in_features=5,
                width=8,
                attention_features=4,
                ushape=False,
                adaptive_adjacency=False,
                nonlocal_block=False,
            ),
        )
        text = dcgnet.report_to_str(_evaluation(), net, with_figures=False)
        self.assertIn("flat stack at level 0", text)
        self.assertIn("is disabled", text)
        self.assertNotIn("## LEARNED ADJACENCY", text)

    def test_markdown_file(self):
        with tempfile.TemporaryDirectory() as directory:
            file_name = os.path.join(directory, "report.md")
            dcgnet.report_to_md(file_name, _evaluation(), self.net, self.history)
            with open(file_name) as f:
                content = f.read()
        self.assertTrue(content.startswith("# SUMMARY OF EVALUATION"))
        self.assertIn('<clipPath id="dcgnet">', content)


class TestFigures(unittest.TestCase):
    def test_adjacency_heat_map(self):
        figure = visualize.plot_adjacency(numpy.eye(4) + 0.25, title="residual")
        self.assertEqual(figure.axes[0].get_title(), "residual")
        image = figure.axes[0].images[0]
        self.assertEqual(image.get_clim(), (-0.25, 0.25))
        with self.assertRaises(ValueError):
            visualize.plot_adjacency(numpy.zeros([2, 3]))

    def test_loss_curve(self):
        history = pandas.DataFrame({"step": [0, 1], "loss": [1.0, 0.5]})
        figure = visualize.plot_loss_curve(history, ["loss", "joint2d"])
        self.assertEqual(len(figure.axes[0].lines), 1)
        self.assertEqual(figure.axes[0].get_yscale(), "log")
        flat = visualize.plot_loss_curve(pandas.DataFrame({"step": [0], "loss": [0.0]}))
        self.assertEqual(flat.axes[0].get_yscale(), "linear")
