import numpy as np
from matplotlib.figure import Figure

from apps.evt.selectors import hitting_curve
from apps.evt.types import GumbelReport, HittingReport, ThetaReport
from apps.experiments.constants import PLOT_POINTS
from apps.limits.selectors import qq_points
from apps.limits.types import BirkhoffExperiment, BorelCantelliReport


def theta_figure(report: ThetaReport) -> Figure:
    figure = Figure(figsize=(6.4, 4.0))
    ax = figure.add_subplot()
    ax.plot(report.fibers, report.theta, ".", markersize=3, label="extrapolated")
    if report.closed_form is not None:
        ax.plot(report.fibers, report.closed_form, "_", markersize=6, label="closed form")
    ax.set_xlabel("fiber")
    ax.set_ylabel("theta")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="lower right")
    return figure


def gumbel_figure(report: GumbelReport) -> Figure:
    figure = Figure(figsize=(6.4, 4.0))
    ax = figure.add_subplot()
    N = [row.N for row in report.rows]
    ax.semilogx(N, [row.nu_value for row in report.rows], "o-", label="nu_0 non-exceedance")
    ax.semilogx(N, [row.mu_value for row in report.rows], "x", label="mu_0 non-exceedance")
    ax.axhline(report.target, color="k", linestyle="--", linewidth=0.8, label="exp(-int t theta)")
    ax.set_xlabel("N")
    ax.set_ylabel("probability")
    ax.legend(loc="best")
    return figure


def hitting_figure(report: HittingReport) -> Figure:
    u, empirical, limit = hitting_curve(report, points=PLOT_POINTS)
    figure = Figure(figsize=(6.4, 4.0))
    ax = figure.add_subplot()
    ax.semilogy(u, np.clip(empirical, 1e-6, None), label="empirical P(tau / N > u)")
    ax.semilogy(u, limit, "--", label="exponential law")
    for point in report.survival:
        ax.errorbar(point.steps / report.N, point.operator, yerr=3 * point.sigma, fmt="k.", capsize=2)
    ax.set_xlabel("u")
    ax.legend(loc="best")
    return figure


def qq_figure(experiment: BirkhoffExperiment) -> Figure:
    normal, sample = qq_points(experiment, points=PLOT_POINTS)
    figure = Figure(figsize=(4.8, 4.8))
    ax = figure.add_subplot()
    ax.plot(normal, sample, ".", markersize=3)
    ax.plot(normal, normal, "k--", linewidth=0.8)
    ax.set_xlabel("normal quantile")
    ax.set_ylabel("S_n / (Sigma sqrt n) quantile")
    return figure


def borel_cantelli_figure(report: BorelCantelliReport) -> Figure:
    figure = Figure(figsize=(6.4, 4.0))
    ax = figure.add_subplot()
    expected = [e for _, e, _ in report.checkpoints]
    ax.semilogx(expected, [r for _, _, r in report.checkpoints], "o-")
    ax.axhline(1.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("E_n")
    ax.set_ylabel("entries / E_n")
    return figure
