"""Command-line entry point: run / certify / graph."""
import logging
import sys
from pathlib import Path

import click

from app.config import LOG_LEVEL
from app.exceptions import InNetworkError
from app.services.experiments import certify_estimates, export_graph, load_config, run_scenario

logger = logging.getLogger(__name__)


def _fail(e: InNetworkError):
    click.echo(f"error: {e}", err=True)
    sys.exit(e.exit_code)


@click.group()
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Logging level")
def main(log_level: str):
    """In-network sparsity-regularized rank minimization experiments."""
    logging.basicConfig(
        level=log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Scenario config file (key = value)")
@click.option("--seed", type=int, default=None, help="Override the config seed")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (default: out_path from the config)")
def run(config_path: str, seed: int | None, out_dir: str | None):
    """Run a scenario; exit 0 on convergence, 2 when max_rounds is reached."""
    try:
        config = load_config(config_path)
        summary = run_scenario(config, seed=seed, out_dir=out_dir)
    except InNetworkError as e:
        _fail(e)

    click.echo(f"{summary.scenario}: {'converged' if summary.converged else 'not converged'} "
               f"after {summary.rounds} rounds")
    click.echo(f"  consensus Q/A : {summary.final_consensus_q:.3e} / {summary.final_consensus_a:.3e}")
    click.echo(f"  rel err X/A   : {summary.rel_err_x:.3e} / {summary.rel_err_a:.3e}")
    click.echo(f"  cost dist/cent: {summary.cost_distributed:.6e} / {summary.cost_centralized:.6e}")
    click.echo(f"  certificate   : {'met' if summary.certificate.condition_met else 'not met'}")
    if summary.auc is not None:
        click.echo(f"  ROC AUC       : {summary.auc:.4f}")
    sys.exit(summary.exit_status)


@main.command()
@click.option("--estimates", "estimates_dir", required=True, type=click.Path(),
              help="Directory holding l_hat.csv / q_hat.csv / a_hat.csv")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def certify(estimates_dir: str, config_path: str):
    """Check the global-optimality certificate for saved estimates."""
    try:
        report = certify_estimates(load_config(config_path), estimates_dir)
    except InNetworkError as e:
        _fail(e)

    click.echo(f"spectral residual {report.spectral_residual:.6e} vs lambda_* {report.lambda_star:.6e}: "
               f"{'met' if report.condition_met else 'not met'}")
    click.echo(f"stationarity residuals: {report.res_eq13:.3e} {report.res_eq14:.3e} {report.res_eq15:.3e}")
    click.echo(f"written to {Path(estimates_dir) / 'certificate.csv'}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def graph(config_path: str, out_dir: str | None):
    """Generate the communication graph and write nodes.csv / edges.csv."""
    try:
        config = load_config(config_path)
        g, _ = export_graph(config, out_dir=out_dir)
    except InNetworkError as e:
        _fail(e)
    click.echo(f"{g.n_nodes} nodes, {len(g.edges)} edges -> {out_dir or config.out_path}")


if __name__ == "__main__":
    main()
