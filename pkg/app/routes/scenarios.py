from pathlib import Path

from fastapi import APIRouter, Depends, HTTPException, status

from app.dependencies import Settings, get_settings
from app.exceptions import ConfigParseError, ConfigValidationError, InNetworkError
from app.schemas import (
    CertificateReport,
    CertifyRequest,
    GraphNode,
    GraphRequest,
    GraphResponse,
    RunRequest,
    RunSummary,
)
from app.services.experiments import certify_estimates, export_graph, parse_config, run_scenario

router = APIRouter(prefix="/scenarios", tags=["Scenarios"])


def _http_error(e: InNetworkError) -> HTTPException:
    if isinstance(e, (ConfigParseError, ConfigValidationError)):
        return HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_CONTENT, detail=str(e))
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


@router.post("/run", response_model=RunSummary)
def run(request: RunRequest, settings: Settings = Depends(get_settings)):
    """
    Run one scenario end to end.

    The config text uses the same `key = value` grammar as the CLI config
    files. Results land in `out_dir` when given, otherwise under the
    results directory in a folder named after the scenario and seed.
    """
    try:
        config = parse_config(request.config_text)
        seed = config.seed if request.seed is None else request.seed
        out_dir = request.out_dir or str(Path(settings.results_dir) / f"{config.scenario}_seed{seed}")
        return run_scenario(config, seed=seed, out_dir=out_dir)
    except InNetworkError as e:
        raise _http_error(e)


@router.post("/graph", response_model=GraphResponse)
def graph(request: GraphRequest, settings: Settings = Depends(get_settings)):
    """Generate the communication graph of a scenario (nodes with positions, undirected edges)"""
    try:
        config = parse_config(request.config_text)
        out_dir = Path(settings.results_dir) / f"{config.scenario}_seed{config.seed}"
        g, positions = export_graph(config, out_dir=out_dir)
    except InNetworkError as e:
        raise _http_error(e)

    return GraphResponse(
        n_nodes=g.n_nodes,
        nodes=[GraphNode(id=n, x=float(positions[n, 0]), y=float(positions[n, 1])) for n in range(g.n_nodes)],
        edges=list(g.edges),
    )


@router.post("/certify", response_model=CertificateReport)
def certify(request: CertifyRequest):
    """Optimality certificate for estimates saved by a previous run"""
    try:
        config = parse_config(request.config_text)
        return certify_estimates(config, request.estimates_dir)
    except InNetworkError as e:
        raise _http_error(e)
