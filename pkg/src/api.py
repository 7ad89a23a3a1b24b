"""FastAPI server exposing the analytic oracles and emitted evaluation reports.

Endpoints:
- GET /                   - List all available endpoints
- GET /oracle/table1      - Choices of every idealized agent on the four box pairs
- POST /oracle/ellsberg   - Ambiguity-averse preference before and after a green/red swap
- GET /eval/baseline      - Risk-neutral choice map over the urn triangle
- GET /eval/mean-std      - Exact reward mean and std of every triangle composition
- POST /risk/solve-tabular - Free-energy value iteration on a small MDP
- GET /reports            - Report files under REPORTS_DIR
- GET /reports/{name}     - One JSON report
"""

import json
import logging
import threading
import tomllib
from pathlib import Path

from cachetools import TTLCache
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import REPORT_CACHE_MINUTES, REPORTS_DIR
from .constants import SECONDS_PER_MINUTE
from .evaluation import NOVEL_COLORS, RISKY_COLORS, mean_std_grids, risk_neutral_baseline_grid
from .oracles import AmbiguitySet, ellsberg_switch_test, table1_rows
from .render import grid_to_dict
from .risk_shaper import RiskMDP, solve_tabular
from .urns import Color, Palette

logger = logging.getLogger(__name__)


def _get_version() -> str:
    """Read version from pyproject.toml."""
    pyproject_path = Path(__file__).parent.parent / "pyproject.toml"
    with open(pyproject_path, "rb") as f:
        data = tomllib.load(f)
    return data["project"]["version"]


app = FastAPI(
    title="Risk and Ambiguity Meta-RL API",
    version=_get_version(),
)

# Parsed reports keyed by file name
_report_cache: TTLCache = TTLCache(maxsize=64, ttl=REPORT_CACHE_MINUTES * SECONDS_PER_MINUTE)
_report_cache_lock = threading.Lock()


class EllsbergRequest(BaseModel):
    priors: list[list[float]] = Field(min_length=1)


class SolveTabularRequest(BaseModel):
    transitions: list[list[list[float]]]
    rewards: list[list[float]]
    discount: float = 0.95
    beta: float = 0.0


def _triangle_colors(triangle: str) -> tuple[Color, Color, Color]:
    match triangle:
        case "risky":
            return RISKY_COLORS
        case "novel":
            return NOVEL_COLORS
    raise HTTPException(status_code=400, detail=f"triangle must be 'risky' or 'novel', got {triangle!r}")


def load_report(name: str) -> dict:
    """Read a JSON report from REPORTS_DIR, caching it for REPORT_CACHE_MINUTES."""
    path = (REPORTS_DIR / name).resolve()
    if not path.is_relative_to(REPORTS_DIR.resolve()) or path.suffix != ".json":
        raise HTTPException(status_code=400, detail=f"Invalid report name: {name}")

    with _report_cache_lock:
        if name in _report_cache:
            logger.debug(f"Returning cached report {name}")
            return _report_cache[name]

    if not path.exists():
        raise HTTPException(status_code=404, detail=f"Report not found: {name}")
    report = json.loads(path.read_text())

    with _report_cache_lock:
        _report_cache[name] = report
    return report


@app.get("/")
async def get_endpoints():
    """Return available API endpoints."""
    return {
        "message": "Welcome to the Risk and Ambiguity Meta-RL API",
        "endpoints": {
            "/": "This endpoint - lists all available endpoints",
            "/oracle/table1": "Choice of every idealized agent on box pairs a-d",
            "/oracle/ellsberg": "POST a set of priors; preference before and after swapping green/red rewards",
            "/eval/baseline": "Risk-neutral choice map (query: triangle, blue, yellow)",
            "/eval/mean-std": "Reward mean and std per composition (query: triangle, blue, yellow)",
            "/risk/solve-tabular": "POST an MDP; fixed-point V, Q and tilted transitions",
            "/reports": "JSON reports available under the reports directory",
            "/reports/{name}": "One JSON report",
        },
    }


@app.get("/oracle/table1")
async def get_table1():
    """Return the agent x case choice grid."""
    return {"rows": table1_rows()}


@app.post("/oracle/ellsberg")
async def post_ellsberg(request: EllsbergRequest):
    """Return the preference before and after swapping green and red rewards."""
    try:
        delta = AmbiguitySet(tuple(tuple(p) for p in request.priors))
        before, after = ellsberg_switch_test(delta)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return {"before": before.value, "after": after.value, "consistent": before == after}


@app.get("/eval/baseline")
async def get_baseline(triangle: str = "risky", blue: float = -1.0, yellow: float = 0.0):
    """Return the risk-neutral choice map."""
    grid = risk_neutral_baseline_grid(Palette(blue=blue, yellow=yellow), _triangle_colors(triangle))
    return grid_to_dict(grid)


@app.get("/eval/mean-std")
async def get_mean_std(triangle: str = "risky", blue: float = -1.0, yellow: float = 0.0):
    """Return the exact reward mean and std maps."""
    mean, std = mean_std_grids(Palette(blue=blue, yellow=yellow), _triangle_colors(triangle))
    return {"mean": grid_to_dict(mean), "std": grid_to_dict(std)}


@app.post("/risk/solve-tabular")
async def post_solve_tabular(request: SolveTabularRequest):
    """Solve the risk-sensitive Bellman fixed point of a tabular MDP."""
    try:
        mdp = RiskMDP.from_dict(request.model_dump())
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return solve_tabular(mdp).to_dict()


@app.get("/reports")
async def list_reports():
    """Return the JSON report files under REPORTS_DIR."""
    if not REPORTS_DIR.exists():
        return {"reports": []}
    return {"reports": sorted(str(p.relative_to(REPORTS_DIR)) for p in REPORTS_DIR.rglob("*.json"))}


@app.get("/reports/{name:path}")
async def get_report(name: str):
    """Return one JSON report."""
    return load_report(name)
