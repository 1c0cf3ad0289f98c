import pandas as pd
from fastapi import APIRouter, HTTPException

from app.schemas.schemas import ParetoPoint, ParetoRequest, RankRequest, RankResponse
from app.services.evaluation import pareto_frontier, rank_analysis

router = APIRouter(prefix="/evaluation", tags=["evaluation"])


@router.post("/ranks", response_model=RankResponse)
async def ranks(body: RankRequest):
    """`table` maps dataset → detector → metric, higher is better."""
    try:
        analysis = rank_analysis(pd.DataFrame.from_dict(body.table, orient="index"), body.alpha)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return RankResponse(
        mean_ranks={k: float(v) for k, v in analysis.mean_ranks.items()},
        friedman=analysis.friedman,
        p_value=analysis.p_value,
        critical_distance=analysis.critical_distance,
    )


@router.post("/pareto", response_model=list[ParetoPoint])
async def pareto(body: ParetoRequest):
    try:
        keep = pareto_frontier([(p.update_seconds, p.map) for p in body.points])
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    return [body.points[i] for i in keep]
